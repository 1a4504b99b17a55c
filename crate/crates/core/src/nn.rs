//! Convolution, batch normalization, pooling and classifier layers.

use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{BackwardOp, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// `(k - 1) / 2` zeros on every side.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeometry {
    fn cols_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols_len(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Output spatial size of a convolution.
pub fn conv_output_size(n: usize, k: usize, stride: usize, padding: Padding) -> Option<usize> {
    let pad_total = match padding {
        Padding::Same => k - 1,
        Padding::Valid => 0,
    };
    (n + pad_total).checked_sub(k).map(|v| v / stride + 1)
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let hw_out = g.cols_len();
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = ((c * g.k + ki) * g.k + kj) * hw_out;
                for oi in 0..g.h_out {
                    let i = (oi * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut cols[row + oi * g.w_out..row + (oi + 1) * g.w_out];
                    if i < 0 || i >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + i as usize) * g.w..(c * g.h + i as usize + 1) * g.w];
                    for (oj, d) in dst.iter_mut().enumerate() {
                        let j = (oj * g.stride + kj) as isize - g.pad as isize;
                        *d = if j < 0 || j >= g.w as isize {
                            T::zero()
                        } else {
                            src[j as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, x: &mut [T]) {
    let hw_out = g.cols_len();
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = ((c * g.k + ki) * g.k + kj) * hw_out;
                for oi in 0..g.h_out {
                    let i = (oi * g.stride + ki) as isize - g.pad as isize;
                    if i < 0 || i >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + i as usize) * g.w;
                    for oj in 0..g.w_out {
                        let j = (oj * g.stride + kj) as isize - g.pad as isize;
                        if j >= 0 && j < g.w as isize {
                            x[base + j as usize] += cols[row + oi * g.w_out + oj];
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dBackward<T> {
    x: Rc<Tensor<T>>,
    weight: Rc<Tensor<T>>,
    geom: ConvGeometry,
    c_out: usize,
    has_bias: bool,
}

impl<T: Scalar> BackwardOp<T> for Conv2dBackward<T> {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let geom = &self.geom;
        let n = self.x.shape()[0];
        let (rows, len) = (geom.cols_rows(), geom.cols_len());
        let in_plane = geom.c_in * geom.h * geom.w;
        let out_plane = self.c_out * len;
        let mut cols = vec![T::zero(); rows * len];
        let mut gw = vec![T::zero(); self.c_out * rows];
        let mut gx = if needs[0] {
            Some(vec![T::zero(); n * in_plane])
        } else {
            None
        };
        let mut gcols = vec![T::zero(); rows * len];
        for s in 0..n {
            let gs = &g.data()[s * out_plane..(s + 1) * out_plane];
            if needs[1] {
                im2col(&self.x.data()[s * in_plane..(s + 1) * in_plane], geom, &mut cols);
                T::gemm(self.c_out, len, rows, gs, false, &cols, true, &mut gw, true);
            }
            if let Some(gx) = gx.as_mut() {
                T::gemm(
                    rows,
                    self.c_out,
                    len,
                    self.weight.data(),
                    true,
                    gs,
                    false,
                    &mut gcols,
                    false,
                );
                col2im(&gcols, geom, &mut gx[s * in_plane..(s + 1) * in_plane]);
            }
        }
        let mut out = vec![
            gx.map(|d| Tensor::new(self.x.shape().to_vec(), d)).transpose()?,
            if needs[1] {
                Some(Tensor::new(self.weight.shape().to_vec(), gw)?)
            } else {
                None
            },
        ];
        if self.has_bias {
            let mut gb = vec![T::zero(); self.c_out];
            for (i, &v) in g.data().iter().enumerate() {
                gb[(i / len) % self.c_out] += v;
            }
            out.push(Some(Tensor::new(vec![self.c_out], gb)?));
        }
        Ok(out)
    }
}

/// Cross-correlation of `[N, C_in, H, W]` with `[C_out, C_in, k, k]` weights.
pub fn conv2d<T: Scalar>(
    graph: &Graph<T>,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: Padding,
) -> Result<Var> {
    let xv = graph.value(x);
    let wv = graph.value(weight);
    let (n, c_in, h, w) = xv.dims4()?;
    let (c_out, k) = match wv.shape() {
        [co, ci, kh, kw] if *ci == c_in && kh == kw => (*co, *kh),
        s => {
            return Err(Error::shape(
                "conv2d",
                format!("weight {s:?} does not fit input with {c_in} channels"),
            ));
        }
    };
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be >= 1"));
    }
    if let Some(b) = bias {
        if graph.value(b).shape() != [c_out] {
            return Err(Error::shape("conv2d", format!("bias must have shape [{c_out}]")));
        }
    }
    let pad = match padding {
        Padding::Same => (k - 1) / 2,
        Padding::Valid => 0,
    };
    let (h_out, w_out) = match (
        conv_output_size(h, k, stride, padding),
        conv_output_size(w, k, stride, padding),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::shape("conv2d", format!("kernel {k} larger than input {h}x{w}"))),
    };
    let geom = ConvGeometry {
        c_in,
        h,
        w,
        k,
        stride,
        pad,
        h_out,
        w_out,
    };
    let (rows, len) = (geom.cols_rows(), geom.cols_len());
    let in_plane = c_in * h * w;
    let mut out = vec![T::zero(); n * c_out * len];
    let mut cols = vec![T::zero(); rows * len];
    for s in 0..n {
        im2col(&xv.data()[s * in_plane..(s + 1) * in_plane], &geom, &mut cols);
        T::gemm(
            c_out,
            rows,
            len,
            wv.data(),
            false,
            &cols,
            false,
            &mut out[s * c_out * len..(s + 1) * c_out * len],
            false,
        );
    }
    if let Some(b) = bias {
        let bv = graph.value(b);
        for (i, v) in out.iter_mut().enumerate() {
            *v += bv.data()[(i / len) % c_out];
        }
    }
    let out = Tensor::new(vec![n, c_out, h_out, w_out], out)?;
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    graph.custom(
        &inputs,
        out,
        Box::new(Conv2dBackward {
            x: xv,
            weight: wv,
            geom,
            c_out,
            has_bias: bias.is_some(),
        }),
    )
}

/// Running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(vec![channels]),
            var: Tensor::full(vec![channels], T::one()),
        }
    }
}

struct BatchNormBackward<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    gamma: Rc<Tensor<T>>,
    train: bool,
}

impl<T: Scalar> BackwardOp<T> for BatchNormBackward<T> {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(&self, g: &Tensor<T>, _needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let shape = self.xhat.shape();
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let count = T::cast((n * inner) as f64);
        let mut ggamma = vec![T::zero(); c];
        let mut gbeta = vec![T::zero(); c];
        for (i, (&gv, &xh)) in g.data().iter().zip(self.xhat.data()).enumerate() {
            let ch = (i / inner) % c;
            ggamma[ch] += gv * xh;
            gbeta[ch] += gv;
        }
        let mut gx = g.clone();
        for (i, (o, &xh)) in gx.data_mut().iter_mut().zip(self.xhat.data()).enumerate() {
            let ch = (i / inner) % c;
            let scale = self.gamma.data()[ch] * self.inv_std[ch];
            *o = if self.train {
                scale * (*o - gbeta[ch] / count - xh * ggamma[ch] / count)
            } else {
                scale * *o
            };
        }
        Ok(vec![
            Some(gx),
            Some(Tensor::new(vec![c], ggamma)?),
            Some(Tensor::new(vec![c], gbeta)?),
        ])
    }
}

/// Per-channel batch normalization of `[N, C]` or `[N, C, ...]` input.
///
/// In train mode the batch statistics normalize the input and update
/// `running` with momentum [`BN_MOMENTUM`] (unbiased variance); eval mode
/// normalizes with `running`.
pub fn batch_norm<T: Scalar>(
    graph: &Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    running: &mut RunningStats<T>,
    mode: Mode,
) -> Result<Var> {
    let xv = graph.value(x);
    let (gv, bv) = (graph.value(gamma), graph.value(beta));
    let shape = xv.shape();
    if shape.len() < 2 || gv.shape() != [shape[1]] || bv.shape() != [shape[1]] || running.mean.shape() != [shape[1]] {
        return Err(Error::shape(
            "batch_norm",
            format!("input {shape:?} does not match {} channels", gv.len()),
        ));
    }
    let (n, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let count = n * inner;
    let eps = T::cast(BN_EPSILON);

    let (mean, var) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::Contract(
                    "batch norm in train mode needs a batch of at least 2".into(),
                ));
            }
            let mut mean = vec![T::zero(); c];
            for (i, &v) in xv.data().iter().enumerate() {
                mean[(i / inner) % c] += v;
            }
            let cnt = T::cast(count as f64);
            mean.iter_mut().for_each(|m| *m /= cnt);
            let mut var = vec![T::zero(); c];
            for (i, &v) in xv.data().iter().enumerate() {
                let ch = (i / inner) % c;
                let d = v - mean[ch];
                var[ch] += d * d;
            }
            var.iter_mut().for_each(|v| *v /= cnt);

            let mom = T::cast(BN_MOMENTUM);
            let unbias = T::cast(count as f64 / (count as f64 - 1.0).max(1.0));
            for ch in 0..c {
                let rm = &mut running.mean.data_mut()[ch];
                *rm = mom * *rm + (T::one() - mom) * mean[ch];
                let rv = &mut running.var.data_mut()[ch];
                *rv = mom * *rv + (T::one() - mom) * var[ch] * unbias;
            }
            (mean, var)
        }
        Mode::Eval => (running.mean.data().to_vec(), running.var.data().to_vec()),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = (*xv).clone();
    for (i, v) in xhat.data_mut().iter_mut().enumerate() {
        let ch = (i / inner) % c;
        *v = (*v - mean[ch]) * inv_std[ch];
    }
    let mut out = xhat.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let ch = (i / inner) % c;
        *v = gv.data()[ch] * *v + bv.data()[ch];
    }
    graph.custom(
        &[x, gamma, beta],
        out,
        Box::new(BatchNormBackward {
            xhat,
            inv_std,
            gamma: gv,
            train: mode == Mode::Train,
        }),
    )
}

struct GapBackward {
    shape: Vec<usize>,
}

impl<T: Scalar> BackwardOp<T> for GapBackward {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, g: &Tensor<T>, _needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let hw = self.shape[2] * self.shape[3];
        let scale = T::cast(1.0 / hw as f64);
        let data = g
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v * scale, hw))
            .collect();
        Ok(vec![Some(Tensor::new(self.shape.clone(), data)?)])
    }
}

/// `[N, C, H, W] -> [N, C]` spatial mean.
pub fn global_avg_pool<T: Scalar>(graph: &Graph<T>, x: Var) -> Result<Var> {
    let xv = graph.value(x);
    let (n, c, h, w) = xv.dims4()?;
    if h == 0 || w == 0 {
        return Err(Error::shape("global_avg_pool", "empty spatial extent"));
    }
    let hw = T::cast((h * w) as f64);
    let data = xv
        .data()
        .chunks(h * w)
        .map(|p| p.iter().copied().sum::<T>() / hw)
        .collect();
    let out = Tensor::new(vec![n, c], data)?;
    graph.custom(
        &[x],
        out,
        Box::new(GapBackward {
            shape: xv.shape().to_vec(),
        }),
    )
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    let k = logits.shape()[1];
    let correct = logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    correct as f64 / labels.len().max(1) as f64
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn kaiming<T: Scalar>(shape: Vec<usize>, fan_in: usize, gain: f64, rng: &mut impl Rng) -> Tensor<T> {
    let std = (gain / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::cast(normal.sample(rng))).collect();
    Tensor::new(shape, data).expect("consistent shape")
}

/// Convolution layer with parameters registered in a store.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: Padding,
    pub kernel: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::config(format!("{name}.kernel"), "kernel size must be odd"));
        }
        let fan_in = c_in * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            kaiming(vec![c_out, c_in, kernel, kernel], fan_in, 2.0, rng),
            ParamKind::Weight,
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(vec![c_out]), ParamKind::Bias)?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
            kernel,
            c_in,
            c_out,
        })
    }

    pub fn forward<T: Scalar>(&self, graph: &Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = graph.param(store, self.weight)?;
        let b = self.bias.map(|b| graph.param(store, b)).transpose()?;
        conv2d(graph, x, w, b, self.stride, self.padding)
    }
}

/// Batch-norm layer: affine parameters in the store, running stats owned here.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running: RunningStats<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            name: name.to_string(),
            gamma: store.add(
                format!("{name}.gamma"),
                Tensor::full(vec![channels], T::one()),
                ParamKind::NormAffine,
            )?,
            beta: store.add(
                format!("{name}.beta"),
                Tensor::zeros(vec![channels]),
                ParamKind::NormAffine,
            )?,
            running: RunningStats::new(channels),
        })
    }

    pub fn forward(&mut self, graph: &Graph<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let g = graph.param(store, self.gamma)?;
        let b = graph.param(store, self.beta)?;
        batch_norm(graph, x, g, b, &mut self.running, mode)
    }
}

/// Fully connected layer `xW + b` with `W: [D, K]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Dense {
            weight: store.add(
                format!("{name}.weight"),
                kaiming(vec![inputs, outputs], inputs, 1.0, rng),
                ParamKind::Weight,
            )?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![outputs]), ParamKind::Bias)?,
        })
    }

    pub fn forward<T: Scalar>(&self, graph: &Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = graph.param(store, self.weight)?;
        let b = graph.param(store, self.bias)?;
        let xw = graph.matmul(x, w)?;
        graph.add_bias(xw, b)
    }
}

/// Classifier head: logits, mean cross-entropy loss node and batch accuracy.
pub fn dense_softmax_xent<T: Scalar>(
    graph: &Graph<T>,
    store: &ParamStore<T>,
    dense: &Dense,
    x: Var,
    labels: &[usize],
) -> Result<(Var, Var, f64)> {
    let logits = dense.forward(graph, store, x)?;
    let loss = graph.softmax_cross_entropy(logits, labels)?;
    let acc = accuracy(&graph.value(logits), labels);
    Ok((logits, loss, acc))
}
