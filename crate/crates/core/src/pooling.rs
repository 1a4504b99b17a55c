//! Frequency-domain downsampling layers: spectral pooling and DiffStride.
//!
//! Spectral pooling keeps a fixed `h x w` window of Hartley coefficients
//! around DC. DiffStride multiplies the centered Fourier spectrum by a smooth
//! separable box whose half-width `N / (2S)` depends on a learnable stride
//! `S`, crops to `min(N, round(N/S + 2R))` and transforms back. The crop
//! extent is computed from detached stride values, so the stride gradient
//! flows only through the mask values on its ramps.

use std::rc::Rc;

use crate::autodiff::{BackwardOp, Graph, Var};
use crate::error::{Error, Result};
use crate::spectral::{
    center_crop, center_crop_spectrum, dft2, dht2, idft2, idht2, zero_pad, zero_pad_spectrum, ComplexSpectrum,
};
use crate::tensor::{Scalar, Tensor};

/// Substitute for a zero smoothness factor in the mask formula.
pub const SMOOTHNESS_FLOOR: f64 = 1e-6;

/// Gap kept below the upper stride bound `N` by [`project_strides`].
pub const STRIDE_MARGIN: f64 = 1e-3;

/// Spectral pooling without gradient tracking: `idht2(crop(dht2(x), h, w))`.
pub fn spectral_pool_forward<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    idht2(&center_crop(&dht2(x)?, h, w)?)
}

struct SpectralPoolBackward {
    in_h: usize,
    in_w: usize,
}

impl<T: Scalar> BackwardOp<T> for SpectralPoolBackward {
    fn name(&self) -> &'static str {
        "spectral_pool"
    }

    fn backward(&self, g: &Tensor<T>, _needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        // Transpose of idht2 . crop . dht2 is idht2 . pad . dht2.
        let gx = idht2(&zero_pad(&dht2(g)?, self.in_h, self.in_w)?)?;
        Ok(vec![Some(gx)])
    }
}

/// Differentiable spectral pooling of `[N, C, H, W]` activations to `[N, C, h, w]`.
pub fn spectral_pool<T: Scalar>(graph: &Graph<T>, x: Var, h: usize, w: usize) -> Result<Var> {
    let xv = graph.value(x);
    let (_, _, in_h, in_w) = xv.dims4()?;
    let out = spectral_pool_forward(&xv, h, w)?;
    graph.custom(&[x], out, Box::new(SpectralPoolBackward { in_h, in_w }))
}

/// Output size of a DiffStride layer along one axis: `min(n, round(n/s + 2r))`
/// with halves rounded away from zero.
pub fn output_size(n: usize, stride: f64, smoothness: f64) -> usize {
    let size = (n as f64 / stride + 2.0 * smoothness).round();
    (size.max(1.0) as usize).min(n)
}

/// Stride values and smoothness of one DiffStride layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StridePair {
    pub s_h: f64,
    pub s_w: f64,
    pub smoothness: f64,
}

impl StridePair {
    pub fn new(s_h: f64, s_w: f64, smoothness: f64) -> Self {
        StridePair { s_h, s_w, smoothness }
    }

    pub fn output_shape(&self, h: usize, w: usize) -> (usize, usize) {
        (
            output_size(h, self.s_h, self.smoothness),
            output_size(w, self.s_w, self.smoothness),
        )
    }
}

fn project_axis(s: f64, n: usize) -> f64 {
    let upper = (n as f64 - STRIDE_MARGIN).max(1.0);
    if s.is_nan() {
        1.0
    } else {
        s.clamp(1.0, upper)
    }
}

/// Clamps strides into `[1, N - 1e-3]` per axis. Idempotent.
pub fn project_strides(pair: StridePair, h: usize, w: usize) -> StridePair {
    StridePair {
        s_h: project_axis(pair.s_h, h),
        s_w: project_axis(pair.s_w, w),
        smoothness: pair.smoothness,
    }
}

fn check_stride(s: f64, n: usize, axis: &str) -> Result<()> {
    // S must lie in [1, N); a single-pixel axis only admits S = 1.
    let ok = s.is_finite() && s >= 1.0 && (s < n as f64 || s == 1.0);
    if ok {
        Ok(())
    } else {
        Err(Error::Contract(format!("stride S_{axis} = {s} outside [1, {n})")))
    }
}

/// One separable factor of the DiffStride mask, in centered order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskAxis {
    /// `m(k)` for each centered position.
    pub values: Vec<f64>,
    /// `dm/dS` for each centered position; nonzero only on the ramp and,
    /// at half weight, on its two end points.
    pub dvalues: Vec<f64>,
}

impl MaskAxis {
    /// `m(k) = clamp((N/(2S) + R - |k|) / R, 0, 1)` with `R` floored at
    /// [`SMOOTHNESS_FLOOR`].
    ///
    /// A bin sitting exactly on an end point of the ramp gets the mean of the
    /// two one-sided derivatives, which is what a central difference sees
    /// there. Without it an integer `N/(2S)` with an integer `R` leaves no
    /// bin strictly inside the ramp and the stride could never move. A hard
    /// box (`R = 0`) keeps zero derivative at its edge.
    pub fn new(stride: f64, n: usize, smoothness: f64) -> Self {
        let r = smoothness.max(SMOOTHNESS_FLOOR);
        let half = n as f64 / (2.0 * stride);
        let slope = -(n as f64) / (2.0 * stride * stride * r);
        let mut values = Vec::with_capacity(n);
        let mut dvalues = Vec::with_capacity(n);
        for p in 0..n {
            let k = (p as f64 - (n / 2) as f64).abs();
            // Written so that |k| == N/(2S) lands exactly on the plateau value 1.
            let raw = (half - k) / r + 1.0;
            let edge = if smoothness > 0.0 { 0.5 * slope } else { 0.0 };
            if raw >= 1.0 {
                values.push(1.0);
                dvalues.push(if raw == 1.0 { edge } else { 0.0 });
            } else if raw <= 0.0 {
                values.push(0.0);
                dvalues.push(if raw == 0.0 { edge } else { 0.0 });
            } else {
                values.push(raw);
                dvalues.push(slope);
            }
        }
        MaskAxis { values, dvalues }
    }

    /// Centered positions where `0 < m < 1`.
    pub fn ramp(&self) -> Vec<usize> {
        (0..self.values.len())
            .filter(|&i| self.values[i] > 0.0 && self.values[i] < 1.0)
            .collect()
    }
}

/// Separable DiffStride mask `m_h(u) * m_w(v)` plus the detached crop size.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub rows: MaskAxis,
    pub cols: MaskAxis,
    pub crop: (usize, usize),
}

impl MaskSpec {
    pub fn value(&self, u: usize, v: usize) -> f64 {
        self.rows.values[u] * self.cols.values[v]
    }

    /// Dense `H x W` mask in centered layout.
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows.values.len() * self.cols.values.len());
        for &a in &self.rows.values {
            out.extend(self.cols.values.iter().map(|&b| a * b));
        }
        out
    }

    /// Positions `(u, v)` where the mask is strictly between 0 and 1.
    pub fn ramp_region(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, &a) in self.rows.values.iter().enumerate() {
            for (v, &b) in self.cols.values.iter().enumerate() {
                let m = a * b;
                if m > 0.0 && m < 1.0 {
                    out.push((u, v));
                }
            }
        }
        out
    }
}

/// Builds the DiffStride mask for an `h x w` input.
pub fn build_mask(s_h: f64, s_w: f64, h: usize, w: usize, smoothness: f64) -> Result<MaskSpec> {
    check_stride(s_h, h, "h")?;
    check_stride(s_w, w, "w")?;
    if !(smoothness >= 0.0 && smoothness.is_finite()) {
        return Err(Error::Contract(format!(
            "smoothness factor R = {smoothness} must be >= 0"
        )));
    }
    Ok(MaskSpec {
        rows: MaskAxis::new(s_h, h, smoothness),
        cols: MaskAxis::new(s_w, w, smoothness),
        crop: (output_size(h, s_h, smoothness), output_size(w, s_w, smoothness)),
    })
}

/// Values retained from a DiffStride forward pass for the backward pass.
pub struct DiffStrideCache<T> {
    spectrum: ComplexSpectrum<T>,
    mask: MaskSpec,
    mask_values: Vec<T>,
}

impl<T: Scalar> DiffStrideCache<T> {
    pub fn mask(&self) -> &MaskSpec {
        &self.mask
    }

    fn input_dims(&self) -> (usize, usize) {
        let (_, h, w) = self.spectrum.plane_dims();
        (h, w)
    }

    /// Gradient with respect to the masked spectrum, `pad(dft2(upstream))`.
    fn spectrum_grad(&self, upstream: &Tensor<T>) -> Result<ComplexSpectrum<T>> {
        let expected = {
            let mut s = self.spectrum.shape().to_vec();
            let n = s.len();
            s[n - 2] = self.mask.crop.0;
            s[n - 1] = self.mask.crop.1;
            s
        };
        if upstream.shape() != expected.as_slice() {
            return Err(Error::shape(
                "diffstride backward",
                format!(
                    "upstream gradient {:?} does not match output {expected:?}",
                    upstream.shape()
                ),
            ));
        }
        let (h, w) = self.input_dims();
        zero_pad_spectrum(&dft2(upstream)?, h, w)
    }

    /// `dL/dx` given `dL/dx~`.
    pub fn input_gradient(&self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let mut gy = self.spectrum_grad(upstream)?;
        apply_mask(&mut gy, &self.mask_values);
        idft2(&gy)
    }

    /// `(dL/dS_h, dL/dS_w)` given `dL/dx~`.
    pub fn stride_gradient(&self, upstream: &Tensor<T>) -> Result<(T, T)> {
        let gy = self.spectrum_grad(upstream)?;
        Ok(self.stride_gradient_from_spectrum(&gy))
    }

    fn stride_gradient_from_spectrum(&self, gy: &ComplexSpectrum<T>) -> (T, T) {
        let (h, w) = self.input_dims();
        // dL/dmask[u, v] = sum over planes of Re(y * conj(G)).
        let mut gmask = vec![T::zero(); h * w];
        for (plane_y, plane_g) in self.spectrum.data().chunks(h * w).zip(gy.data().chunks(h * w)) {
            for ((acc, y), g) in gmask.iter_mut().zip(plane_y).zip(plane_g) {
                *acc += y.re * g.re + y.im * g.im;
            }
        }
        let (rows, cols) = (&self.mask.rows, &self.mask.cols);
        let (mut ds_h, mut ds_w) = (T::zero(), T::zero());
        for u in 0..h {
            for v in 0..w {
                let gm = gmask[u * w + v];
                if rows.dvalues[u] != 0.0 {
                    ds_h += gm * T::cast(rows.dvalues[u] * cols.values[v]);
                }
                if cols.dvalues[v] != 0.0 {
                    ds_w += gm * T::cast(rows.values[u] * cols.dvalues[v]);
                }
            }
        }
        (ds_h, ds_w)
    }
}

fn apply_mask<T: Scalar>(y: &mut ComplexSpectrum<T>, mask: &[T]) {
    let plane = mask.len();
    for chunk in y.data_mut().chunks_mut(plane) {
        for (c, &m) in chunk.iter_mut().zip(mask) {
            *c *= m;
        }
    }
}

/// DiffStride forward on `[..., H, W]` without gradient tracking; returns the
/// downsampled map and the cache needed for [`DiffStrideCache::stride_gradient`].
pub fn diffstride_forward<T: Scalar>(x: &Tensor<T>, strides: StridePair) -> Result<(Tensor<T>, DiffStrideCache<T>)> {
    if x.ndim() < 2 {
        return Err(Error::shape(
            "diffstride",
            format!("need [..., H, W], got {:?}", x.shape()),
        ));
    }
    let n = x.ndim();
    let (h, w) = (x.shape()[n - 2], x.shape()[n - 1]);
    let mask = build_mask(strides.s_h, strides.s_w, h, w, strides.smoothness)?;
    let mask_values: Vec<T> = mask.values().into_iter().map(T::cast).collect();
    let spectrum = dft2(x)?;
    let mut masked = spectrum.clone();
    apply_mask(&mut masked, &mask_values);
    let cropped = center_crop_spectrum(&masked, mask.crop.0, mask.crop.1)?;
    let out = idft2(&cropped)?;
    Ok((
        out,
        DiffStrideCache {
            spectrum,
            mask,
            mask_values,
        },
    ))
}

struct DiffStrideBackward<T> {
    cache: Rc<DiffStrideCache<T>>,
}

impl<T: Scalar> BackwardOp<T> for DiffStrideBackward<T> {
    fn name(&self) -> &'static str {
        "diffstride"
    }

    fn backward(&self, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let gy = self.cache.spectrum_grad(g)?;
        let gx = if needs[0] {
            let mut masked = gy.clone();
            apply_mask(&mut masked, &self.cache.mask_values);
            Some(idft2(&masked)?)
        } else {
            None
        };
        let gs = if needs[1] {
            let (a, b) = self.cache.stride_gradient_from_spectrum(&gy);
            Some(Tensor::new(vec![2], vec![a, b])?)
        } else {
            None
        };
        Ok(vec![gx, gs])
    }
}

/// Differentiable DiffStride. `strides` is a `[2]` node holding `(S_h, S_w)`.
pub fn diffstride<T: Scalar>(graph: &Graph<T>, x: Var, strides: Var, smoothness: f64) -> Result<Var> {
    let sv = graph.value(strides);
    if sv.shape() != [2] {
        return Err(Error::shape(
            "diffstride",
            format!("strides must have shape [2], got {:?}", sv.shape()),
        ));
    }
    let pair = StridePair::new(sv.data()[0].as_f64(), sv.data()[1].as_f64(), smoothness);
    let (out, cache) = diffstride_forward(&graph.value(x), pair)?;
    graph.custom(
        &[x, strides],
        out,
        Box::new(DiffStrideBackward { cache: Rc::new(cache) }),
    )
}

/// True when `s` can be perturbed by `eps` without crossing a crop-size
/// rounding boundary or a kink of the mask along an axis of length `n`.
pub fn stride_is_smooth(s: f64, n: usize, smoothness: f64, eps: f64) -> bool {
    let margin = 4.0 * eps;
    let (lo, hi) = (s - margin, s + margin);
    if lo < 1.0 || hi >= n as f64 {
        return false;
    }
    if output_size(n, lo, smoothness) != output_size(n, hi, smoothness) {
        return false;
    }
    let r = smoothness.max(SMOOTHNESS_FLOOR);
    // Kinks sit where N/(2S) or N/(2S) + R hits an integer |k|.
    let frac_gap = |v: f64| (v - v.round()).abs();
    let dhalf = n as f64 / (2.0 * s * s) * margin;
    frac_gap(n as f64 / (2.0 * s)) > dhalf && frac_gap(n as f64 / (2.0 * s) + r) > dhalf
}
