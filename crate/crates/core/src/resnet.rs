//! ResNet-18 with DiffStride downsampling, in baseline and hybrid variants.
//!
//! Every convolution runs at stride 1. Wherever the reference network would
//! use a strided convolution, a DiffStride layer downsamples instead; in a
//! shortcut block the main and residual branches share one stride pair so
//! their outputs always have the same spatial size. The hybrid variants add
//! a second pooling layer (spectral pooling or another DiffStride) between
//! the last residual stage and global average pooling.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, BatchNorm, Conv2d, Dense, Mode, Padding};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::pooling::{diffstride, output_size, project_strides, spectral_pool, StridePair};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// DiffStride downsampling only.
    Baseline,
    /// DiffStride plus spectral pooling before global average pooling.
    HybridSpectral,
    /// DiffStride plus a second DiffStride before global average pooling.
    HybridDiffStride,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::HybridSpectral, Variant::HybridDiffStride];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::HybridSpectral => "hybrid-spectral",
            Variant::HybridDiffStride => "hybrid-diffstride",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "baseline" => Ok(Variant::Baseline),
            "hybrid-spectral" => Ok(Variant::HybridSpectral),
            "hybrid-diffstride" => Ok(Variant::HybridDiffStride),
            _ => Err(Error::config(
                "variant",
                format!("unknown variant `{s}` (baseline, hybrid-spectral, hybrid-diffstride)"),
            )),
        }
    }
}

/// Architecture description. `stride_inits` has one entry for the stem and
/// one per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub stride_inits: Vec<f64>,
    /// Ramp width `R` of every DiffStride mask.
    pub smoothness: f64,
    pub num_classes: usize,
    /// Spectral pooling keeps `round(ratio * size)` frequencies per axis.
    pub spectral_pool_ratio: f64,
    /// Initial stride of the second DiffStride in the `hybrid-diffstride` variant.
    pub second_stride_init: f64,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub in_channels: usize,
    pub input_size: usize,
    pub stride_lr_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// CIFAR ResNet-18: 3x3 stem, four stages of two basic blocks.
    pub fn resnet18(variant: Variant, num_classes: usize) -> Self {
        ModelConfig {
            variant,
            stride_inits: vec![1.0, 1.0, 2.0, 2.0, 2.0],
            smoothness: 1.0,
            num_classes,
            spectral_pool_ratio: 0.5,
            second_stride_init: 2.0,
            stage_channels: vec![64, 128, 256, 512],
            blocks_per_stage: 2,
            in_channels: 3,
            input_size: 32,
            stride_lr_scale: 1.0,
            seed: 0,
        }
    }

    /// Two-stage network for desk-scale experiments and tests.
    pub fn tiny(variant: Variant, num_classes: usize, input_size: usize) -> Self {
        ModelConfig {
            stride_inits: vec![1.0, 2.0, 2.0],
            stage_channels: vec![16, 32],
            input_size,
            ..Self::resnet18(variant, num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.stage_channels.len();
        if stages == 0 || self.stage_channels.contains(&0) {
            return Err(Error::config(
                "stage_channels",
                "need at least one stage with nonzero width",
            ));
        }
        if self.stride_inits.len() != stages + 1 {
            return Err(Error::config(
                "stride_inits",
                format!(
                    "expected {} values (stem + {stages} stages), got {}",
                    stages + 1,
                    self.stride_inits.len()
                ),
            ));
        }
        if self.input_size == 0 || self.in_channels == 0 {
            return Err(Error::config("input_size", "input must be non-empty"));
        }
        for (i, &s) in self.stride_inits.iter().enumerate() {
            if !(s >= 1.0 && s < self.input_size as f64) {
                return Err(Error::config(
                    format!("stride_inits[{i}]"),
                    format!("{s} outside [1, {})", self.input_size),
                ));
            }
        }
        if !(self.smoothness >= 0.0 && self.smoothness.is_finite()) {
            return Err(Error::config("smoothness", "must be a finite value >= 0"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "need at least two classes"));
        }
        if !(self.spectral_pool_ratio > 0.0 && self.spectral_pool_ratio <= 1.0) {
            return Err(Error::config("spectral_pool_ratio", "must lie in (0, 1]"));
        }
        if !(self.second_stride_init >= 1.0 && self.second_stride_init.is_finite()) {
            return Err(Error::config("second_stride_init", "must be >= 1"));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::config("blocks_per_stage", "must be >= 1"));
        }
        if !(self.stride_lr_scale > 0.0 && self.stride_lr_scale.is_finite()) {
            return Err(Error::config("stride_lr_scale", "must be positive"));
        }
        Ok(())
    }
}

/// Spatial size kept by spectral pooling: `max(1, round(ratio * n))`.
pub fn spectral_target(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n)
}

/// A DiffStride layer and its learnable `[S_h, S_w]` parameter.
#[derive(Debug, Clone)]
pub struct DiffStrideLayer {
    pub name: String,
    pub strides: ParamId,
    pub smoothness: f64,
}

impl DiffStrideLayer {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        init: f64,
        smoothness: f64,
        lr_scale: f64,
    ) -> Result<Self> {
        let strides = store.add_scaled(
            format!("{name}.stride"),
            Tensor::from_f64(vec![2], &[init, init])?,
            ParamKind::Stride,
            lr_scale,
        )?;
        Ok(DiffStrideLayer {
            name: name.to_string(),
            strides,
            smoothness,
        })
    }

    pub fn pair<T: Scalar>(&self, store: &ParamStore<T>) -> StridePair {
        let v = store.value(self.strides).data();
        StridePair::new(v[0].as_f64(), v[1].as_f64(), self.smoothness)
    }
}

#[derive(Debug, Clone)]
struct Shortcut<T> {
    pool: Option<DiffStrideLayer>,
    conv: Conv2d,
    bn: BatchNorm<T>,
}

/// Basic residual block: conv-BN-ReLU-conv-BN, add, ReLU.
#[derive(Debug, Clone)]
pub struct Block<T> {
    pub name: String,
    conv1: Conv2d,
    bn1: BatchNorm<T>,
    conv2: Conv2d,
    bn2: BatchNorm<T>,
    shortcut: Option<Shortcut<T>>,
}

impl<T: Scalar> Block<T> {
    pub fn is_shortcut(&self) -> bool {
        self.shortcut.is_some()
    }

    pub fn pool(&self) -> Option<&DiffStrideLayer> {
        self.shortcut.as_ref().and_then(|s| s.pool.as_ref())
    }

    fn forward(&mut self, g: &Graph<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let strides = self
            .pool()
            .map(|p| Ok::<_, Error>((g.param(store, p.strides)?, p.smoothness)))
            .transpose()?;

        let mut main = self.conv1.forward(g, store, x)?;
        if let Some((s, r)) = strides {
            main = diffstride(g, main, s, r)?;
        }
        main = self.bn1.forward(g, store, main, mode)?;
        main = g.relu(main)?;
        main = self.conv2.forward(g, store, main)?;
        main = self.bn2.forward(g, store, main, mode)?;

        let residual = match &mut self.shortcut {
            None => x,
            Some(sc) => {
                let mut r = x;
                if let Some((s, smooth)) = strides {
                    r = diffstride(g, r, s, smooth)?;
                }
                r = sc.conv.forward(g, store, r)?;
                sc.bn.forward(g, store, r, mode)?
            }
        };
        let (ms, rs) = (g.shape(main), g.shape(residual));
        if ms != rs {
            return Err(Error::Contract(format!(
                "{}: main branch {ms:?} and residual branch {rs:?} cannot be summed",
                self.name
            )));
        }
        let sum = g.add(main, residual)?;
        g.relu(sum)
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut v = vec![&mut self.bn1, &mut self.bn2];
        if let Some(sc) = &mut self.shortcut {
            v.push(&mut sc.bn);
        }
        v
    }
}

/// Layer between the last residual stage and global average pooling.
#[derive(Debug, Clone)]
pub enum SecondPool {
    Spectral { ratio: f64 },
    DiffStride(DiffStrideLayer),
}

/// Named output shapes of the top-level units of a model.
pub type ShapeTrace = Vec<(String, Vec<usize>)>;

#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    params: ParamStore<T>,
    stem_conv: Conv2d,
    stem_bn: BatchNorm<T>,
    stem_pool: Option<DiffStrideLayer>,
    stages: Vec<Vec<Block<T>>>,
    second_pool: Option<SecondPool>,
    second_pool_placed: bool,
    head: Dense,
}

impl<T: Scalar> Model<T> {
    /// Builds the network described by `config`, including its second pool.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        let mut model = Self::build_base(config)?;
        model.place_second_pool(config.variant)?;
        Ok(model)
    }

    /// Builds the network without the variant-dependent second pool.
    pub fn build_base(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let r = config.smoothness;
        let lr = config.stride_lr_scale;
        let c0 = config.stage_channels[0];

        let stem_conv = Conv2d::new(
            &mut store,
            "stem.conv",
            config.in_channels,
            c0,
            3,
            1,
            Padding::Same,
            false,
            &mut rng,
        )?;
        let stem_bn = BatchNorm::new(&mut store, "stem.bn", c0)?;
        let stem_pool = if config.stride_inits[0] > 1.0 {
            Some(DiffStrideLayer::new(
                &mut store,
                "stem.pool",
                config.stride_inits[0],
                r,
                lr,
            )?)
        } else {
            None
        };

        let mut stages = Vec::new();
        let mut c_in = c0;
        for (si, &c_out) in config.stage_channels.iter().enumerate() {
            let init = config.stride_inits[si + 1];
            let mut blocks = Vec::new();
            for bi in 0..config.blocks_per_stage {
                let name = format!("stage{}.block{}", si + 1, bi + 1);
                let cin = if bi == 0 { c_in } else { c_out };
                let conv1 = Conv2d::new(
                    &mut store,
                    &format!("{name}.conv1"),
                    cin,
                    c_out,
                    3,
                    1,
                    Padding::Same,
                    false,
                    &mut rng,
                )?;
                let bn1 = BatchNorm::new(&mut store, &format!("{name}.bn1"), c_out)?;
                let conv2 = Conv2d::new(
                    &mut store,
                    &format!("{name}.conv2"),
                    c_out,
                    c_out,
                    3,
                    1,
                    Padding::Same,
                    false,
                    &mut rng,
                )?;
                let bn2 = BatchNorm::new(&mut store, &format!("{name}.bn2"), c_out)?;
                let shortcut = if bi == 0 && (cin != c_out || init > 1.0) {
                    let pool = if init > 1.0 {
                        Some(DiffStrideLayer::new(&mut store, &format!("{name}.pool"), init, r, lr)?)
                    } else {
                        None
                    };
                    Some(Shortcut {
                        pool,
                        conv: Conv2d::new(
                            &mut store,
                            &format!("{name}.proj"),
                            cin,
                            c_out,
                            1,
                            1,
                            Padding::Same,
                            false,
                            &mut rng,
                        )?,
                        bn: BatchNorm::new(&mut store, &format!("{name}.proj_bn"), c_out)?,
                    })
                } else {
                    None
                };
                blocks.push(Block {
                    name,
                    conv1,
                    bn1,
                    conv2,
                    bn2,
                    shortcut,
                });
            }
            stages.push(blocks);
            c_in = c_out;
        }
        let head = Dense::new(&mut store, "dense", c_in, config.num_classes, &mut rng)?;
        Ok(Model {
            config: config.clone(),
            params: store,
            stem_conv,
            stem_bn,
            stem_pool,
            stages,
            second_pool: None,
            second_pool_placed: false,
            head,
        })
    }

    /// Inserts the variant's layer between the last stage and global average
    /// pooling. Baseline inserts nothing. A model accepts one placement only.
    pub fn place_second_pool(&mut self, variant: Variant) -> Result<()> {
        if self.second_pool_placed {
            return Err(Error::Contract("second pooling layer already placed".into()));
        }
        self.second_pool = match variant {
            Variant::Baseline => None,
            Variant::HybridSpectral => Some(SecondPool::Spectral {
                ratio: self.config.spectral_pool_ratio,
            }),
            Variant::HybridDiffStride => {
                let trace = self.shapes(1)?;
                let last = &trace
                    .iter()
                    .rev()
                    .find(|(name, _)| name.starts_with("stage"))
                    .expect("at least one stage")
                    .1;
                let n = last[2].min(last[3]);
                let init = self.config.second_stride_init;
                if !(init < n as f64 || init == 1.0) {
                    return Err(Error::config(
                        "second_stride_init",
                        format!("{init} outside [1, {n}) for the last-stage output"),
                    ));
                }
                let layer = DiffStrideLayer::new(
                    &mut self.params,
                    "pool2",
                    init,
                    self.config.smoothness,
                    self.config.stride_lr_scale,
                )?;
                Some(SecondPool::DiffStride(layer))
            }
        };
        self.config.variant = variant;
        self.second_pool_placed = true;
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn second_pool(&self) -> Option<&SecondPool> {
        self.second_pool.as_ref()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block<T>> {
        self.stages.iter().flatten()
    }

    /// Number of top-level units in the forward pass.
    pub fn layer_count(&self) -> usize {
        self.shapes(1).map(|t| t.len()).unwrap_or(0)
    }

    /// Every DiffStride layer in forward order.
    pub fn diffstride_layers(&self) -> Vec<&DiffStrideLayer> {
        let mut v: Vec<&DiffStrideLayer> = self.stem_pool.iter().collect();
        v.extend(self.blocks().filter_map(|b| b.pool()));
        if let Some(SecondPool::DiffStride(l)) = &self.second_pool {
            v.push(l);
        }
        v
    }

    /// Current `(layer, S_h, S_w)` of every DiffStride layer.
    pub fn stride_values(&self) -> Vec<(String, f64, f64)> {
        self.diffstride_layers()
            .into_iter()
            .map(|l| {
                let p = l.pair(&self.params);
                (l.name.clone(), p.s_h, p.s_w)
            })
            .collect()
    }

    /// Each DiffStride layer with the spatial size of its input, in forward
    /// order.
    pub fn stride_inputs(&self) -> Result<Vec<(&DiffStrideLayer, usize, usize)>> {
        let trace = self.shapes(1)?;
        let mut out = Vec::new();
        for layer in self.diffstride_layers() {
            let unit = layer.name.strip_suffix(".pool").unwrap_or(&layer.name);
            let pos = trace
                .iter()
                .position(|(n, _)| n == &layer.name)
                .or_else(|| trace.iter().position(|(n, _)| n == unit))
                .expect("every stride layer appears in the trace");
            // a block's input is the previous unit's output
            let shape = &trace[pos - 1].1;
            out.push((layer, shape[2], shape[3]));
        }
        Ok(out)
    }

    /// Forward pass on `[N, C, H, W]` images, returning logits.
    pub fn forward(&mut self, g: &Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        self.forward_traced(g, x, mode).map(|(v, _)| v)
    }

    /// Forward pass that also records the output shape of every unit.
    pub fn forward_traced(&mut self, g: &Graph<T>, x: Var, mode: Mode) -> Result<(Var, ShapeTrace)> {
        let mut trace = Vec::new();
        let store = &self.params;
        let mut h = self.stem_conv.forward(g, store, x)?;
        h = self.stem_bn.forward(g, store, h, mode)?;
        h = g.relu(h)?;
        trace.push(("stem".to_string(), g.shape(h)));
        if let Some(pool) = &self.stem_pool {
            let s = g.param(store, pool.strides)?;
            h = diffstride(g, h, s, pool.smoothness)?;
            trace.push((pool.name.clone(), g.shape(h)));
        }
        for block in self.stages.iter_mut().flatten() {
            h = block.forward(g, store, h, mode)?;
            trace.push((block.name.clone(), g.shape(h)));
        }
        match &self.second_pool {
            None => {}
            Some(SecondPool::Spectral { ratio }) => {
                let shape = g.shape(h);
                h = spectral_pool(
                    g,
                    h,
                    spectral_target(shape[2], *ratio),
                    spectral_target(shape[3], *ratio),
                )?;
                trace.push(("pool2".to_string(), g.shape(h)));
            }
            Some(SecondPool::DiffStride(layer)) => {
                let s = g.param(store, layer.strides)?;
                h = diffstride(g, h, s, layer.smoothness)?;
                trace.push(("pool2".to_string(), g.shape(h)));
            }
        }
        h = global_avg_pool(g, h)?;
        trace.push(("gap".to_string(), g.shape(h)));
        h = self.head.forward(g, store, h)?;
        trace.push(("dense".to_string(), g.shape(h)));
        Ok((h, trace))
    }

    /// Mean cross-entropy of a batch; returns `(loss, logits)` nodes.
    pub fn loss(&mut self, g: &Graph<T>, images: Tensor<T>, labels: &[usize], mode: Mode) -> Result<(Var, Var)> {
        let x = g.constant(images)?;
        let logits = self.forward(g, x, mode)?;
        let loss = g.softmax_cross_entropy(logits, labels)?;
        Ok((loss, logits))
    }

    /// Symbolic shape walk for a batch of `n`, using the current strides.
    pub fn shapes(&self, n: usize) -> Result<ShapeTrace> {
        let lookup = |name: &str| -> Option<StridePair> {
            let layer = self
                .stem_pool
                .iter()
                .chain(self.blocks().filter_map(|b| b.pool()))
                .chain(match &self.second_pool {
                    Some(SecondPool::DiffStride(l)) => Some(l),
                    _ => None,
                })
                .find(|l| l.name == name)?;
            Some(layer.pair(&self.params))
        };
        let second = match &self.second_pool {
            None => SecondKind::None,
            Some(SecondPool::Spectral { ratio }) => SecondKind::Spectral(*ratio),
            Some(SecondPool::DiffStride(_)) => SecondKind::DiffStride,
        };
        walk_shapes(&self.config, n, second, &lookup)
    }

    /// Clamps every stride pair into `[1, N - 1e-3]` for the input size it
    /// currently sees, walking the network front to back.
    pub fn project_strides(&mut self) {
        let (mut h, mut w) = (self.config.input_size, self.config.input_size);
        let mut layers: Vec<Option<DiffStrideLayer>> = vec![self.stem_pool.clone()];
        layers.extend(
            self.stages
                .iter()
                .flatten()
                .filter(|b| b.is_shortcut())
                .map(|b| b.pool().cloned()),
        );
        for layer in layers.into_iter().flatten() {
            (h, w) = self.project_one(&layer, h, w);
        }
        match self.second_pool.clone() {
            Some(SecondPool::DiffStride(layer)) => {
                self.project_one(&layer, h, w);
            }
            Some(SecondPool::Spectral { .. }) | None => {}
        }
    }

    fn project_one(&mut self, layer: &DiffStrideLayer, h: usize, w: usize) -> (usize, usize) {
        let pair = project_strides(layer.pair(&self.params), h, w);
        let v = self.params.get_mut(layer.strides).value_mut().data_mut();
        v[0] = T::cast(pair.s_h);
        v[1] = T::cast(pair.s_w);
        pair.output_shape(h, w)
    }

    /// All batch-norm layers in forward order.
    pub fn batch_norms(&self) -> Vec<&BatchNorm<T>> {
        let mut v = vec![&self.stem_bn];
        for b in self.blocks() {
            v.push(&b.bn1);
            v.push(&b.bn2);
            if let Some(sc) = &b.shortcut {
                v.push(&sc.bn);
            }
        }
        v
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut v = vec![&mut self.stem_bn];
        for b in self.stages.iter_mut().flatten() {
            v.extend(b.batch_norms_mut());
        }
        v
    }
}

#[derive(Debug, Clone, Copy)]
enum SecondKind {
    None,
    Spectral(f64),
    DiffStride,
}

fn pooled(name: &str, h: usize, w: usize, pair: StridePair) -> Result<(usize, usize)> {
    let bad = |s: f64, n: usize| !(s >= 1.0 && (s < n as f64 || s == 1.0));
    if bad(pair.s_h, h) || bad(pair.s_w, w) {
        return Err(Error::shape(
            "forward_shapes",
            format!(
                "layer {name}: strides ({}, {}) outside [1, {h}) x [1, {w})",
                pair.s_h, pair.s_w
            ),
        ));
    }
    Ok((
        output_size(h, pair.s_h, pair.smoothness),
        output_size(w, pair.s_w, pair.smoothness),
    ))
}

fn walk_shapes(
    config: &ModelConfig,
    n: usize,
    second: SecondKind,
    strides: &dyn Fn(&str) -> Option<StridePair>,
) -> Result<ShapeTrace> {
    config.validate()?;
    let r = config.smoothness;
    let stride_or_init = |name: &str, init: f64| strides(name).unwrap_or(StridePair::new(init, init, r));
    let mut trace = Vec::new();
    let (mut h, mut w) = (config.input_size, config.input_size);
    let mut c = config.stage_channels[0];
    trace.push(("stem".to_string(), vec![n, c, h, w]));
    if config.stride_inits[0] > 1.0 {
        (h, w) = pooled("stem.pool", h, w, stride_or_init("stem.pool", config.stride_inits[0]))?;
        trace.push(("stem.pool".to_string(), vec![n, c, h, w]));
    }
    for (si, &c_out) in config.stage_channels.iter().enumerate() {
        let init = config.stride_inits[si + 1];
        for bi in 0..config.blocks_per_stage {
            let name = format!("stage{}.block{}", si + 1, bi + 1);
            if bi == 0 && init > 1.0 {
                let pool = format!("{name}.pool");
                (h, w) = pooled(&pool, h, w, stride_or_init(&pool, init))?;
            }
            c = c_out;
            trace.push((name, vec![n, c, h, w]));
        }
    }
    match second {
        SecondKind::None => {}
        SecondKind::Spectral(ratio) => {
            (h, w) = (spectral_target(h, ratio), spectral_target(w, ratio));
            trace.push(("pool2".to_string(), vec![n, c, h, w]));
        }
        SecondKind::DiffStride => {
            (h, w) = pooled("pool2", h, w, stride_or_init("pool2", config.second_stride_init))?;
            trace.push(("pool2".to_string(), vec![n, c, h, w]));
        }
    }
    trace.push(("gap".to_string(), vec![n, c]));
    trace.push(("dense".to_string(), vec![n, config.num_classes]));
    Ok(trace)
}

/// Dry-run shape propagation from the configured initial strides, without
/// building the network.
pub fn forward_shapes(config: &ModelConfig, n: usize) -> Result<ShapeTrace> {
    let second = match config.variant {
        Variant::Baseline => SecondKind::None,
        Variant::HybridSpectral => SecondKind::Spectral(config.spectral_pool_ratio),
        Variant::HybridDiffStride => SecondKind::DiffStride,
    };
    walk_shapes(config, n, second, &|_| None)
}
