//! Ready-made gradient-check targets: single layers on random inputs and the
//! small two-stage network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, Entries, FnObjective, GradCheckReport, Objective};
use crate::nn::Mode;
use crate::params::{ParamKind, ParamStore};
use crate::pooling::{diffstride, spectral_pool, stride_is_smooth};
use crate::resnet::{Model, ModelConfig, Variant};
use crate::tensor::Tensor;

/// Finite-difference step of the single-layer targets.
pub const CHECK_EPSILON: f64 = 1e-4;

/// Step of the model-level check, small enough to stay clear of ReLU kinks.
pub const MODEL_EPSILON: f64 = 1e-5;

/// Result of one target with the notes it produced along the way.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub target: String,
    pub report: GradCheckReport,
    pub tolerance: f64,
    pub notes: Vec<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.tolerance
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for n in &self.notes {
            s += &format!("note: {n}\n");
        }
        for p in self.report.per_param.iter().filter(|p| p.zero_analytic) {
            s += &format!(
                "note: {} has an exactly zero analytic gradient; its difference quotient is roundoff\n",
                p.name
            );
        }
        for p in &self.report.per_param {
            s += &format!(
                "{:<32} {:>6} entries  max rel error {:.3e}\n",
                p.name, p.checked, p.max_rel_error
            );
        }
        s += &format!(
            "{}: max rel error {:.3e} (tolerance {:.0e}) {}\n",
            self.target,
            self.report.max_rel_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        s
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Moves `s` up in small steps until finite differences around it stay
/// clear of crop-size rounding boundaries and mask kinks.
pub fn nudge_stride(s: f64, n: usize, smoothness: f64, eps: f64) -> Option<f64> {
    (0..400)
        .map(|i| s + i as f64 * 0.0137)
        .find(|&c| stride_is_smooth(c, n, smoothness, eps))
}

/// Random projection loss `sum(y * c)` of a single layer output.
fn projection_loss(g: &Graph<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    let c = g.constant(weights.clone())?;
    let p = g.mul(y, c)?;
    g.sum(p)
}

/// DiffStride on a `[2, 2, h, w]` input: gradients of the input and of both
/// strides.
pub fn check_diffstride(h: usize, w: usize, s_h: f64, s_w: f64, smoothness: f64, seed: u64) -> Result<CheckOutcome> {
    let mut notes = Vec::new();
    let mut pick = |s: f64, n: usize, axis: &str| -> Result<f64> {
        if stride_is_smooth(s, n, smoothness, CHECK_EPSILON) {
            return Ok(s);
        }
        let moved = nudge_stride(s, n, smoothness, CHECK_EPSILON)
            .ok_or_else(|| Error::GradCheck(format!("no smooth stride near S_{axis} = {s} for N = {n}")))?;
        notes.push(format!(
            "S_{axis} = {s} sits on a boundary for N = {n}; re-sampled to {moved:.4}"
        ));
        Ok(moved)
    };
    let s_h = pick(s_h, h, "h")?;
    let s_w = pick(s_w, w, "w")?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let x = store.add("input", random_tensor(&mut rng, vec![2, 2, h, w]), ParamKind::Weight)?;
    let s = store.add("stride", Tensor::from_f64(vec![2], &[s_h, s_w])?, ParamKind::Stride)?;
    let out = crate::pooling::output_size(h, s_h, smoothness);
    let out_w = crate::pooling::output_size(w, s_w, smoothness);
    let weights = random_tensor(&mut rng, vec![2, 2, out, out_w]);
    let mut obj = FnObjective::new(store, move |g: &Graph<f64>, st: &ParamStore<f64>| {
        let xv = g.param(st, x)?;
        let sv = g.param(st, s)?;
        let y = diffstride(g, xv, sv, smoothness)?;
        projection_loss(g, y, &weights)
    });
    let report = grad_check(&mut obj, CHECK_EPSILON, &Entries::All)?;
    Ok(CheckOutcome {
        target: format!("diffstride {h}x{w} S=({s_h:.4}, {s_w:.4}) R={smoothness}"),
        report,
        tolerance: 1e-4,
        notes,
    })
}

/// Spectral pooling of a `[2, 2, h, w]` input down to `out_h x out_w`.
pub fn check_spectral_pool(h: usize, w: usize, out_h: usize, out_w: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let x = store.add("input", random_tensor(&mut rng, vec![2, 2, h, w]), ParamKind::Weight)?;
    let weights = random_tensor(&mut rng, vec![2, 2, out_h, out_w]);
    let mut obj = FnObjective::new(store, move |g: &Graph<f64>, st: &ParamStore<f64>| {
        let xv = g.param(st, x)?;
        let y = spectral_pool(g, xv, out_h, out_w)?;
        projection_loss(g, y, &weights)
    });
    let report = grad_check(&mut obj, CHECK_EPSILON, &Entries::All)?;
    Ok(CheckOutcome {
        target: format!("spectral_pool {h}x{w} -> {out_h}x{out_w}"),
        report,
        tolerance: 1e-5,
        notes: Vec::new(),
    })
}

/// Cross-entropy of a whole model on one fixed batch, in train mode.
pub struct ModelObjective {
    pub model: Model<f64>,
    pub images: Tensor<f64>,
    pub labels: Vec<usize>,
}

impl Objective for ModelObjective {
    fn store(&self) -> &ParamStore<f64> {
        self.model.params()
    }

    fn store_mut(&mut self) -> &mut ParamStore<f64> {
        self.model.params_mut()
    }

    fn loss(&mut self, graph: &Graph<f64>) -> Result<Var> {
        let (loss, _) = self.model.loss(graph, self.images.clone(), &self.labels, Mode::Train)?;
        Ok(loss)
    }
}

/// Two-stage network used by the model-level check: 8x8 inputs, strides
/// chosen off the mask kinks.
pub fn check_model_config(variant: Variant, seed: u64) -> ModelConfig {
    ModelConfig {
        stride_inits: vec![1.0, 2.2, 1.9],
        second_stride_init: 2.2,
        stage_channels: vec![4, 8],
        seed,
        ..ModelConfig::tiny(variant, 10, 8)
    }
}

/// Builds the objective for `config` on a random batch, moving any stride
/// that sits on a boundary.
pub fn model_objective(
    config: &ModelConfig,
    batch: usize,
    seed: u64,
    notes: &mut Vec<String>,
) -> Result<ModelObjective> {
    let mut model = Model::<f64>::build(config)?;
    loop {
        let inputs: Vec<(String, crate::params::ParamId, usize, usize, f64, f64)> = model
            .stride_inputs()?
            .into_iter()
            .map(|(l, h, w)| {
                let p = l.pair(model.params());
                (l.name.clone(), l.strides, h, w, p.s_h, p.s_w)
            })
            .collect();
        let r = config.smoothness;
        let bad = inputs.iter().find(|(_, _, h, w, sh, sw)| {
            !stride_is_smooth(*sh, *h, r, MODEL_EPSILON) || !stride_is_smooth(*sw, *w, r, MODEL_EPSILON)
        });
        let Some((name, id, h, w, sh, sw)) = bad.cloned() else {
            break;
        };
        let nh = nudge_stride(sh, h, r, MODEL_EPSILON);
        let nw = nudge_stride(sw, w, r, MODEL_EPSILON);
        let (Some(nh), Some(nw)) = (nh, nw) else {
            return Err(Error::GradCheck(format!("no smooth strides for {name} at {h}x{w}")));
        };
        notes.push(format!(
            "{name}: strides ({sh}, {sw}) on a boundary; re-sampled to ({nh:.4}, {nw:.4})"
        ));
        model
            .params_mut()
            .set_value(id, Tensor::from_f64(vec![2], &[nh, nw])?)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let side = config.input_size;
    let images = random_tensor(&mut rng, vec![batch, config.in_channels, side, side]);
    let labels = (0..batch).map(|i| i % config.num_classes).collect();
    Ok(ModelObjective { model, images, labels })
}

/// Checks `per_param` random entries of every parameter of the model, so
/// every group appears in the report.
pub fn check_model(variant: Variant, per_param: usize, seed: u64) -> Result<CheckOutcome> {
    let config = check_model_config(variant, seed);
    let mut notes = Vec::new();
    let mut obj = model_objective(&config, 4, seed, &mut notes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (id, p) in obj.store().iter() {
        let k = per_param.min(p.len());
        let picked = rand::seq::index::sample(&mut rng, p.len(), k);
        let mut picked: Vec<usize> = picked.into_iter().collect();
        picked.sort_unstable();
        entries.extend(picked.into_iter().map(|i| (id, i)));
    }
    let report = grad_check(&mut obj, MODEL_EPSILON, &Entries::Only(entries))?;
    Ok(CheckOutcome {
        target: format!("model ({variant}, two stages)"),
        report,
        tolerance: 1e-4,
        notes,
    })
}
