//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// A scalar objective over the parameters of a store, evaluated in 64-bit.
pub trait Objective {
    fn store(&self) -> &ParamStore<f64>;

    fn store_mut(&mut self) -> &mut ParamStore<f64>;

    /// Builds the forward graph and returns the scalar loss node.
    fn loss(&mut self, graph: &Graph<f64>) -> Result<Var>;
}

/// Objective given as a closure over a standalone store.
pub struct FnObjective<F> {
    pub store: ParamStore<f64>,
    pub f: F,
}

impl<F> FnObjective<F>
where
    F: FnMut(&Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    pub fn new(store: ParamStore<f64>, f: F) -> Self {
        FnObjective { store, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: FnMut(&Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    fn store(&self) -> &ParamStore<f64> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }

    fn loss(&mut self, graph: &Graph<f64>) -> Result<Var> {
        (self.f)(graph, &self.store)
    }
}

/// Which parameter entries to perturb.
#[derive(Debug, Clone)]
pub enum Entries {
    All,
    Only(Vec<(ParamId, usize)>),
}

impl Entries {
    /// `count` distinct entries drawn uniformly over all scalars of `store`.
    pub fn random_subset(store: &ParamStore<f64>, count: usize, seed: u64) -> Self {
        let flat: Vec<(ParamId, usize)> = store
            .iter()
            .flat_map(|(id, p)| (0..p.len()).map(move |i| (id, i)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = count.min(flat.len());
        let mut picked: Vec<_> = sample(&mut rng, flat.len(), count)
            .into_iter()
            .map(|i| flat[i])
            .collect();
        picked.sort();
        Entries::Only(picked)
    }

    fn resolve(&self, store: &ParamStore<f64>) -> Vec<(ParamId, usize)> {
        match self {
            Entries::All => store
                .iter()
                .flat_map(|(id, p)| (0..p.len()).map(move |i| (id, i)))
                .collect(),
            Entries::Only(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Every checked entry had an analytic gradient of exactly zero.
    pub zero_analytic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub per_param: Vec<ParamError>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamError> {
        self.per_param
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate(obj: &mut impl Objective) -> Result<f64> {
    let g = Graph::new();
    let loss = obj.loss(&g)?;
    let v = g.value(loss).item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    Ok(v)
}

/// Compares backprop gradients with `(f(p+eps) - f(p-eps)) / 2eps` for the
/// selected entries and reports the worst relative error per parameter.
pub fn grad_check(obj: &mut impl Objective, epsilon: f64, entries: &Entries) -> Result<GradCheckReport> {
    obj.store_mut().zero_grads();
    let g = Graph::new();
    let loss = obj.loss(&g)?;
    g.backward(loss, obj.store_mut())?;
    drop(g);

    let mut per_param: Vec<ParamError> = Vec::new();
    let mut current: Option<ParamId> = None;
    let mut max_rel_error = 0.0f64;

    for (id, index) in entries.resolve(obj.store()) {
        let analytic = obj.store().get(id).grad().map_or(0.0, |g| g.data()[index]);
        let original = obj.store().value(id).data()[index];

        obj.store_mut().get_mut(id).value_mut().data_mut()[index] = original + epsilon;
        let plus = evaluate(obj);
        obj.store_mut().get_mut(id).value_mut().data_mut()[index] = original - epsilon;
        let minus = evaluate(obj);
        obj.store_mut().get_mut(id).value_mut().data_mut()[index] = original;
        let numeric = (plus? - minus?) / (2.0 * epsilon);

        let err = relative_error(analytic, numeric);
        max_rel_error = max_rel_error.max(err);
        if current != Some(id) {
            current = Some(id);
            per_param.push(ParamError {
                name: obj.store().get(id).name.clone(),
                checked: 0,
                max_rel_error: 0.0,
                zero_analytic: true,
            });
        }
        let entry = per_param.last_mut().expect("pushed above");
        entry.checked += 1;
        entry.max_rel_error = entry.max_rel_error.max(err);
        entry.zero_analytic &= analytic == 0.0;
    }
    Ok(GradCheckReport {
        max_rel_error,
        per_param,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        store
            .add("w", Tensor::from_f64(vec![1], &[3.0]).unwrap(), ParamKind::Weight)
            .unwrap();
        let mut obj = FnObjective::new(store, |g: &Graph<f64>, s: &ParamStore<f64>| {
            let w = g.param(s, s.id("w").unwrap())?;
            let sq = g.mul(w, w)?;
            g.sum(sq)
        });
        let report = grad_check(&mut obj, 1e-5, &Entries::All).unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu'(0) is taken as 0 while the central difference sees 1/2.
        let mut store = ParamStore::new();
        store
            .add("w", Tensor::from_f64(vec![1], &[0.0]).unwrap(), ParamKind::Weight)
            .unwrap();
        let mut obj = FnObjective::new(store, |g: &Graph<f64>, s: &ParamStore<f64>| {
            let w = g.param(s, s.id("w").unwrap())?;
            let r = g.relu(w)?;
            g.sum(r)
        });
        let report = grad_check(&mut obj, 1e-5, &Entries::All).unwrap();
        assert!(report.max_rel_error > 0.4);
    }

    #[test]
    fn random_subset_is_deterministic_and_bounded() {
        let mut store = ParamStore::<f64>::new();
        store.add("a", Tensor::zeros(vec![10]), ParamKind::Weight).unwrap();
        store.add("b", Tensor::zeros(vec![5]), ParamKind::Bias).unwrap();
        let Entries::Only(x) = Entries::random_subset(&store, 7, 1) else {
            panic!()
        };
        let Entries::Only(y) = Entries::random_subset(&store, 7, 1) else {
            panic!()
        };
        assert_eq!(x, y);
        assert_eq!(x.len(), 7);
        let Entries::Only(all) = Entries::random_subset(&store, 100, 1) else {
            panic!()
        };
        assert_eq!(all.len(), 15);
    }
}
