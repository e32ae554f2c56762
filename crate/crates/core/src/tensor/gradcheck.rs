use rand::seq::index::sample;

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::rng;

/// Element count above which only a random subset is probed.
pub const FULL_CHECK_LIMIT: usize = 10_000;

/// Gradients smaller than this in magnitude are compared on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over every probed element.
    pub max_rel_err: f64,
    /// `(parameter name, max relative error, probed elements)` per parameter.
    pub per_param: Vec<(String, f64, usize)>,
    pub probed: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&(String, f64, usize)> {
        self.per_param.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compares reverse-mode gradients of `loss_fn` against central differences.
///
/// `loss_fn` must build the same deterministic scalar on every call. The store
/// is restored to its original values before returning.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut loss_fn: F,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<'_>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        g.ensure_finite(loss, "grad_check loss")?;
        g.backward(loss)?
    };

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        let v = g.data(loss);
        if v.len() != 1 || !v[0].is_finite() {
            return Err(Error::NonFinite(format!(
                "grad_check loss evaluated to {v:?}"
            )));
        }
        Ok(v[0])
    };

    let mut probes: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| (0..store.get(id).len()).map(move |e| (id, e)))
        .collect();
    if probes.len() > FULL_CHECK_LIMIT {
        let mut r = rng::seeded(seed);
        let mut picked: Vec<usize> = sample(&mut r, probes.len(), FULL_CHECK_LIMIT).into_vec();
        picked.sort_unstable();
        probes = picked.into_iter().map(|i| probes[i]).collect();
    }

    let mut per_param: Vec<(String, f64, usize)> = store
        .ids()
        .map(|id| (store.name(id).to_string(), 0.0, 0))
        .collect();
    let mut max_rel_err = 0.0f64;
    for &(id, e) in &probes {
        let orig = store.get(id).data()[e];
        store.get_mut(id).data_mut()[e] = orig + eps;
        let plus = eval(store);
        store.get_mut(id).data_mut()[e] = orig - eps;
        let minus = eval(store);
        store.get_mut(id).data_mut()[e] = orig;
        let (plus, minus) = (plus?, minus?);
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic.get(id)[e], numeric);
        let slot = &mut per_param[id.index()];
        slot.1 = slot.1.max(err);
        slot.2 += 1;
        max_rel_err = max_rel_err.max(err);
    }

    Ok(GradCheckReport {
        max_rel_err,
        per_param,
        probed: probes.len(),
    })
}
