//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Grads, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Coordinates sampled (all of them when the store is smaller).
    pub coordinates: usize,
    /// Denominator floor for the relative error, in units of
    /// `max(1, |loss|)`, so that coordinates whose gradient is at the
    /// level of finite-difference roundoff are compared in absolute terms.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, coordinates: 200, floor: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|numeric|, floor · max(1, |loss|))`.
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares backward gradients against central differences on a sample of
/// parameter coordinates. `f` evaluates the loss and its gradients.
pub fn grad_check<F>(f: F, store: &ParamStore, cfg: &GradCheckConfig) -> GradCheckReport
where
    F: Fn(&ParamStore) -> (f64, Grads),
{
    let (loss, grads) = f(store);
    let floor = cfg.floor * loss.abs().max(1.0);
    let all: Vec<(ParamId, usize)> = store
        .iter()
        .flat_map(|(id, p)| (0..p.value.len()).map(move |k| (id, k)))
        .collect();
    let picked: Vec<(ParamId, usize)> = if all.len() <= cfg.coordinates {
        all
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, all.len(), cfg.coordinates).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| all[i]).collect()
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    for (id, k) in picked {
        let original = store.value(id).data()[k];
        probe.value_mut(id).data_mut()[k] = original + cfg.step;
        let (plus, _) = f(&probe);
        probe.value_mut(id).data_mut()[k] = original - cfg.step;
        let (minus, _) = f(&probe);
        probe.value_mut(id).data_mut()[k] = original;

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let analytic = grads.at(id, k);
        let err = (analytic - numeric).abs() / numeric.abs().max(floor);
        report.checked += 1;
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            report.worst = Some((store.get(id).name.clone(), k));
        }
    }
    report
}
