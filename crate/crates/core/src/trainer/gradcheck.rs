//! Central finite-difference verification of the analytic gradient.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

use super::loss::LossWeights;
use super::model::INPUT_DIM;
use super::objective::{evaluate, Supervision, Temperatures, TrainableState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub samples: usize,
    /// Finite-difference step.
    pub step: f64,
    pub seed: u64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    /// Central differences of a loss of order one resolve gradients only to
    /// about `eps·|L|/h ≈ 1e-11` in f64, so components far below the floor
    /// are effectively compared in absolute terms.
    pub denominator_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            step: 1e-5,
            seed: 0,
            denominator_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Samples parameters (split evenly between the model and the mask-path
/// features when both exist) and compares the analytic gradient of the
/// weighted objective against central differences.
pub fn check_gradients<S: Scalar>(
    state: &TrainableState<S>,
    inputs: &[[S; INPUT_DIM]],
    supervision: &Supervision<S>,
    weights: &LossWeights<S>,
    temps: &Temperatures<S>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if cfg.samples == 0 || !(cfg.step > 0.0) {
        return Err(Error::Invalid("gradient check needs samples > 0 and step > 0".into()));
    }
    let (_, grad) = evaluate(state, inputs, supervision, weights, temps, true)?;
    let analytic = grad.expect("gradient requested").flat();
    let indices = sample_indices(state, cfg);

    let mut probe = state.clone();
    let h = S::lit(cfg.step);
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for idx in indices {
        let original = probe.param(idx);
        probe.set_param(idx, original + h);
        let plus = evaluate(&probe, inputs, supervision, weights, temps, false)?.0.total;
        probe.set_param(idx, original - h);
        let minus = evaluate(&probe, inputs, supervision, weights, temps, false)?.0.total;
        probe.set_param(idx, original);

        let numeric = ((plus - minus) / (h + h)).to_f64_lossy();
        let a = analytic[idx].to_f64_lossy();
        let denom = a.abs().max(numeric.abs()).max(cfg.denominator_floor);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if !(rel <= report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = idx;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

fn sample_indices<S: Scalar>(state: &TrainableState<S>, cfg: &GradCheckConfig) -> Vec<usize> {
    let mut rng = rng::stream(cfg.seed, "gradcheck");
    let model_count = state.model.param_count();
    let mask_count = state.param_count() - model_count;
    let (from_model, from_mask) = if mask_count == 0 {
        (cfg.samples.min(model_count), 0)
    } else {
        let half = cfg.samples / 2;
        (half.min(model_count), (cfg.samples - half).min(mask_count))
    };
    let mut out: Vec<usize> = index::sample(&mut rng, model_count, from_model).into_iter().collect();
    if from_mask > 0 {
        out.extend(
            index::sample(&mut rng, mask_count, from_mask)
                .into_iter()
                .map(|i| i + model_count),
        );
    }
    out.sort_unstable();
    out
}
