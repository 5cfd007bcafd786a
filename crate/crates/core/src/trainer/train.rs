use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::scene::PointCloud;

use super::adam::{Adam, AdamConfig};
use super::loss::{LossBreakdown, LossWeights};
use super::model::{model_inputs, PointFeatureModel, DEFAULT_HIDDEN};
use super::objective::{evaluate, Supervision, Temperatures, TrainableState};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<S: Scalar> {
    pub tau1: S,
    pub tau2: S,
    pub learning_rate: S,
    pub iterations: usize,
    pub seed: u64,
    pub hidden: usize,
    pub weights: LossWeights<S>,
    pub adam: AdamConfig<S>,
}

impl<S: Scalar> Default for TrainConfig<S> {
    fn default() -> Self {
        Self {
            tau1: S::lit(0.1),
            tau2: S::lit(0.1),
            learning_rate: S::lit(DEFAULT_LEARNING_RATE),
            iterations: 100,
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl<S: Scalar> TrainConfig<S> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("learning_rate", self.learning_rate),
        ] {
            if !(v > S::zero() && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} = {v} must be positive")));
            }
        }
        if self.hidden == 0 {
            return Err(Error::Invalid("hidden width must be positive".into()));
        }
        self.weights.validate()
    }

    pub fn temperatures(&self) -> Temperatures<S> {
        Temperatures {
            tau1: self.tau1,
            tau2: self.tau2,
        }
    }

    /// Model initialization for this config and output dimension.
    pub fn init_model(&self, out_dim: usize) -> Result<PointFeatureModel<S>> {
        PointFeatureModel::init(self.hidden, out_dim, rng::derive_seed(self.seed, "model"))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    pub state: TrainableState<S>,
    /// Loss before each step, then after the last one (`iterations + 1` entries).
    pub history: Vec<LossBreakdown<S>>,
}

/// Runs `cfg.iterations` Adam steps on the full alignment objective.
pub fn train<S: Scalar>(
    cloud: &PointCloud<S>,
    supervision: &Supervision<S>,
    cfg: &TrainConfig<S>,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    supervision.validate(cloud.len())?;
    let model = cfg.init_model(supervision.tag_bank.dim())?;
    let mut state = TrainableState::new(model, supervision);
    let inputs = model_inputs(cloud);
    let temps = cfg.temperatures();
    let sizes: Vec<usize> = state.blocks_mut().iter().map(|b| b.len()).collect();
    let mut adam = Adam::new(cfg.adam, cfg.learning_rate, &sizes);
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    for iteration in 0..=cfg.iterations {
        let want_grad = iteration < cfg.iterations;
        let (parts, grad) = evaluate(&state, &inputs, supervision, &cfg.weights, &temps, want_grad)?;
        if !parts.total.is_finite() {
            return Err(Error::Diverged {
                iteration,
                loss: parts.total.to_f64_lossy(),
            });
        }
        history.push(parts);
        if let Some(grad) = grad {
            adam.step(&mut state.blocks_mut(), &grad.blocks());
        }
    }
    Ok(TrainOutcome { state, history })
}
