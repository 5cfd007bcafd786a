//! Point-feature learning under the dense alignment objective.

mod adam;
mod gradcheck;
mod inclusive;
mod loss;
mod model;
mod objective;
mod train;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
pub use inclusive::{mutual_inclusion_experiment, InclusionConfig, InclusionOutcome};
pub use loss::{
    loss_2d3d, loss_llm, loss_tag, loss_text2d, prob_3d, softmax_cross_entropy, total_loss, LossBreakdown, LossGrad,
    LossWeights, Prob3D, PROB_CLAMP,
};
pub use model::{
    backward_model, format_model, forward, forward_cached, load_model, model_inputs, parse_model, save_model,
    ForwardCache, PointFeatureModel, DEFAULT_HIDDEN, INPUT_DIM,
};
pub use objective::{evaluate, Gradient, MaskFeatures, Supervision, Temperatures, Text2dTargets, TrainableState};
pub use train::{train, TrainConfig, TrainOutcome, DEFAULT_LEARNING_RATE};
