//! Losses, deferred backpropagation, optimisation and training loops.

pub mod ablation;
pub mod deferred;
pub mod loss;
pub mod optim;
pub mod sso;
pub mod trainer;

pub use ablation::{ablate, run_arm, variant_config, AblationReport, ArmResult};
pub use deferred::{deferred_backward, standard_backward, AttributeGrads, LossSetup, Supervision};
pub use loss::{compute_loss, LossReport, LossWeights, PerceptualNet};
pub use optim::{clip_global_norm, global_norm, lr_at, AdamW, AdamWConfig};
pub use sso::{sso_fit, SsoConfig, SsoResult};
pub use trainer::{
    constant_baseline, evaluate, outside_opacity_mass, reconstruct_scene, train_loop, EvalSummary, StepReport,
    TrainConfig, TrainSummary, Trainer,
};
