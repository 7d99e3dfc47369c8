//! Meta-learners with hand-written differentiation and the episodic
//! training loop.

pub mod adam;
pub mod experiment;
pub mod maml;
pub mod mlp;
pub mod protonet;
pub mod reptile;

pub use adam::Adam;
pub use experiment::{
    classification_eval_pool, pilot_feedback, pilot_protonet, regression_eval_pool, run_experiment, CurvePoint,
    LearnerKind, RunResult, TrainConfig, World, PILOT_STEPS,
};
pub use maml::{maml_adapt, maml_batch_gradient, maml_meta_gradient, maml_meta_step, InnerLoop};
pub use mlp::{hessian_vector, mlp_forward, mlp_grad, mlp_loss, mlp_loss_grad, Dual, MlpParams, Sample, Scalar};
pub use protonet::{
    class_embeddings_from_model, protonet_accuracy, protonet_loss, protonet_loss_grad,
    protonet_predict, protonet_train_step, ProtoFeedback, ProtoModel,
};
pub use reptile::{reptile_displacement, reptile_meta_step};
