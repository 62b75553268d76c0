//! The knowledge-tracing model: parameters, forward graph, loss, checkpoints.

mod checkpoint;
mod config;
mod forward;
mod loss;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{ModelConfig, Variant};
pub use forward::{
    avg_kc_embedding, build_sequence, encode_ka, encode_ks, forward_sequence, irt_predict,
    ka_score, ks_score, lstm_step, predict_sequence, prediction_logit, ps_score, HeadNodes,
    LstmNodes, LstmState, ParamNodes, SolverNodes, StepNodes, StepOutputs,
};
pub use loss::{joint_loss, joint_loss_sum};
pub use params::{
    expected_layout, prediction_layer_parameter_count, IrtAffine, LstmParams, QiktParams,
    ScoreHead, SolverHead,
};
