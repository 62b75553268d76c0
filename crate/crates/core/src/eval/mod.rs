//! Metrics, significance tests, reports and per-step exports.

mod export;
mod metrics;
mod report;
mod ttest;

pub use export::{
    export_knowledge_states, export_module_outputs, write_knowledge_states_csv, write_module_outputs_csv,
    KnowledgeStates, ModuleOutputRow,
};
pub use metrics::{accuracy, auc, mean_std, PredictionSet};
pub use report::{predict_all, EvalReport, FoldMetrics, RunMetrics};
pub use ttest::{integrate, paired_t_test, paired_t_test_full, student_t_two_sided, PairedTTest};
