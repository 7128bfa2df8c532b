//! Discrimination metrics and the perturbation fidelity protocol.

mod fidelity;
mod metrics;
mod report;

pub use fidelity::{
    fidelity, masked_count, mean_true_prob, Direction, FidelityConfig, FidelityReport,
    FidelityRung, MetricPoint, Substitution,
};
pub use metrics::{auprc, auroc};
pub use report::{fmt_delta, report_table, utility_table, RenderedTable};
