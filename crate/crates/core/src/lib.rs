//! Attention-as-explanation workbench for ICU mortality prediction.
//!
//! Records flatten into a 364-token space (168 vital channel-hours, then
//! 196 aggregated features). The hierarchical attention model, the
//! logistic and LSTM baselines, the three attribution methods and the
//! fidelity harness all index into that space.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod explain;
pub mod layout;
pub mod models;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
pub use exec::Exec;
pub use layout::{token_registry, Layout, TokenInfo, TokenRef};
