//! Active causal structure learning over noisy-OR causal Bayesian networks.
//!
//! The crate covers the hypothesis space of small DAGs, exact Bayesian
//! inference and expected information gain, locally focused intervention
//! selection, bounded sequential belief-update models, maximum-likelihood
//! model fitting and a seeded simulation harness.

pub mod data;
pub mod devices;
pub mod error;
pub mod fitting;
pub mod graph;
pub mod harness;
pub mod inference;
pub mod learners;
pub mod local_focus;
pub mod math;
pub mod optim;
pub mod model;

pub use data::*;
pub use devices::*;
pub use error::*;
pub use fitting::*;
pub use graph::*;
pub use harness::*;
pub use inference::*;
pub use learners::*;
pub use local_focus::*;
pub use model::*;
