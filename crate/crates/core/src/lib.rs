//! Differentiable architecture search on small tabular problems.
//!
//! A cell-based supernet mixes candidate operators on every edge with
//! continuous architecture weights α. Search alternates SGD steps on the
//! network weights with Adam steps on α, either on a fixed schedule or
//! whenever a smoothed trace of the weight-gradient Fisher information
//! falls below an adaptive threshold. α can be pulled towards the discrete
//! architecture set with a proximity penalty or an ADMM splitting, and the
//! final α is projected onto that set and retrained from scratch.

pub mod autodiff;
pub mod data;
pub mod discretize;
pub mod error;
pub mod eval;
pub mod genotype;
pub mod history;
pub mod optim;
pub mod regularize;
pub mod schedule;
pub mod search;
pub mod space;
pub mod supernet;
pub mod tensor;

pub use discretize::{distance_to_s, enumerate_s, project_to_s, validate_in_s, DiscreteArchitecture};
pub use error::{Error, Result};
pub use genotype::{export_genotype, Genotype};
pub use schedule::{Scheduler, SchedulerConfig};
pub use search::{run_search, SearchConfig, SearchOutcome};
pub use space::{ActivationMode, AlphaStore, OpKind, SearchSpaceConfig};
pub use tensor::Tensor;
