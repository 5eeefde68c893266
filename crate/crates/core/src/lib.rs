//! Hopfield-style recurrent networks trained with local predictive-coding
//! dynamics, plus the tools to check that they behave as content-addressable
//! memories: perturbation and random-start studies, linear stability analysis
//! of the trained equilibria, and a classical Hebbian Hopfield network used as
//! a behavioural reference.

pub mod activation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod format;
pub mod hopfield;
pub mod learning;
pub mod network;
pub mod rng;
pub mod stability;

pub use activation::Activation;
pub use config::{Architecture, RunConfig};
pub use error::{PchnError, Result};
pub use experiments::{StudyConfig, TargetKind, TargetSet};
pub use hopfield::HopfieldNet;
pub use learning::{TrainingReport, TrainingSchedule};
pub use network::{
    Connection, CorrectionMode, EquilibriumRun, ErrorMode, Hyperparams, Network, Population,
    TimeConstantOverrides,
};
pub use stability::SpectrumReport;
