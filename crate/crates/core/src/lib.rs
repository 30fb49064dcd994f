//! Fitting of NPH distributions, scale mixtures of phase-type laws, by EM.

pub mod censoring;
pub mod curves;
pub mod data;
pub mod em;
pub mod error;
pub mod kl;
pub mod matrix;
pub mod model;
pub mod model_file;
mod parallel;
pub mod phase_type;
pub mod scaling;
mod van_loan;

pub use censoring::{e_step_censored, fit_censored};
pub use data::{CensoredObservation, CsvKind, Dataset, Representative, WeightedObservation};
pub use em::{fit, fit_erlang_mixture, EmConfig, FitResult, SufficientStats};
pub use error::{NphError, Result};
pub use kl::{fit_distribution, quadrature_nodes, TargetDistribution};
pub use matrix::SquareMatrix;
pub use model::{LogLikelihood, NphModel};
pub use parallel::set_thread_count;
pub use phase_type::PhaseTypeRep;
pub use scaling::{FamilyKind, ScalingFamily};
