//! Iterate-averaged 3DVAR and Kalman filtering for linear inverse problems
//! with repeated noisy observations `y_n = A u + eta_n`.
//!
//! The crate covers the spectral filter functions behind the averaged
//! iterates, diagonal and dense problem models, the filters themselves,
//! closed-form bias/variance oracles, predicted convergence exponents and a
//! reproducible experiment runner.

pub mod config;
pub mod error;
pub mod experiments;
pub mod filters;
pub mod model;
pub mod oracle;
pub mod output;
pub mod rates;
pub mod spectral;

pub use config::{ExperimentConfig, ExperimentKind, OutputFormat, Preset};
pub use error::{Error, Result};
pub use experiments::{run_experiment, ExperimentOutput};
pub use filters::{run_filter, FilterKind, KalmanState, ThreeDVarState};
pub use model::{EigenSequence, NoiseStream, OperatorRep, ProblemSpec};
pub use output::{ResultRow, ResultTable};
pub use spectral::RegFilterParams;
