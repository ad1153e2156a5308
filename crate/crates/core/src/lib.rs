//! Galerkin / Wong–Zakai / entropy-variable simulator for stochastic
//! cross-diffusion population systems with superquadratic transition rates.

pub mod assumptions;
pub mod error;
pub mod galerkin;
pub mod model;
pub mod monitors;
pub mod noise;
pub mod oracle;
pub mod run;
pub mod stepper;

pub use assumptions::{LemmaCertificate, LemmaKind};
pub use error::{Error, Result};
pub use galerkin::{build_basis, BasisSet, GridSpec, MatrixKind, SpeciesField};
pub use model::{Dominance, ModelParams};
pub use monitors::{EnsembleEstimate, MonitorRow, RefinementKind, RefinementTable};
pub use noise::{BrownianPath, NoiseKind, NoiseModel};
pub use run::{InitialProfile, ProfileKind, RunConfig, Scheme, StepConfig};
pub use stepper::{EntropyField, TrajectoryRecord};
