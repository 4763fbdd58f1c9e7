//! Correlated Bayesian additive regression trees (CBART) and the CBART-GP
//! model.
//!
//! The crate is organised bottom-up:
//!
//! * [`covariance`] builds error covariances Σ and their precision matrices
//!   (iid, AR(p), spatial exponential / Matérn).
//! * [`tree`] holds regression trees, their leaf-indicator ("dummy") design
//!   and birth/death proposals.
//! * [`cbart`] is the backfitting MCMC sampler conditioned on a fixed Σ.
//! * [`gp`] fits Gaussian-process error models by maximum likelihood and
//!   produces kriging predictions.
//! * [`twostage`] couples the two through weighted residuals.
//! * [`simgen`] generates the simulation designs, [`experiment`] runs
//!   seeded replications of them, and [`io`] reads/writes the CSV and JSON
//!   file formats used by the command-line tool.

pub mod cbart;
pub mod covariance;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod io;
pub mod optim;
pub mod rng;
pub mod simgen;
pub mod tree;
pub mod twostage;

pub use cbart::{run_cbart, CbartConfig, CbartFit};
pub use covariance::{CovarianceModel, Locations, MaternNu, PrecisionView};
pub use data::Covariates;
pub use error::{Error, Result};
pub use gp::{fit_gp_mle, GpFit, GpKind};
pub use simgen::SimDataset;
pub use tree::{DummyDesign, Proposal, Tree};
pub use twostage::{run_two_stage, TwoStageResult, WeightRecord};
