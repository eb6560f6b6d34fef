//! Exact numerical simulator for adiabatic gates on the 8-ion quantum neural network.
//!
//! Units: ħ = 1 and energies in units of λ, so times are in ħ/λ.

pub mod calibrate;
pub mod config;
pub mod evolution;
pub mod gates;
pub mod output;
pub mod commands;
pub mod schedule;
pub mod spectral;
pub mod spin;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("operator is not Hermitian (relative defect {0:e})")]
    NotHermitian(f64),
    #[error("level {level} is ambiguous near s = {s}: consecutive overlap {overlap}")]
    LevelAmbiguity { level: usize, s: f64, overlap: f64 },
    #[error("integrator did not converge: distance {distance:e} > tol {tol:e} at {steps} steps")]
    NoConvergence { distance: f64, tol: f64, steps: usize, best: Box<evolution::EvolutionResult> },
    #[error("encoding check failed: {0}")]
    EncodingFailed(String),
    #[error("calibration failed: no candidate beats the classical limit")]
    CalibrationFailed(Box<calibrate::CalibrationOutcome>),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
