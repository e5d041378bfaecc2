//! Five-factor economic scenario generator.
//!
//! Joint simulation of a CIR short rate, its stochastic market price of risk, a
//! stock, a default intensity, a convenience yield and the state-price deflator,
//! with Euler, Milstein and second-order weak schemes and closed-form references.

pub mod analytic;
pub mod correlation;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod rng;
pub mod schemes;
pub mod stats;

pub use correlation::{CorrelationSpec, LoadingMatrix};
pub use dynamics::{ModeFlags, ModelParams, StateVector};
pub use error::{EsgError, Result};
pub use schemes::{SchemeKind, TimeGrid};
