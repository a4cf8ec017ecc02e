//! Pre-averaging estimation of integrated volatility from noisy
//! high-frequency observations, with Edgeworth-corrected studentized
//! inference, a diffusion simulator and a Monte Carlo study engine.

mod error;
mod quadrature;

pub mod estimate;
pub mod expansion;
pub mod experiments;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod weights;

pub use error::{Error, Result};
