//! Spectral anomaly scoring and flow-matching mask refinement.

pub mod attention;
pub mod classifier;
pub mod error;
pub mod features;
pub mod flow;
pub mod grid;
pub mod metrics;
pub mod pipeline;
pub mod rmt;
pub mod rng;
pub mod spiked;

pub use error::{Error, Result};
pub use features::FeatureMatrix;
pub use grid::{Grid, Mask};
pub use rmt::{mp_bounds, spectral_report, MPParams, SpectralReport};
