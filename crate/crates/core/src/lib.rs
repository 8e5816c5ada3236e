//! Attribution of digital videos to their source camera sensor.
//!
//! The pipeline estimates a compression-aware PRNU fingerprint per video
//! from decoded luminance frames and the decoder's macroblock coefficient
//! dump, suppresses scene detail with a non-linear enhancer, correlates
//! fingerprints pairwise and groups videos by device with average-linkage
//! clustering validated by the silhouette coefficient. A synthetic data
//! generator with known ground truth and TPR/ROC/AUC reporting close the
//! loop for evaluation.
//!
//! Numeric stages are generic over the [`Real`] scalar (`f32` or `f64`);
//! the concrete aliases below are what the command-line front end uses.

pub mod clustering;
pub mod coeffxml;
pub mod denoise;
mod dwt;
pub mod fingerprint;
pub mod frameio;
pub mod mat;
pub mod metrics;
pub mod scalar;
pub mod similarity;
pub mod synth;

pub use scalar::Real;

/// Default pipeline scalar: fingerprints are stored as 32-bit floats.
pub type Mat32 = mat::Matrix<f32>;
pub type Mat64 = mat::Matrix<f64>;
pub type Residual32 = denoise::NoiseResidual<f32>;
pub type Residual64 = denoise::NoiseResidual<f64>;
pub type Fingerprint32 = fingerprint::Fingerprint<f32>;
pub type Fingerprint64 = fingerprint::Fingerprint<f64>;
