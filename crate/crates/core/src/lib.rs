//! Core of the mindbus brain-computer-interface drone pipeline.
//!
//! Numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the services use.

pub mod bridge;
pub mod classifier;
pub mod drone;
pub mod eval;
pub mod pipeline;
pub mod scalar;
pub mod signal;
pub mod synth;
pub mod vocab;

pub use scalar::Scalar;

pub type EegFrame64 = signal::EegFrame<f64>;
pub type EegWindow64 = signal::EegWindow<f64>;
pub type FeatureVector64 = signal::FeatureVector<f64>;
pub type BandPowers64 = signal::BandPowers<f64>;
pub type Profile64 = classifier::Profile<f64>;
pub type Pipeline64 = pipeline::Pipeline<f64>;
