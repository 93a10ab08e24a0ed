//! Temporal-pyramid diffusion engine.
//!
//! A diffusion (DDIM or flow matching) process is split into `K` stages; stage
//! `k` runs at `1 / 2^(k-1)` of the full frame rate, so only the last stage
//! works on every frame. Training targets per stage come from the closed-form
//! solution of the stage ODE under constant (aligned) noise, and inference
//! bridges stages with a covariance-matched renoising jump.
//!
//! The numeric core is generic over [`Scalar`] (`f32` / `f64`); the aliases
//! below fix the double-precision instantiation used by the harness.

pub mod alignment;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod quadrature;
pub mod sampler;
pub mod scalar;
pub mod schedules;
pub mod stagewise;
pub mod synthdata;
pub mod toymodel;
pub mod videoops;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Schedule = schedules::Schedule<f64>;
pub type Schedule32 = schedules::Schedule<f32>;
pub type VideoTensor = videoops::VideoTensor<f64>;
pub type VideoTensor32 = videoops::VideoTensor<f32>;
pub type StagePlan = stagewise::StagePlan<f64>;
pub type StagePlan32 = stagewise::StagePlan<f32>;
pub type StageSample = stagewise::StageSample<f64>;
pub type ToyDenoiser = toymodel::ToyDenoiser<f64>;
pub type ToyDenoiser32 = toymodel::ToyDenoiser<f32>;
pub type Dataset = synthdata::Dataset<f64>;
pub type SamplerConfig = sampler::SamplerConfig<f64>;
pub type RenoiseParams = sampler::RenoiseParams<f64>;
