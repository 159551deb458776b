//! Differentiable emulator and training engine for diffractive optical
//! neural networks (DONNs) whose per-pixel modulations are restricted to the
//! discrete levels of real calibrated devices.
//!
//! The crate covers:
//! - scalar-diffraction primitives with hand-derived adjoints ([`optics`]),
//! - relaxed discrete device selection with straight-through forwarding
//!   ([`gumbel`]) and temperature schedules ([`schedule`]),
//! - the batched training engine with exact reverse-mode gradients
//!   ([`engine`]),
//! - conventional quantization baselines PTQ / QAT / WSQ ([`quant`]),
//! - dataset ingestion and encoding ([`dataio`], [`synth`]),
//! - evaluation and export utilities ([`eval`]),
//! - checkpoint serialization ([`checkpoint`]).
//!
//! Batch samples are processed through deterministic fixed-chunk data
//! parallelism ([`exec`]); built with the `parallel` feature (default) the
//! chunks run on rayon, without it the same code runs sequentially with
//! bit-identical results.

pub mod checkpoint;
pub mod dataio;
pub mod device;
pub mod engine;
pub mod error;
pub mod eval;
pub mod exec;
pub mod fft;
pub mod field;
pub mod gradcheck;
pub mod gumbel;
pub mod model;
pub mod optics;
pub mod optim;
pub mod quant;
pub mod real;
pub mod schedule;
pub mod synth;

pub use error::{DonnError, Result};
pub use exec::ExecMode;
pub use real::Real;
