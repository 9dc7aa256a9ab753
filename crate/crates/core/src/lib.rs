//! Covariance estimation from coarsely quantized samples.
//!
//! This crate implements a family of covariance matrix estimators that only
//! see two bits per sample entry, built around dithered quantization:
//!
//! * [`estimators::sample_cov`] — the full-precision sample covariance,
//!   used as the reference everything else is compared against.
//! * [`estimators::est_na`] / [`estimators::est_adaptive_na`] — sign
//!   quantization with uniform dither, at a fixed scale or with a
//!   running-average data-driven scale.
//! * [`estimators::est_mb`] / [`estimators::est_tb`] — uniform multi-bit and
//!   two-bit quantization with triangular dither at a common scale.
//! * [`estimators::est_pf`] — the parameter-free estimator: two-bit
//!   quantization with per-coordinate scales taken from the column maxima of
//!   the data itself, optionally shrunk by a common factor.
//! * [`estimators::est_adaptive_sign`] — the sign-quantizer analogue of the
//!   parameter-free construction.
//!
//! Supporting modules provide dense symmetric linear algebra ([`linalg`]),
//! the scalar quantizers and dither generators ([`quant`]), the packed
//! two-bit batch codec ([`codec`]), seeded multivariate Gaussian sampling
//! ([`sampling`]), a deterministic Monte Carlo sweep harness with CSV output
//! ([`experiments`]), and randomized self-checks of the quantization noise
//! model ([`verify`]).
//!
//! All randomness flows through explicit, caller-owned streams, so every
//! result is reproducible from a seed regardless of thread count. The
//! `parallel` feature (on by default) runs sweep cells on a rayon pool;
//! disabling it leaves a purely sequential harness with identical output.

pub mod codec;
pub mod estimators;
pub mod experiments;
pub mod linalg;
pub mod quant;
pub mod sampling;
pub mod verify;

pub use estimators::EstimatorSpec;
pub use linalg::{SigmaSpec, SymMatrix};
pub use quant::QuantizedBatch;
pub use sampling::{SampleBatch, SeedSpec};
