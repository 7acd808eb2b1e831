//! Deterministic voice anonymization primitives and a privacy-attack
//! evaluation harness.
//!
//! * [`f0`]: F0 contours, trailing moving average, mean reversion and
//!   SNR-calibrated white noise.
//! * [`prosody`]: per-phoneme pitch/energy multiplier randomization.
//! * [`embedding`]: speaker-embedding pools and anonymization strategies.
//! * [`eval`]: cosine-scored trials, EER, condition bands, synthetic
//!   populations and attack experiments.
//! * [`audio`]: 16-bit PCM WAV input and an autocorrelation F0 extractor.
//! * [`cli`]: the `vpc-anon` command-line front end.
//!
//! All randomness is seeded; see [`rng`] for the generator and variate
//! methods.

pub mod audio;
pub mod cli;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod f0;
pub mod numfmt;
pub mod prosody;
pub mod rng;

pub use error::{Error, Result};
