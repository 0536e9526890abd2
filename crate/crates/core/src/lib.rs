//! Pitch removal for whispered speech.
//!
//! The crate decomposes speech into a harmonic part (a filtered sawtooth driven
//! by a tracked F0 contour) and a noise part, and rebuilds pitched regions of a
//! recording from the noise model alone. Around that core sit two classical
//! whisper converters, objective metrics (VTR, MCD, RMS profiles, spectrogram
//! images) and corpus tooling for speaker-disjoint splits and statistics.
//!
//! Per-frame loops run on rayon when the `parallel` feature is enabled (the
//! default). Results are identical with and without it.

pub mod corpus;
mod error;
pub mod hn;
pub mod metrics;
mod par;
pub mod pitch;
pub mod signal;
pub mod whisperize;

pub use error::{Error, Result};
pub use hn::{decompose, estimate_params, HnDecomposition, SynthesisParams};
pub use pitch::{detect_f0, voiced_segments, vtr, F0Track, PitchConfig, PitchedSegment};
pub use signal::{FrameConfig, Waveform, Window};
pub use whisperize::{to_whisper_lpc, whisper_effect, whisperize, WhisperizeConfig};
