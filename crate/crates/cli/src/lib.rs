//! Library side of the `pitchfree` command: WAV IO, resampling and the batch
//! commands.

pub mod audio;
pub mod jobs;
