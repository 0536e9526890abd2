//! Whisper converters.
//!
//! [`whisperize`] is the pitch-aware segment replacement: voiced regions are
//! located with the F0 tracker, decomposed into harmonic and noise parts, and
//! rebuilt from the noise model alone, with equal-power crossfades where a
//! replaced region meets untouched audio. Everything outside replaced regions
//! is copied bit for bit.
//!
//! [`whisper_effect`] (high-pass plus white noise) and [`to_whisper_lpc`]
//! (noise through a per-frame LPC vocal-tract filter) are the classical
//! baselines.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::hn::{decompose_with_params, synthesize_noise};
use crate::pitch::{
    detect_f0_with, voiced_segments, PitchConfig, PitchedSegment, DEFAULT_MERGE_GAP_FRAMES,
    DEFAULT_MIN_VOICED_FRAMES,
};
use crate::signal::{apply_window_with, raw_frame, wola, FrameConfig, Waveform};
use crate::{par, Error, Result};

pub const DEFAULT_CROSSFADE_MS: f64 = 10.0;
pub const DEFAULT_CUTOFF_HZ: f64 = 800.0;
pub const DEFAULT_NOISE_GAIN: f64 = 0.02;
pub const DEFAULT_LPC_ORDER: usize = 24;
pub const PRE_EMPHASIS: f64 = 0.97;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhisperizeConfig {
    pub frame: FrameConfig,
    pub pitch: PitchConfig,
    pub min_voiced_frames: usize,
    pub merge_gap_frames: usize,
    pub crossfade_ms: f64,
    /// Scale each replacement to the RMS of the segment it replaces.
    pub noise_gain_match: bool,
    pub seed: u64,
}

impl Default for WhisperizeConfig {
    fn default() -> Self {
        Self {
            frame: FrameConfig::default(),
            pitch: PitchConfig::default(),
            min_voiced_frames: DEFAULT_MIN_VOICED_FRAMES,
            merge_gap_frames: DEFAULT_MERGE_GAP_FRAMES,
            crossfade_ms: DEFAULT_CROSSFADE_MS,
            noise_gain_match: true,
            seed: 0,
        }
    }
}

/// What [`whisperize_with_report`] replaced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WhisperizeReport {
    pub segments: Vec<PitchedSegment>,
}

pub fn whisperize(w: &Waveform, cfg: &WhisperizeConfig) -> Result<Waveform> {
    whisperize_with_report(w, cfg).map(|(out, _)| out)
}

pub fn whisperize_with_report(w: &Waveform, cfg: &WhisperizeConfig) -> Result<(Waveform, WhisperizeReport)> {
    if w.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(cfg.crossfade_ms >= 0.0 && cfg.crossfade_ms.is_finite()) {
        return Err(Error::config("crossfade_ms must be a non-negative number"));
    }
    let track = detect_f0_with(w, &cfg.frame, &cfg.pitch)?;
    let segments = voiced_segments(&track, cfg.min_voiced_frames, cfg.merge_gap_frames);
    if segments.is_empty() {
        return Ok((w.clone(), WhisperizeReport::default()));
    }

    let replacements = par::map_indexed(segments.len(), |i| replacement_for(w, &segments[i], cfg, i));
    let crossfade = (cfg.crossfade_ms * f64::from(w.sample_rate()) / 1000.0).round() as usize;
    let mut out = w.samples().to_vec();
    for (seg, repl) in segments.iter().zip(replacements) {
        let repl = repl?;
        splice(&mut out, seg, &repl, crossfade);
    }
    Ok((Waveform::new(out, w.sample_rate())?, WhisperizeReport { segments }))
}

/// Noise-model rebuild of one pitched segment.
fn replacement_for(w: &Waveform, seg: &PitchedSegment, cfg: &WhisperizeConfig, index: usize) -> Result<Vec<f64>> {
    let source = w.slice(seg.start_sample..seg.end_sample);
    let track = detect_f0_with(&source, &cfg.frame, &cfg.pitch)?;
    let (_, params) = decompose_with_params(&source, &track, &cfg.frame)?;
    let seed = par::mix_seed(cfg.seed, seg.start_sample as u64 ^ ((index as u64) << 48));
    let noise = synthesize_noise(&params.noise_taps, &cfg.frame, source.len(), source.sample_rate(), seed)?;
    let mut samples = noise.into_samples();
    if cfg.noise_gain_match {
        let target = source.rms();
        let have = rms(&samples);
        if have > 0.0 {
            let g = target / have;
            samples.iter_mut().for_each(|s| *s *= g);
        }
    }
    Ok(samples)
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }
}

/// Writes `repl` over the segment, with sine/cosine ramps at boundaries that
/// touch untouched audio. Ramps sit inside the segment.
fn splice(out: &mut [f64], seg: &PitchedSegment, repl: &[f64], crossfade: usize) {
    let len = seg.len();
    let xf = crossfade.min(len / 2);
    let fade_in = seg.start_sample > 0;
    let fade_out = seg.end_sample < out.len();
    for (i, &r) in repl.iter().enumerate() {
        let pos = seg.start_sample + i;
        let ramp = if fade_in && i < xf {
            Some((i as f64 + 0.5) / xf as f64)
        } else if fade_out && len - i <= xf {
            Some(((len - i) as f64 - 0.5) / xf as f64)
        } else {
            None
        };
        out[pos] = match ramp {
            Some(t) => {
                let theta = t * PI / 2.0;
                theta.cos() * out[pos] + theta.sin() * r
            }
            None => r,
        };
    }
}

/// Second-order section, transposed direct form II.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl Biquad {
    fn highpass(cutoff_hz: f64, q: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 + cos) / 2.0 / a0, -(1.0 + cos) / a0, (1.0 + cos) / 2.0 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
            z: [0.0; 2],
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }
}

/// Fourth-order Butterworth high-pass followed by added uniform white noise
/// of peak amplitude `noise_gain`.
pub fn whisper_effect(w: &Waveform, cutoff_hz: f64, noise_gain: f64, seed: u64) -> Result<Waveform> {
    let sr = f64::from(w.sample_rate());
    if !(cutoff_hz > 0.0 && cutoff_hz < sr / 2.0) {
        return Err(Error::config(format!("cutoff {cutoff_hz} Hz outside (0, {})", sr / 2.0)));
    }
    if !(noise_gain >= 0.0 && noise_gain.is_finite()) {
        return Err(Error::config("noise_gain must be a non-negative number"));
    }
    let mut sections = [
        Biquad::highpass(cutoff_hz, 1.0 / (2.0 * (PI / 8.0).cos()), sr),
        Biquad::highpass(cutoff_hz, 1.0 / (2.0 * (3.0 * PI / 8.0).cos()), sr),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = w
        .samples()
        .iter()
        .map(|&x| {
            let y = sections.iter_mut().fold(x, |acc, s| s.process(acc));
            let n: f64 = rng.random_range(-1.0..=1.0);
            y + noise_gain * n
        })
        .collect();
    Waveform::new(out, w.sample_rate())
}

/// All-pole model `1 / A(z)` with `A(z) = 1 + sum a_k z^-k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lpc {
    /// `a[0] = 1`.
    pub coeffs: Vec<f64>,
    /// Final prediction-error energy, in the units of `r[0]`.
    pub error: f64,
}

impl Lpc {
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// `|1 / A(e^jw)|` at `freq_hz`.
    pub fn inverse_magnitude(&self, freq_hz: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        let (mut re, mut im) = (0.0, 0.0);
        for (k, a) in self.coeffs.iter().enumerate() {
            re += a * (w * k as f64).cos();
            im -= a * (w * k as f64).sin();
        }
        1.0 / (re * re + im * im).sqrt()
    }
}

/// Biased autocorrelation `r[0..=max_lag]`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|lag| {
            if lag >= x.len() {
                0.0
            } else {
                x[..x.len() - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum()
            }
        })
        .collect()
}

/// Levinson-Durbin recursion. `None` for zero energy or when a reflection
/// coefficient reaches the unit circle.
pub fn levinson_durbin(r: &[f64], order: usize) -> Option<Lpc> {
    if r.len() <= order || r[0] <= 0.0 || !r[0].is_finite() {
        return None;
    }
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut err = r[0];
    for i in 1..=order {
        let acc: f64 = (1..i).map(|j| a[j] * r[i - j]).sum::<f64>() + r[i];
        let k = -acc / err;
        if !k.is_finite() || k.abs() >= 1.0 {
            return None;
        }
        let prev = a.clone();
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        if err <= 0.0 {
            return None;
        }
    }
    Some(Lpc { coeffs: a, error: err })
}

/// LPC baseline: per frame, an order-`order` all-pole fit of the pre-emphasized
/// signal is driven by seeded Gaussian noise at the frame's residual level.
/// Frames are recombined by weighted overlap-add and de-emphasized.
pub fn to_whisper_lpc(w: &Waveform, order: usize, cfg: &FrameConfig, seed: u64) -> Result<Waveform> {
    cfg.validate()?;
    if order < 2 {
        return Err(Error::config("LPC order must be at least 2"));
    }
    if cfg.frame_length <= 2 * order {
        return Err(Error::config(format!(
            "frame length {} must exceed twice the LPC order {order}",
            cfg.frame_length
        )));
    }
    if w.is_empty() {
        return Waveform::new(Vec::new(), w.sample_rate());
    }
    let x = w.samples();
    let emphasized: Vec<f64> = (0..x.len())
        .map(|i| x[i] - if i > 0 { PRE_EMPHASIS * x[i - 1] } else { 0.0 })
        .collect();
    let window = cfg.window_coefficients();
    let window_energy: f64 = window.iter().map(|v| v * v).sum();
    let level = 1.0 / cfg.incoherent_wola_ratio().sqrt();
    let n = cfg.frame_length;
    let warmup = n / 4;

    let frames = par::map_indexed(cfg.frame_count(x.len()), |j| {
        let frame = apply_window_with(&raw_frame(&emphasized, cfg, j), &window);
        let Some(lpc) = levinson_durbin(&autocorrelation(&frame, order), order) else {
            return vec![0.0; n];
        };
        let gain = (lpc.error / window_energy).sqrt() * level;
        let mut rng = ChaCha8Rng::seed_from_u64(par::mix_seed(seed, j as u64));
        let mut y = vec![0.0; warmup + n];
        for i in 0..y.len() {
            let u: f64 = rng.sample(StandardNormal);
            let feedback: f64 = (1..=order.min(i)).map(|k| lpc.coeffs[k] * y[i - k]).sum();
            y[i] = gain * u - feedback;
        }
        apply_window_with(&y[warmup..], &window)
    });
    let synth = wola(&frames, cfg, x.len())?;
    let mut out = Vec::with_capacity(synth.len());
    let mut prev = 0.0;
    for v in synth {
        prev = v + PRE_EMPHASIS * prev;
        out.push(prev);
    }
    Waveform::new(out, w.sample_rate())
}
