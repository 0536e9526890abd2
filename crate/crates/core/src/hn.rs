//! Harmonic-plus-noise decomposition and subtractive synthesis.
//!
//! The harmonic branch is a band-limited sawtooth, `sum_k sin(phi_k) / k`,
//! whose phases accumulate the upsampled F0 contour, shaped per frame by a
//! linear time-varying FIR filter. The noise branch filters per-frame uniform
//! noise in [-1, 1] with a second bank of FIR filters. Both branches share the
//! centered frame grid of [`crate::signal`]: each frame is analysis-windowed,
//! convolved with its taps, synthesis-windowed, and the frames are
//! overlap-added and normalized by the summed squared window.
//!
//! # Tap convention
//!
//! Tap vectors are centered: index `L/2` is lag zero, so a unit impulse at
//! `L/2` is the identity filter and the filtered output is not delayed.
//!
//! # Parameter estimation
//!
//! Filters are estimated deterministically from the signal and an F0 track:
//!
//! * harmonic taps: per voiced frame, the complex amplitudes `S_k` of the
//!   source and `E_k` of the sawtooth excitation are measured at every
//!   harmonic of the frame F0. The taps are the smallest (ridge-regularized)
//!   real filter with `S_k = H(w_k) E_k` at all harmonics, so magnitude and
//!   phase are both matched and slow drift between the tracked and the true
//!   F0 is absorbed frame by frame. The taps are pre-compensated for the lag
//!   taper that windowed overlap-add imposes, then scaled by the
//!   least-squares gain (at most 1) of the frame's output against the source
//!   inside the signal, which tames reflect-padded edge frames.
//! * excitation: the phase keeps running through unvoiced stretches at the
//!   nearest voiced F0, so a voiced run resumes in phase with a steady source;
//!   unvoiced samples are silent.
//! * noise taps: the residual (source minus harmonic branch) is cepstrally
//!   smoothed (lifter order 40) into a magnitude envelope, bias-corrected for
//!   the mean of a log-Rayleigh variable, and scaled so that filtered uniform
//!   noise reproduces the residual's power spectrum after overlap-add.
//!
//! Noise taps are linear-phase, designed by frequency sampling with a Hann
//! taper.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::pitch::F0Track;
use crate::signal::{apply_window_with, raw_frame, wola, FftPair, FrameConfig, Waveform, LOG_FLOOR};
use crate::{par, Error, Result};

pub const DEFAULT_TAP_LENGTH: usize = 256;
pub const LIFTER_ORDER: usize = 40;
pub const NYQUIST_MARGIN_HZ: f64 = 100.0;
pub const MAX_HARMONICS: usize = 128;

/// Variance of uniform noise on [-1, 1].
const UNIFORM_VARIANCE: f64 = 1.0 / 3.0;
/// Relative ridge added to the harmonic tap system.
const RIDGE: f64 = 1e-4;
/// Half the Euler-Mascheroni constant: `E[ln |X|]` of a complex Gaussian
/// sits this far below `ln` of its RMS.
const LOG_RAYLEIGH_BIAS: f64 = 0.577_215_664_901_532_9 / 2.0;

/// How many harmonics the sawtooth carries at a given F0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HarmonicPolicy {
    /// Exactly `K` harmonics, minus any at or above Nyquist.
    Fixed(usize),
    /// `floor((sr/2 - margin_hz) / f0)` harmonics, capped.
    Dynamic { margin_hz: f64, cap: usize },
}

impl Default for HarmonicPolicy {
    fn default() -> Self {
        HarmonicPolicy::Dynamic {
            margin_hz: NYQUIST_MARGIN_HZ,
            cap: MAX_HARMONICS,
        }
    }
}

impl HarmonicPolicy {
    pub fn count(self, f0: f64, sample_rate: u32) -> usize {
        if f0 <= 0.0 {
            return 0;
        }
        let nyquist = f64::from(sample_rate) / 2.0;
        let below_nyquist = ((nyquist / f0).ceil() as usize).saturating_sub(1);
        match self {
            HarmonicPolicy::Fixed(k) => k.min(below_nyquist),
            HarmonicPolicy::Dynamic { margin_hz, cap } => {
                let k = ((nyquist - margin_hz) / f0).floor().max(0.0) as usize;
                k.min(cap).min(below_nyquist)
            }
        }
    }
}

/// Starting phase of each harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialPhase {
    #[default]
    Zero,
    /// Uniform in [0, 2 pi) per harmonic, drawn from the seed.
    Seeded(u64),
}

impl InitialPhase {
    fn phases(self, count: usize) -> Vec<f64> {
        match self {
            InitialPhase::Zero => vec![0.0; count],
            InitialPhase::Seeded(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..count).map(|_| rng.random_range(0.0..2.0 * PI)).collect()
            }
        }
    }
}

/// Running phase of harmonic `k` in radians.
///
/// `phi[0] = initial_phase` and `phi[i] = phi[i-1] + 2 pi k f0[i-1] / sr`: each
/// sample advances the phase by the instantaneous frequency of the sample
/// before it. The result is not wrapped.
pub fn cumulative_phase(f0_per_sample: &[f64], k: usize, sample_rate: u32, initial_phase: f64) -> Vec<f64> {
    let sr = f64::from(sample_rate);
    let mut cycles = 0.0;
    f0_per_sample
        .iter()
        .map(|&f| {
            let phi = initial_phase + 2.0 * PI * cycles;
            cycles += k as f64 * f / sr;
            phi
        })
        .collect()
}

/// Band-limited sawtooth `sum_k sin(phi_k[i]) / k`.
///
/// The harmonic count follows `policy` per sample; samples with zero F0 are
/// silent. Phases are accumulated in wrapped cycles of the fundamental, which
/// keeps the result accurate over long signals.
pub fn sawtooth_excitation(f0_per_sample: &[f64], sample_rate: u32, policy: HarmonicPolicy) -> Result<Waveform> {
    sawtooth_excitation_with(f0_per_sample, sample_rate, policy, InitialPhase::Zero)
}

pub fn sawtooth_excitation_with(
    f0_per_sample: &[f64],
    sample_rate: u32,
    policy: HarmonicPolicy,
    initial: InitialPhase,
) -> Result<Waveform> {
    if let Some(i) = f0_per_sample.iter().position(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::input(format!("invalid F0 at sample {i}")));
    }
    let sr = f64::from(sample_rate);
    let max_k = f0_per_sample
        .iter()
        .map(|&f| policy.count(f, sample_rate))
        .max()
        .unwrap_or(0);
    let offsets = initial.phases(max_k);
    let mut cycle = 0.0_f64;
    let samples = f0_per_sample
        .iter()
        .map(|&f| {
            let k_max = policy.count(f, sample_rate);
            let mut acc = 0.0;
            for k in 1..=k_max {
                let frac = (k as f64 * cycle).fract();
                acc += (2.0 * PI * frac + offsets[k - 1]).sin() / k as f64;
            }
            cycle = (cycle + f / sr).fract();
            acc
        })
        .collect();
    Waveform::new(samples, sample_rate)
}

/// Frame-rate F0 to sample rate.
///
/// A sample takes the voicing of its nearest frame center; voiced samples
/// interpolate linearly between the two surrounding frame centers, holding the
/// voiced neighbour's value when the other is unvoiced and holding the end
/// values outside the first and last centers.
pub fn upsample_f0(t: &F0Track, n_samples: usize) -> Vec<f64> {
    let hop = t.config.hop_length;
    let n = t.len();
    if n == 0 {
        return vec![0.0; n_samples];
    }
    (0..n_samples)
        .map(|s| {
            let nearest = ((s + hop / 2) / hop).min(n - 1);
            if !t.voiced[nearest] {
                return 0.0;
            }
            let left = (s / hop).min(n - 1);
            let right = (left + 1).min(n - 1);
            match (t.voiced[left], t.voiced[right]) {
                (true, true) if right != left => {
                    let frac = (s - left * hop) as f64 / hop as f64;
                    t.f0_hz[left] + frac * (t.f0_hz[right] - t.f0_hz[left])
                }
                (true, _) => t.f0_hz[left],
                (false, _) => t.f0_hz[right],
            }
        })
        .collect()
}

/// The harmonic-branch excitation for a track: the sawtooth of
/// [`upsample_f0`], except that the phase keeps advancing through unvoiced
/// samples at the nearest voiced frame's F0. Unvoiced samples stay silent.
/// A voiced run therefore resumes in phase with a steady source instead of
/// restarting at zero.
fn harmonic_excitation(t: &F0Track, n_samples: usize, sample_rate: u32) -> Result<Waveform> {
    let gate = upsample_f0(t, n_samples);
    let voiced: Vec<usize> = (0..t.len()).filter(|&j| t.voiced[j] && t.f0_hz[j] > 0.0).collect();
    if voiced.is_empty() {
        return Waveform::new(vec![0.0; n_samples], sample_rate);
    }
    let hop = t.config.hop_length;
    let drive: Vec<f64> = gate
        .iter()
        .enumerate()
        .map(|(s, &f)| {
            if f > 0.0 {
                return f;
            }
            let frame = (s + hop / 2) / hop;
            let nearest = match voiced.binary_search(&frame) {
                Ok(i) => voiced[i],
                Err(0) => voiced[0],
                Err(i) if i == voiced.len() => voiced[i - 1],
                Err(i) => {
                    if frame - voiced[i - 1] <= voiced[i] - frame {
                        voiced[i - 1]
                    } else {
                        voiced[i]
                    }
                }
            };
            t.f0_hz[nearest]
        })
        .collect();
    let saw = sawtooth_excitation(&drive, sample_rate, HarmonicPolicy::default())?;
    let gated = saw
        .samples()
        .iter()
        .zip(&gate)
        .map(|(&x, &f)| if f > 0.0 { x } else { 0.0 })
        .collect();
    Waveform::new(gated, sample_rate)
}

/// A unit impulse at the center tap: the identity filter.
pub fn unit_impulse(len: usize) -> Vec<f64> {
    let mut taps = vec![0.0; len];
    taps[len / 2] = 1.0;
    taps
}

fn check_taps(taps: &[Vec<f64>], frames: usize) -> Result<usize> {
    if taps.len() != frames {
        return Err(Error::input(format!(
            "{} tap vectors for {frames} frames",
            taps.len()
        )));
    }
    let len = taps.first().map_or(0, Vec::len);
    for (j, t) in taps.iter().enumerate() {
        if t.len() != len {
            return Err(Error::input(format!("frame {j} has {} taps, expected {len}", t.len())));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("frame {j} has non-finite taps")));
        }
    }
    if frames > 0 && len == 0 {
        return Err(Error::input("tap vectors are empty"));
    }
    Ok(len)
}

/// Filters analysis-windowed input frames with their taps and recombines them.
struct FrameFilter {
    cfg: FrameConfig,
    window: Vec<f64>,
    tap_len: usize,
    fft: FftPair,
}

impl FrameFilter {
    fn new(cfg: &FrameConfig, tap_len: usize) -> Self {
        let n = (cfg.frame_length + tap_len).next_power_of_two();
        Self {
            cfg: *cfg,
            window: cfg.window_coefficients(),
            tap_len,
            fft: FftPair::new(n),
        }
    }

    /// `w * trunc(conv(w * frame, taps))`, with the center tap as lag zero.
    fn filter_frame(&self, frame: &[f64], taps: &[f64]) -> Vec<f64> {
        let n = self.cfg.frame_length;
        if taps.iter().all(|&t| t == 0.0) {
            return vec![0.0; n];
        }
        let x = self.fft.forward_real(&apply_window_with(frame, &self.window));
        let h = self.fft.forward_real(taps);
        let prod: Vec<Complex64> = x.iter().zip(&h).map(|(a, b)| a * b).collect();
        let conv = self.fft.inverse_real(prod);
        let delay = self.tap_len / 2;
        (0..n).map(|i| self.window[i] * conv[i + delay]).collect()
    }

    fn run<F>(&self, taps: &[Vec<f64>], len: usize, frame_source: F) -> Result<Vec<f64>>
    where
        F: Fn(usize) -> Vec<f64> + Sync + Send,
    {
        let frames = par::map_indexed(taps.len(), |j| self.filter_frame(&frame_source(j), &taps[j]));
        wola(&frames, &self.cfg, len)
    }
}

/// Linear time-varying FIR filtering of `excitation`, one tap vector per frame.
pub fn ltv_fir_filter(excitation: &Waveform, taps_per_frame: &[Vec<f64>], cfg: &FrameConfig) -> Result<Waveform> {
    cfg.validate()?;
    let frames = cfg.frame_count(excitation.len());
    let tap_len = check_taps(taps_per_frame, frames)?;
    if frames == 0 {
        return Waveform::new(Vec::new(), excitation.sample_rate());
    }
    let filter = FrameFilter::new(cfg, tap_len);
    let out = filter.run(taps_per_frame, excitation.len(), |j| raw_frame(excitation.samples(), cfg, j))?;
    Waveform::new(out, excitation.sample_rate())
}

/// The uniform [-1, 1] noise block used for frame `index` under `seed`.
pub fn noise_frame(seed: u64, index: usize, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(par::mix_seed(seed, index as u64));
    (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Filtered-noise branch: per frame, fresh seeded uniform noise is shaped by
/// that frame's taps; frames are recombined like [`ltv_fir_filter`].
pub fn synthesize_noise(
    noise_taps: &[Vec<f64>],
    cfg: &FrameConfig,
    n_samples: usize,
    sample_rate: u32,
    seed: u64,
) -> Result<Waveform> {
    cfg.validate()?;
    let frames = cfg.frame_count(n_samples);
    let tap_len = check_taps(noise_taps, frames)?;
    if frames == 0 {
        return Waveform::new(Vec::new(), sample_rate);
    }
    let filter = FrameFilter::new(cfg, tap_len);
    let out = filter.run(noise_taps, n_samples, |j| noise_frame(seed, j, cfg.frame_length))?;
    Waveform::new(out, sample_rate)
}

/// Per-frame synthesis parameters: F0, harmonic taps and noise taps.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisParams {
    pub f0_per_frame: Vec<f64>,
    pub harmonic_taps: Vec<Vec<f64>>,
    pub noise_taps: Vec<Vec<f64>>,
    pub config: FrameConfig,
}

impl SynthesisParams {
    pub fn n_frames(&self) -> usize {
        self.f0_per_frame.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_frames();
        check_taps(&self.harmonic_taps, n)?;
        check_taps(&self.noise_taps, n)?;
        Ok(())
    }

    /// Debug dump, one frame per line: `f0<TAB>harmonic taps<TAB>noise taps`,
    /// taps space-separated, after a `#` header with the frame geometry.
    /// Values use the shortest exact representation, so the text round-trips.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# frame_length={} hop_length={} harmonic_taps={} noise_taps={}\n",
            self.config.frame_length,
            self.config.hop_length,
            self.harmonic_taps.first().map_or(0, Vec::len),
            self.noise_taps.first().map_or(0, Vec::len),
        );
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        for j in 0..self.n_frames() {
            let _ = writeln!(
                s,
                "{}\t{}\t{}",
                self.f0_per_frame[j],
                join(&self.harmonic_taps[j]),
                join(&self.noise_taps[j])
            );
        }
        s
    }

    /// Parses [`SynthesisParams::to_text`] output. The window is taken from
    /// `window` since the dump does not record it.
    pub fn from_text(text: &str, window: crate::signal::Window) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::EmptyInput)?;
        let field = |name: &str| -> Result<usize> {
            header
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(name)?.strip_prefix('=')?.parse().ok())
                .ok_or_else(|| Error::input(format!("header lacks {name}")))
        };
        let config = FrameConfig::new(field("frame_length")?, field("hop_length")?, window)?;
        let parse_vec = |s: &str, line: usize| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|v| v.parse().map_err(|_| Error::input(format!("line {line}: bad number {v:?}"))))
                .collect()
        };
        let mut p = SynthesisParams {
            f0_per_frame: Vec::new(),
            harmonic_taps: Vec::new(),
            noise_taps: Vec::new(),
            config,
        };
        for (i, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::input(format!("line {}: expected 3 tab-separated fields", i + 2)));
            }
            p.f0_per_frame
                .push(cols[0].parse().map_err(|_| Error::input(format!("line {}: bad f0", i + 2)))?);
            p.harmonic_taps.push(parse_vec(cols[1], i + 2)?);
            p.noise_taps.push(parse_vec(cols[2], i + 2)?);
        }
        p.validate()?;
        Ok(p)
    }
}

/// Harmonic, noise and source waveforms with `harmonic + noise = source`.
#[derive(Debug, Clone, PartialEq)]
pub struct HnDecomposition {
    pub harmonic: Waveform,
    pub noise: Waveform,
    pub source: Waveform,
}

fn check_alignment(w: &Waveform, t: &F0Track, cfg: &FrameConfig) -> Result<()> {
    cfg.validate()?;
    if t.sample_rate != w.sample_rate() {
        return Err(Error::input(format!(
            "track at {} Hz, waveform at {} Hz",
            t.sample_rate,
            w.sample_rate()
        )));
    }
    if t.config.hop_length != cfg.hop_length || t.len() != cfg.frame_count(w.len()) {
        return Err(Error::input(format!(
            "track has {} frames at hop {}, waveform needs {} at hop {}",
            t.len(),
            t.config.hop_length,
            cfg.frame_count(w.len()),
            cfg.hop_length
        )));
    }
    Ok(())
}

/// Linear-phase FIR by frequency sampling.
///
/// `magnitude(f_hz)` gives the desired gain; the response is delayed by
/// `L/2 + lag` samples and tapered by a Hann window centered on that delay,
/// narrowed as needed to stay inside the tap vector.
fn design_fir(len: usize, sample_rate: u32, lag: f64, magnitude: impl Fn(f64) -> f64, fft: &FftPair) -> Vec<f64> {
    let sr = f64::from(sample_rate);
    let center = (len / 2) as f64 + lag;
    let mut spec = vec![Complex64::new(0.0, 0.0); len];
    for m in 0..=len / 2 {
        let a = magnitude(m as f64 * sr / len as f64);
        let phase = -2.0 * PI * m as f64 * center / len as f64;
        spec[m] = Complex64::from_polar(a, phase);
        if m > 0 && m < len - m {
            spec[len - m] = spec[m].conj();
        }
    }
    if len % 2 == 0 {
        spec[len / 2] = Complex64::new(spec[len / 2].re, 0.0);
    }
    let raw = fft.inverse_real(spec);
    let half_width = (len / 2) as f64 - lag.abs().ceil();
    raw.iter()
        .enumerate()
        .map(|(n, &h)| {
            let u = (n as f64 - center) / half_width;
            if u.abs() < 1.0 {
                h * (0.5 + 0.5 * (PI * u).cos())
            } else {
                0.0
            }
        })
        .collect()
}

/// Complex amplitude of a windowed frame at `omega` rad/sample.
fn project(frame: &[f64], omega: f64) -> Complex64 {
    let step = Complex64::from_polar(1.0, -omega);
    let mut rot = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for (n, &x) in frame.iter().enumerate() {
        if n % 256 == 0 {
            rot = Complex64::from_polar(1.0, -omega * n as f64);
        }
        acc += rot * x;
        rot *= step;
    }
    acc
}

fn lag_taper(window: &[f64], lags: usize) -> Vec<f64> {
    let energy: f64 = window.iter().map(|w| w * w).sum();
    (0..lags)
        .map(|d| window.iter().zip(window.iter().skip(d)).map(|(a, b)| a * b).sum::<f64>() / energy)
        .collect()
}

struct Estimator<'a> {
    cfg: FrameConfig,
    sample_rate: u32,
    tap_len: usize,
    window: Vec<f64>,
    frame_fft: FftPair,
    tap_fft: FftPair,
    /// `sum w[n] w[n + d] / sum w[n]^2`.
    lag_taper: Vec<f64>,
    filter: FrameFilter,
    source: &'a Waveform,
}

impl Estimator<'_> {
    fn harmonic_taps(&self, excitation: &[f64], j: usize, f0: f64) -> Vec<f64> {
        let zero = vec![0.0; self.tap_len];
        let k_max = HarmonicPolicy::default().count(f0, self.sample_rate);
        if k_max == 0 {
            return zero;
        }
        let raw_s = raw_frame(self.source.samples(), &self.cfg, j);
        let raw_e = raw_frame(excitation, &self.cfg, j);
        let s = apply_window_with(&raw_s, &self.window);
        let e = apply_window_with(&raw_e, &self.window);
        let sr = f64::from(self.sample_rate);
        let harmonics: Vec<(f64, Complex64, Complex64)> = (1..=k_max)
            .map(|k| {
                let omega = 2.0 * PI * k as f64 * f0 / sr;
                (omega, project(&s, omega), project(&e, omega))
            })
            .collect();

        // Least-norm real taps with S_k ~ H(omega_k) E_k for every harmonic,
        // H(omega) = sum_l h_l exp(-i omega (l - L/2)). Solved as
        // h = A^T (A A^T + lambda I)^-1 b; the ridge is scaled to the
        // projections of a steady sawtooth, so frames whose excitation
        // projections collapse (reflected edges) cannot demand huge taps.
        let len = self.tap_len;
        let center = (len / 2) as f64;
        let rows = 2 * harmonics.len();
        let mut a = DMatrix::<f64>::zeros(rows, len);
        let mut b = DVector::<f64>::zeros(rows);
        for (r, &(omega, sk, ek)) in harmonics.iter().enumerate() {
            for l in 0..len {
                let v = ek * Complex64::from_polar(1.0, -omega * (l as f64 - center));
                a[(2 * r, l)] = v.re;
                a[(2 * r + 1, l)] = v.im;
            }
            b[2 * r] = sk.re;
            b[2 * r + 1] = sk.im;
        }
        let mut gram = &a * a.transpose();
        let window_sum: f64 = self.window.iter().sum();
        let nominal: f64 = (1..=harmonics.len())
            .map(|k| (window_sum / (2.0 * k as f64)).powi(2))
            .sum::<f64>()
            * len as f64;
        let ridge = RIDGE * nominal / rows as f64;
        for i in 0..rows {
            gram[(i, i)] += ridge;
        }
        let Some(chol) = gram.cholesky() else {
            return zero;
        };
        let h = a.transpose() * chol.solve(&b);
        // overlap-add of windowed frames tapers lag d by lag_taper[d]; undo it
        let taps: Vec<f64> = h
            .iter()
            .enumerate()
            .map(|(l, v)| v / self.lag_taper[(l as i64 - center as i64).unsigned_abs() as usize])
            .collect();
        let gain = self.frame_gain(&raw_e, &raw_s, j, &taps);
        taps.into_iter().map(|v| v * gain).collect()
    }

    /// Least-squares gain in [0, 1] of the filtered frame against its share
    /// `w^2 s` of the source, over the samples inside the signal. Frames whose
    /// fit does not carry over to the signal (reflected edges) shrink.
    fn frame_gain(&self, raw_e: &[f64], raw_s: &[f64], j: usize, taps: &[f64]) -> f64 {
        let y = self.filter.filter_frame(raw_e, taps);
        let start = (j * self.cfg.hop_length) as i64 - self.cfg.pad() as i64;
        let len = self.source.len() as i64;
        let (mut num, mut den) = (0.0, 0.0);
        for (n, (&yn, &sn)) in y.iter().zip(raw_s).enumerate() {
            let idx = start + n as i64;
            if idx >= 0 && idx < len {
                num += yn * self.window[n] * self.window[n] * sn;
                den += yn * yn;
            }
        }
        if den > 0.0 {
            (num / den).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    fn noise_taps(&self, residual: &[f64], j: usize, correction: f64) -> Vec<f64> {
        let n = self.cfg.frame_length;
        let frame = apply_window_with(&raw_frame(residual, &self.cfg, j), &self.window);
        if frame.iter().all(|&v| v == 0.0) {
            return vec![0.0; self.tap_len];
        }
        let spec = self.frame_fft.forward_real(&frame);
        let log_mag: Vec<Complex64> = spec
            .iter()
            .map(|c| Complex64::new(c.norm().max(LOG_FLOOR).ln(), 0.0))
            .collect();
        let mut cep = self.frame_fft.inverse_real(log_mag);
        for (q, c) in cep.iter_mut().enumerate() {
            if q > LIFTER_ORDER && q < n - LIFTER_ORDER {
                *c = 0.0;
            }
        }
        let smooth = self.frame_fft.forward_real(&cep);
        let window_energy: f64 = self.window.iter().map(|w| w * w).sum();
        let scale = 1.0 / (UNIFORM_VARIANCE * window_energy * correction).sqrt();
        let env: Vec<f64> = smooth[..=n / 2]
            .iter()
            .map(|c| (c.re + LOG_RAYLEIGH_BIAS).exp() * scale)
            .collect();
        let sr = f64::from(self.sample_rate);
        design_fir(self.tap_len, self.sample_rate, 0.0, |f| {
            let pos = (f * n as f64 / sr).min((n / 2) as f64);
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if i + 1 < env.len() {
                env[i] * (1.0 - frac) + env[i + 1] * frac
            } else {
                env[env.len() - 1]
            }
        }, &self.tap_fft)
    }
}

/// Estimates synthesis parameters and returns them with the harmonic branch.
fn analyze(w: &Waveform, t: &F0Track, cfg: &FrameConfig) -> Result<(SynthesisParams, Waveform)> {
    check_alignment(w, t, cfg)?;
    let frames = t.len();
    let tap_len = DEFAULT_TAP_LENGTH;
    let est = Estimator {
        cfg: *cfg,
        sample_rate: w.sample_rate(),
        tap_len,
        window: cfg.window_coefficients(),
        frame_fft: FftPair::new(cfg.frame_length),
        tap_fft: FftPair::new(tap_len),
        lag_taper: lag_taper(&cfg.window_coefficients(), tap_len / 2 + 1),
        filter: FrameFilter::new(cfg, tap_len),
        source: w,
    };

    let excitation = harmonic_excitation(t, w.len(), w.sample_rate())?;
    let harmonic_taps = par::map_indexed(frames, |j| {
        if t.voiced[j] && t.f0_hz[j] > 0.0 {
            est.harmonic_taps(excitation.samples(), j, t.f0_hz[j])
        } else {
            vec![0.0; tap_len]
        }
    });
    let harmonic = if frames == 0 {
        Waveform::new(Vec::new(), w.sample_rate())?
    } else {
        ltv_fir_filter(&excitation, &harmonic_taps, cfg)?
    };

    let residual: Vec<f64> = w.samples().iter().zip(harmonic.samples()).map(|(s, h)| s - h).collect();
    let correction = cfg.incoherent_wola_ratio();
    let noise_taps = par::map_indexed(frames, |j| est.noise_taps(&residual, j, correction));

    let params = SynthesisParams {
        f0_per_frame: t.f0_hz.clone(),
        harmonic_taps,
        noise_taps,
        config: *cfg,
    };
    Ok((params, harmonic))
}

pub fn estimate_params(w: &Waveform, t: &F0Track, cfg: &FrameConfig) -> Result<SynthesisParams> {
    analyze(w, t, cfg).map(|(p, _)| p)
}

/// Splits `w` into a harmonic branch driven by `t` and the residual noise.
pub fn decompose(w: &Waveform, t: &F0Track, cfg: &FrameConfig) -> Result<HnDecomposition> {
    decompose_with_params(w, t, cfg).map(|(d, _)| d)
}

/// [`decompose`] that also returns the estimated parameters.
pub fn decompose_with_params(w: &Waveform, t: &F0Track, cfg: &FrameConfig) -> Result<(HnDecomposition, SynthesisParams)> {
    let (params, harmonic) = analyze(w, t, cfg)?;
    let noise: Vec<f64> = w.samples().iter().zip(harmonic.samples()).map(|(s, h)| s - h).collect();
    let noise = Waveform::new(noise, w.sample_rate())?;
    Ok((
        HnDecomposition {
            harmonic,
            noise,
            source: w.clone(),
        },
        params,
    ))
}

/// Resynthesizes both branches from parameters: filtered sawtooth plus filtered noise.
pub fn synthesize(params: &SynthesisParams, n_samples: usize, sample_rate: u32, seed: u64) -> Result<Waveform> {
    params.validate()?;
    let cfg = params.config;
    if params.n_frames() != cfg.frame_count(n_samples) {
        return Err(Error::input("parameter frames do not match the requested length"));
    }
    let track = F0Track {
        voiced: params.f0_per_frame.iter().map(|&f| f > 0.0).collect(),
        periodicity: params.f0_per_frame.iter().map(|&f| if f > 0.0 { 1.0 } else { 0.0 }).collect(),
        f0_hz: params.f0_per_frame.clone(),
        config: cfg,
        sample_rate,
        n_samples,
    };
    let excitation = harmonic_excitation(&track, n_samples, sample_rate)?;
    let h = ltv_fir_filter(&excitation, &params.harmonic_taps, &cfg)?;
    let n = synthesize_noise(&params.noise_taps, &cfg, n_samples, sample_rate, seed)?;
    Waveform::new(h.samples().iter().zip(n.samples()).map(|(a, b)| a + b).collect(), sample_rate)
}
