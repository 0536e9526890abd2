//! Frame-level primitives: waveforms, windows, STFT/ISTFT, mel projection and
//! overlap-add.
//!
//! Framing is centered. The signal is reflect-padded by `frame_length / 2` on
//! both sides so that frame `i` is centered on sample `i * hop_length`, giving
//! `1 + len / hop_length` frames for a non-empty signal. Every module that works
//! per frame uses this grid, so frame indices line up across pitch tracks,
//! synthesis parameters and spectrograms.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{par, Error, Result};

/// Magnitude floor applied before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-10;

pub const DEFAULT_FRAME_LENGTH: usize = 1280;
pub const DEFAULT_HOP_LENGTH: usize = 320;
pub const DEFAULT_N_MELS: usize = 80;

/// Mono sample buffer with its sample rate.
///
/// Samples must be finite. Nominal amplitude range is [-1, 1], but
/// intermediate signals (a harmonic branch, a residual) may exceed it, so only
/// finiteness is enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::input(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }

    pub fn scaled(&self, gain: f64) -> Result<Self> {
        Self::new(self.samples.iter().map(|s| s * gain).collect(), self.sample_rate)
    }

    /// Copy of `range` as a new waveform at the same rate.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            samples: self.samples[range].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    pub fn value(self, n: usize, len: usize) -> f64 {
        match self {
            Window::Hann => 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos(),
            Window::Rectangular => 1.0,
        }
    }

    pub fn coefficients(self, len: usize) -> Vec<f64> {
        (0..len).map(|n| self.value(n, len)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameConfig {
    pub frame_length: usize,
    pub hop_length: usize,
    pub window: Window,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            frame_length: DEFAULT_FRAME_LENGTH,
            hop_length: DEFAULT_HOP_LENGTH,
            window: Window::Hann,
        }
    }
}

impl FrameConfig {
    pub fn new(frame_length: usize, hop_length: usize, window: Window) -> Result<Self> {
        let cfg = Self {
            frame_length,
            hop_length,
            window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_length < 2 {
            return Err(Error::config("frame_length must be at least 2"));
        }
        if self.hop_length == 0 || self.hop_length > self.frame_length {
            return Err(Error::config(format!(
                "hop_length {} must satisfy 0 < hop <= frame_length {}",
                self.hop_length, self.frame_length
            )));
        }
        Ok(())
    }

    /// Number of centered frames covering `len` samples: one per center
    /// `i * hop <= len`, plus any needed for the tail when hop exceeds half
    /// a frame.
    pub fn frame_count(&self, len: usize) -> usize {
        if len == 0 {
            return 0;
        }
        let reach = self.frame_length - self.pad();
        let tail = len.saturating_sub(reach).div_ceil(self.hop_length);
        1 + (len / self.hop_length).max(tail)
    }

    pub fn pad(&self) -> usize {
        self.frame_length / 2
    }

    pub fn n_bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    pub fn window_coefficients(&self) -> Vec<f64> {
        self.window.coefficients(self.frame_length)
    }

    /// True when shifted copies of the window sum to a constant.
    pub fn is_cola(&self) -> bool {
        let w = self.window_coefficients();
        let sums: Vec<f64> = (0..self.hop_length)
            .map(|n| w.iter().skip(n).step_by(self.hop_length).sum())
            .collect();
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        max > 0.0 && (max - min) <= 1e-10 * max
    }

    /// Mean over one hop period of `sum_j w_j^4 / (sum_j w_j^2)^2`.
    ///
    /// This is the variance ratio that weighted overlap-add applies to
    /// independent per-frame noise, relative to coherent signal content.
    pub(crate) fn incoherent_wola_ratio(&self) -> f64 {
        let w = self.window_coefficients();
        let mut acc = 0.0;
        for n in 0..self.hop_length {
            let (mut s2, mut s4) = (0.0, 0.0);
            for v in w.iter().skip(n).step_by(self.hop_length) {
                let v2 = v * v;
                s2 += v2;
                s4 += v2 * v2;
            }
            if s2 > 0.0 {
                acc += s4 / (s2 * s2);
            }
        }
        acc / self.hop_length as f64
    }
}

/// Index into a signal of length `len` with repeated mirror reflection
/// (the sample at each edge is not repeated).
pub(crate) fn reflect_index(idx: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = idx.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Raw (unwindowed) frame `index` from the centered, reflect-padded signal.
pub(crate) fn raw_frame(samples: &[f64], cfg: &FrameConfig, index: usize) -> Vec<f64> {
    let start = (index * cfg.hop_length) as isize - cfg.pad() as isize;
    (0..cfg.frame_length)
        .map(|n| samples[reflect_index(start + n as isize, samples.len())])
        .collect()
}

/// Overlap-adds synthesis-windowed frames laid on the centered grid, divides
/// by the summed squared window, and crops back to `len` samples.
pub(crate) fn wola(frames: &[Vec<f64>], cfg: &FrameConfig, len: usize) -> Result<Vec<f64>> {
    let w = cfg.window_coefficients();
    let padded_len = (frames.len().saturating_sub(1)) * cfg.hop_length + cfg.frame_length;
    let mut acc = vec![0.0; padded_len];
    let mut norm = vec![0.0; padded_len];
    for (j, frame) in frames.iter().enumerate() {
        let off = j * cfg.hop_length;
        for n in 0..cfg.frame_length {
            acc[off + n] += frame[n];
            norm[off + n] += w[n] * w[n];
        }
    }
    let pad = cfg.pad();
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let nrm = norm[i + pad];
        if nrm <= 1e-10 {
            return Err(Error::config(format!(
                "window {:?} with hop {} leaves sample {i} uncovered",
                cfg.window, cfg.hop_length
            )));
        }
        out.push(acc[i + pad] / nrm);
    }
    Ok(out)
}

/// Forward/inverse complex FFT pair of a fixed size.
#[derive(Clone)]
pub(crate) struct FftPair {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub(crate) fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    /// Unnormalized forward transform of a real block, zero-padded to `n`.
    pub(crate) fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(self.n, Complex64::new(0.0, 0.0));
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse transform scaled by `1/n`, returning the real part.
    pub(crate) fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        debug_assert_eq!(spec.len(), self.n);
        self.inverse.process(&mut spec);
        let scale = 1.0 / self.n as f64;
        spec.iter().map(|c| c.re * scale).collect()
    }
}

/// Short-time spectrum: `frames x (frame_length/2 + 1)` complex bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Vec<Vec<Complex64>>,
    pub config: FrameConfig,
    pub sample_rate: u32,
    /// Length of the analyzed signal, needed to crop the inverse.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.bins.len()
    }

    pub fn magnitudes(&self) -> Vec<Vec<f64>> {
        self.bins
            .iter()
            .map(|f| f.iter().map(|c| c.norm()).collect())
            .collect()
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * f64::from(self.sample_rate) / self.config.frame_length as f64
    }
}

pub fn stft(w: &Waveform, cfg: &FrameConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if w.is_empty() {
        return Err(Error::EmptyInput);
    }
    let win = cfg.window_coefficients();
    let fft = FftPair::new(cfg.frame_length);
    let n_bins = cfg.n_bins();
    let bins = par::map_indexed(cfg.frame_count(w.len()), |j| {
        let frame = apply_window_with(&raw_frame(w.samples(), cfg, j), &win);
        let mut spec = fft.forward_real(&frame);
        spec.truncate(n_bins);
        spec
    });
    Ok(Spectrogram {
        bins,
        config: *cfg,
        sample_rate: w.sample_rate(),
        signal_len: w.len(),
    })
}

/// Inverse of [`stft`]. Requires a window/hop pair with the constant
/// overlap-add property; frames are summed without a synthesis window and
/// divided by the accumulated analysis window.
pub fn istft(s: &Spectrogram) -> Result<Waveform> {
    let cfg = &s.config;
    cfg.validate()?;
    if !cfg.is_cola() {
        return Err(Error::config(format!(
            "{:?} window with frame {} and hop {} is not constant overlap-add",
            cfg.window, cfg.frame_length, cfg.hop_length
        )));
    }
    let n = cfg.frame_length;
    if s.bins.iter().any(|f| f.len() != cfg.n_bins()) {
        return Err(Error::input("spectrogram frames must have frame_length/2 + 1 bins"));
    }
    if s.n_frames() != cfg.frame_count(s.signal_len) {
        return Err(Error::input(format!(
            "{} frames do not cover a {}-sample signal",
            s.n_frames(),
            s.signal_len
        )));
    }
    let fft = FftPair::new(n);
    let frames = par::map_indexed(s.n_frames(), |j| {
        let half = &s.bins[j];
        let mut full = vec![Complex64::new(0.0, 0.0); n];
        full[..half.len()].copy_from_slice(half);
        for k in 1..n - half.len() + 1 {
            full[n - k] = half[k].conj();
        }
        fft.inverse_real(full)
    });
    let win = cfg.window_coefficients();
    let padded_len = frames.len().saturating_sub(1) * cfg.hop_length + n;
    let mut acc = vec![0.0; padded_len];
    let mut norm = vec![0.0; padded_len];
    for (j, frame) in frames.iter().enumerate() {
        let off = j * cfg.hop_length;
        for i in 0..n {
            acc[off + i] += frame[i];
            norm[off + i] += win[i];
        }
    }
    let pad = cfg.pad();
    let samples = (0..s.signal_len)
        .map(|i| {
            let nrm = norm[i + pad];
            if nrm > 1e-12 {
                acc[i + pad] / nrm
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(samples, s.sample_rate)
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank (HTK mel scale), area-normalized, spanning
/// 0 Hz to Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Vec<Vec<f64>>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, frame_length: usize, sample_rate: u32) -> Result<Self> {
        let n_bins = frame_length / 2 + 1;
        if n_mels == 0 {
            return Err(Error::config("n_mels must be at least 1"));
        }
        if n_mels > n_bins {
            return Err(Error::config(format!(
                "n_mels {n_mels} exceeds {n_bins} frequency bins"
            )));
        }
        let sr = f64::from(sample_rate);
        let top = hz_to_mel(sr / 2.0);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz: Vec<f64> = (0..n_bins)
            .map(|b| b as f64 * sr / frame_length as f64)
            .collect();
        let weights = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let area = 2.0 / (hi - lo);
                bin_hz
                    .iter()
                    .map(|&f| {
                        let up = (f - lo) / (mid - lo);
                        let down = (hi - f) / (hi - mid);
                        up.min(down).max(0.0) * area
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            weights,
            centers_hz: edges[1..=n_mels].to_vec(),
        })
    }

    pub fn n_mels(&self) -> usize {
        self.weights.len()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn apply(&self, magnitudes: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(magnitudes).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Natural-log mel magnitudes, `frames x n_mels`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<Vec<f64>>,
    pub n_mels: usize,
    pub config: FrameConfig,
}

pub fn mel_spectrogram(w: &Waveform, cfg: &FrameConfig, n_mels: usize) -> Result<MelSpectrogram> {
    let bank = MelFilterbank::new(n_mels, cfg.frame_length, w.sample_rate())?;
    let spec = stft(w, cfg)?;
    let values = spec
        .magnitudes()
        .iter()
        .map(|mag| {
            bank.apply(mag)
                .into_iter()
                .map(|v| v.max(LOG_FLOOR).ln())
                .collect()
        })
        .collect();
    Ok(MelSpectrogram {
        values,
        n_mels,
        config: *cfg,
    })
}

/// Sums equal-length frames at `hop` offsets.
pub fn overlap_add(frames: &[Vec<f64>], hop: usize) -> Result<Vec<f64>> {
    if hop == 0 {
        return Err(Error::config("hop must be positive"));
    }
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let flen = first.len();
    if let Some(j) = frames.iter().position(|f| f.len() != flen) {
        return Err(Error::input(format!(
            "frame {j} has length {} but frame 0 has {flen}",
            frames[j].len()
        )));
    }
    let mut out = vec![0.0; (frames.len() - 1) * hop + flen];
    for (j, frame) in frames.iter().enumerate() {
        for (o, v) in out[j * hop..].iter_mut().zip(frame) {
            *o += v;
        }
    }
    Ok(out)
}

pub fn apply_window(frame: &[f64], window: Window) -> Vec<f64> {
    apply_window_with(frame, &window.coefficients(frame.len()))
}

pub(crate) fn apply_window_with(frame: &[f64], coeffs: &[f64]) -> Vec<f64> {
    frame.iter().zip(coeffs).map(|(x, w)| x * w).collect()
}
