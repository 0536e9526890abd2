//! F0 tracking, voiced-segment extraction and the voiced time ratio.
//!
//! The detector is YIN: per frame it computes the squared difference function
//! over candidate lags, normalizes it by its cumulative mean, takes the first
//! dip under the voicing threshold, walks down to the local minimum, and
//! refines the lag by parabolic interpolation on the raw difference function.
//! The normalized difference is scale-free, so voicing decisions do not depend
//! on signal level.

use std::io::Write;

use crate::signal::{raw_frame, FrameConfig, Waveform};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchConfig {
    pub f0_min: f64,
    pub f0_max: f64,
    /// A frame is voiced when the normalized difference minimum falls below this.
    pub threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            f0_min: 60.0,
            f0_max: 500.0,
            threshold: 0.15,
        }
    }
}

pub const DEFAULT_MIN_VOICED_FRAMES: usize = 3;
pub const DEFAULT_MERGE_GAP_FRAMES: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    /// Hz per frame, 0 when unvoiced.
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
    /// `1 - d'` at the chosen lag, clamped to [0, 1].
    pub periodicity: Vec<f64>,
    pub config: FrameConfig,
    pub sample_rate: u32,
    /// Length of the analyzed signal.
    pub n_samples: usize,
}

impl F0Track {
    /// An all-unvoiced track on the frame grid of an `n_samples` signal.
    pub fn unvoiced(n_samples: usize, config: FrameConfig, sample_rate: u32) -> Self {
        Self::constant(0.0, n_samples, config, sample_rate)
    }

    /// A track voiced everywhere at `f0_hz` (unvoiced when `f0_hz` is 0).
    pub fn constant(f0_hz: f64, n_samples: usize, config: FrameConfig, sample_rate: u32) -> Self {
        let n = config.frame_count(n_samples);
        let voiced = f0_hz > 0.0;
        Self {
            f0_hz: vec![f0_hz; n],
            voiced: vec![voiced; n],
            periodicity: vec![if voiced { 1.0 } else { 0.0 }; n],
            config,
            sample_rate,
            n_samples,
        }
    }

    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn frame_time(&self, index: usize) -> f64 {
        (index * self.config.hop_length) as f64 / f64::from(self.sample_rate)
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }

    /// Writes `frame_index,time_seconds,f0_hz,voiced,periodicity` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "frame_index,time_seconds,f0_hz,voiced,periodicity")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{i},{:.6},{:.4},{},{:.6}",
                self.frame_time(i),
                self.f0_hz[i],
                u8::from(self.voiced[i]),
                self.periodicity[i]
            )?;
        }
        Ok(())
    }
}

pub fn detect_f0(w: &Waveform, cfg: &FrameConfig) -> Result<F0Track> {
    detect_f0_with(w, cfg, &PitchConfig::default())
}

pub fn detect_f0_with(w: &Waveform, cfg: &FrameConfig, pc: &PitchConfig) -> Result<F0Track> {
    cfg.validate()?;
    if w.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(pc.f0_min > 0.0 && pc.f0_min < pc.f0_max) {
        return Err(Error::config("need 0 < f0_min < f0_max"));
    }
    let sr = f64::from(w.sample_rate());
    if sr < 2.0 * pc.f0_max {
        return Err(Error::config(format!(
            "sample rate {sr} Hz is below twice f0_max {} Hz",
            pc.f0_max
        )));
    }
    let lag_min = ((sr / pc.f0_max).ceil() as usize).max(2);
    let lag_max = (sr / pc.f0_min).floor() as usize;
    if cfg.frame_length <= 2 * (lag_max + 1) {
        return Err(Error::config(format!(
            "frame length {} too short for lags up to {lag_max}",
            cfg.frame_length
        )));
    }
    let yin = Yin {
        lag_min,
        lag_max,
        threshold: pc.threshold,
        sr,
        band: (pc.f0_min, pc.f0_max),
    };
    let frames = par::map_indexed(cfg.frame_count(w.len()), |j| {
        yin.estimate(&raw_frame(w.samples(), cfg, j))
    });
    let mut track = F0Track {
        f0_hz: Vec::with_capacity(frames.len()),
        voiced: Vec::with_capacity(frames.len()),
        periodicity: Vec::with_capacity(frames.len()),
        config: *cfg,
        sample_rate: w.sample_rate(),
        n_samples: w.len(),
    };
    for (f0, periodicity) in frames {
        track.voiced.push(f0.is_some());
        track.f0_hz.push(f0.unwrap_or(0.0));
        track.periodicity.push(periodicity);
    }
    Ok(track)
}

struct Yin {
    lag_min: usize,
    lag_max: usize,
    threshold: f64,
    sr: f64,
    band: (f64, f64),
}

impl Yin {
    fn estimate(&self, frame: &[f64]) -> (Option<f64>, f64) {
        let width = frame.len() - self.lag_max - 1;
        let energy: f64 = frame[..width + self.lag_max].iter().map(|x| x * x).sum();
        if energy <= f64::MIN_POSITIVE {
            return (None, 0.0);
        }
        let diff: Vec<f64> = (0..=self.lag_max + 1)
            .map(|lag| {
                frame[..width]
                    .iter()
                    .zip(&frame[lag..lag + width])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            })
            .collect();
        let mut cmnd = vec![1.0; diff.len()];
        let mut running = 0.0;
        for lag in 1..diff.len() {
            running += diff[lag];
            cmnd[lag] = if running > 0.0 {
                diff[lag] * lag as f64 / running
            } else {
                1.0
            };
        }

        let mut chosen = None;
        let mut lag = self.lag_min;
        while lag <= self.lag_max {
            if cmnd[lag] < self.threshold {
                while lag < self.lag_max && cmnd[lag + 1] < cmnd[lag] {
                    lag += 1;
                }
                chosen = Some(lag);
                break;
            }
            lag += 1;
        }
        let Some(lag) = chosen else {
            let best = cmnd[self.lag_min..=self.lag_max]
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            return (None, (1.0 - best).clamp(0.0, 1.0));
        };
        let periodicity = (1.0 - cmnd[lag]).clamp(0.0, 1.0);

        let (a, b, c) = (diff[lag - 1], diff[lag], diff[lag + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom > 0.0 {
            (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        let f0 = self.sr / (lag as f64 + shift);
        if f0 < self.band.0 || f0 > self.band.1 {
            return (None, periodicity);
        }
        (Some(f0), periodicity)
    }
}

/// A run of voiced frames expressed in samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchedSegment {
    pub start_sample: usize,
    /// Exclusive.
    pub end_sample: usize,
    pub mean_f0: f64,
    pub first_frame: usize,
    /// Inclusive.
    pub last_frame: usize,
}

impl PitchedSegment {
    pub fn len(&self) -> usize {
        self.end_sample - self.start_sample
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Groups voiced frames into segments.
///
/// Runs separated by at most `merge_gap_frames` unvoiced frames are merged;
/// a merged group is kept only if one of its runs has at least
/// `min_voiced_frames` contiguous voiced frames. Segment bounds are the first
/// and last frame centers widened by half a frame and clamped to the signal;
/// groups whose sample ranges would overlap are joined.
pub fn voiced_segments(
    t: &F0Track,
    min_voiced_frames: usize,
    merge_gap_frames: usize,
) -> Vec<PitchedSegment> {
    // (first, last, longest contiguous run)
    let mut groups: Vec<(usize, usize, usize)> = Vec::new();
    let mut i = 0;
    while i < t.len() {
        if !t.voiced[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < t.len() && t.voiced[i] {
            i += 1;
        }
        let (end, run) = (i - 1, i - start);
        match groups.last_mut() {
            Some(g) if start - g.1 - 1 <= merge_gap_frames => {
                g.1 = end;
                g.2 = g.2.max(run);
            }
            _ => groups.push((start, end, run)),
        }
    }

    let hop = t.config.hop_length;
    let half = t.config.frame_length / 2;
    let mut segments: Vec<PitchedSegment> = Vec::new();
    for (first, last, run) in groups {
        if run < min_voiced_frames.max(1) {
            continue;
        }
        let start = (first * hop).saturating_sub(half);
        let end = (last * hop + half).min(t.n_samples);
        if start >= end {
            continue;
        }
        match segments.last_mut() {
            Some(prev) if start < prev.end_sample => {
                prev.end_sample = end;
                prev.last_frame = last;
            }
            _ => segments.push(PitchedSegment {
                start_sample: start,
                end_sample: end,
                mean_f0: 0.0,
                first_frame: first,
                last_frame: last,
            }),
        }
    }
    for seg in &mut segments {
        let voiced: Vec<f64> = (seg.first_frame..=seg.last_frame)
            .filter(|&j| t.voiced[j])
            .map(|j| t.f0_hz[j])
            .collect();
        seg.mean_f0 = voiced.iter().sum::<f64>() / voiced.len() as f64;
    }
    segments
}

/// Fraction of frames classified voiced.
pub fn vtr(t: &F0Track) -> Result<f64> {
    if t.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(t.voiced_count() as f64 / t.len() as f64)
}
