//! WAV decoding/encoding and rate conversion.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use pitchfree::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Encoding {
    Pcm16,
    F32,
}

/// Reads PCM 16/24-bit or 32-bit float WAV and downmixes by channel mean.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = WavReader::open(path).with_context(|| format!("opening {}", path.display()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        bail!("{}: zero channels", path.display());
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Int, 24) => reader
            .samples::<i32>()
            .map(|s| s.map(|v| v as f64 / 8_388_608.0))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => bail!("{}: unsupported encoding {fmt:?} {bits}-bit", path.display()),
    };
    if interleaved.len() % channels != 0 {
        bail!("{}: truncated sample data", path.display());
    }
    let mono = interleaved
        .chunks_exact(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(Waveform::new(mono, spec.sample_rate)?)
}

pub fn write_wav(path: &Path, w: &Waveform, encoding: Encoding) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: match encoding {
            Encoding::Pcm16 => 16,
            Encoding::F32 => 32,
        },
        sample_format: match encoding {
            Encoding::Pcm16 => SampleFormat::Int,
            Encoding::F32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec).with_context(|| format!("creating {}", path.display()))?;
    for &x in w.samples() {
        match encoding {
            Encoding::Pcm16 => writer.write_sample((x * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?,
            Encoding::F32 => writer.write_sample(x as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}

const HALF_TAPS: usize = 32;
const KAISER_BETA: f64 = 12.0;

fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut sum, mut term, mut k) = (1.0, 1.0, 1.0);
    while term > 1e-21 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Polyphase windowed-sinc resampler, 64 taps per phase, Kaiser window.
pub struct Resampler {
    up: u64,
    down: u64,
    phases: Vec<[f64; 2 * HALF_TAPS]>,
}

impl Resampler {
    pub fn new(from_hz: u32, to_hz: u32) -> Result<Self> {
        if from_hz == 0 || to_hz == 0 {
            bail!("sample rates must be positive");
        }
        let g = gcd(from_hz as u64, to_hz as u64);
        let (up, down) = (to_hz as u64 / g, from_hz as u64 / g);
        let cutoff = (up as f64 / down as f64).min(1.0);
        let i0_beta = bessel_i0(KAISER_BETA);
        let phases = (0..up)
            .map(|p| {
                // output time sits p/up of an input sample past the base index
                let frac = p as f64 / up as f64;
                let mut taps = [0.0; 2 * HALF_TAPS];
                for (j, t) in taps.iter_mut().enumerate() {
                    let x = j as f64 - (HALF_TAPS as f64 - 1.0) - frac;
                    let r = x / HALF_TAPS as f64;
                    let win = if r.abs() >= 1.0 {
                        0.0
                    } else {
                        bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
                    };
                    let arg = std::f64::consts::PI * cutoff * x;
                    let sinc = if arg == 0.0 { 1.0 } else { arg.sin() / arg };
                    *t = cutoff * sinc * win;
                }
                let sum: f64 = taps.iter().sum();
                taps.iter_mut().for_each(|t| *t /= sum);
                taps
            })
            .collect();
        Ok(Self { up, down, phases })
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as u64 * self.up).div_ceil(self.down)) as usize
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        (0..self.output_len(input.len()) as u64)
            .map(|n| {
                let pos = n * self.down;
                let base = (pos / self.up) as i64;
                let taps = &self.phases[(pos % self.up) as usize];
                taps.iter()
                    .enumerate()
                    .map(|(j, h)| {
                        let idx = base + j as i64 - (HALF_TAPS as i64 - 1);
                        if idx < 0 || idx as usize >= input.len() {
                            0.0
                        } else {
                            h * input[idx as usize]
                        }
                    })
                    .sum()
            })
            .collect()
    }
}

/// Returns `w` untouched when it already has rate `to_hz`.
pub fn resample(w: &Waveform, to_hz: u32) -> Result<Waveform> {
    if w.sample_rate() == to_hz {
        return Ok(w.clone());
    }
    let r = Resampler::new(w.sample_rate(), to_hz)?;
    Ok(Waveform::new(r.process(w.samples()), to_hz)?)
}
