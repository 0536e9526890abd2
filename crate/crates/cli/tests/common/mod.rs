#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use pitchfree::hn::{sawtooth_excitation, HarmonicPolicy};
use pitchfree::Waveform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SR: u32 = 24_000;

/// Two-pole resonator at `freq` Hz with bandwidth `bw` Hz, unit gain at DC.
pub fn resonate(x: &[f64], freq: f64, bw: f64, sr: f64) -> Vec<f64> {
    let r = (-PI * bw / sr).exp();
    let a1 = -2.0 * r * (2.0 * PI * freq / sr).cos();
    let a2 = r * r;
    let g = 1.0 + a1 + a2;
    let (mut y1, mut y2) = (0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = g * v - a1 * y1 - a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// Sawtooth at `f0` shaped by three formants, with 30 ms fades, peak 0.5.
pub fn vowel(f0: f64, seconds: f64, sr: u32) -> Waveform {
    let n = (seconds * sr as f64) as usize;
    let src = sawtooth_excitation(&vec![f0; n], sr, HarmonicPolicy::default()).unwrap();
    let mut x = src.samples().to_vec();
    for (f, bw) in [(700.0, 110.0), (1220.0, 120.0), (2600.0, 160.0)] {
        x = resonate(&x, f, bw, sr as f64);
    }
    let fade = (0.03 * sr as f64) as usize;
    for i in 0..n {
        let g = (i.min(n - 1 - i) as f64 / fade as f64).min(1.0);
        x[i] *= g;
    }
    let peak = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Waveform::new(x.iter().map(|v| 0.5 * v / peak).collect(), sr).unwrap()
}

pub fn sine(f: f64, seconds: f64, sr: u32, amp: f64) -> Waveform {
    let n = (seconds * sr as f64) as usize;
    Waveform::new((0..n).map(|i| amp * (2.0 * PI * f * i as f64 / sr as f64).sin()).collect(), sr).unwrap()
}

pub fn white_noise(seconds: f64, sr: u32, amp: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * sr as f64) as usize;
    Waveform::new((0..n).map(|_| amp * rng.random_range(-1.0..1.0)).collect(), sr).unwrap()
}

pub fn write_pcm16(path: &Path, w: &Waveform) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut wr = hound::WavWriter::create(path, spec).unwrap();
    for &x in w.samples() {
        wr.write_sample((x * 32768.0).round().clamp(-32768.0, 32767.0) as i16).unwrap();
    }
    wr.finalize().unwrap();
}
