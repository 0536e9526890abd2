use std::f64::consts::PI;

use pitchfree::signal::{
    apply_window, istft, mel_spectrogram, overlap_add, stft, MelFilterbank, LOG_FLOOR,
};
use pitchfree::{FrameConfig, Waveform, Window};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SR: u32 = 24_000;

fn random_signal(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn wave(x: Vec<f64>) -> Waveform {
    Waveform::new(x, SR).unwrap()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

#[test]
fn frame_count_matches_centered_grid() {
    for (len, hop) in [(24_000, 320), (1, 320), (319, 320), (320, 320), (5000, 1280), (12_345, 77), (5000, 1000), (641, 1280)] {
        let cfg = FrameConfig::new(1280, hop, Window::Hann).unwrap();
        // centers 0, hop, 2*hop, ... up to len, extended until the last frame reaches the end
        let mut centers = 0;
        let mut c = 0;
        while c <= len || c - hop + 640 < len {
            centers += 1;
            c += hop;
        }
        let spec = stft(&wave(random_signal(len, 1)), &cfg).unwrap();
        assert_eq!(spec.n_frames(), centers, "len {len} hop {hop}");
        assert!(spec.bins.iter().all(|f| f.len() == 641));
    }
}

#[test]
fn integer_bin_sine_peaks_in_its_bin() {
    let x: Vec<f64> = (0..12_000).map(|i| (2.0 * PI * 1875.0 * i as f64 / SR as f64).sin()).collect();
    let spec = stft(&wave(x), &FrameConfig::default()).unwrap();
    for frame in spec.magnitudes().iter().skip(4).take(20) {
        let arg = frame
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(arg, 100);
    }
}

#[test]
fn impulse_with_rectangular_window_is_flat() {
    let cfg = FrameConfig::new(1280, 320, Window::Rectangular).unwrap();
    let mut x = vec![0.0; 1280];
    x[640] = 1.0;
    let spec = stft(&wave(x), &cfg).unwrap();
    // frame 2 is centered on sample 640
    for m in &spec.magnitudes()[2] {
        assert!((m - 1.0).abs() < 1e-12);
    }
}

#[test]
fn random_half_second_round_trip() {
    let x = random_signal(SR as usize / 2, 42);
    let cfg = FrameConfig::default();
    let y = istft(&stft(&wave(x.clone()), &cfg).unwrap()).unwrap();
    assert_eq!(y.len(), x.len());
    let worst = x.iter().zip(y.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-9, "max error {worst}");
}

#[test]
fn mel_argmax_is_the_nearest_center() {
    let n_mels = 80;
    let to_mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let from_mel = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = to_mel(SR as f64 / 2.0);
    let centers: Vec<f64> = (1..=n_mels).map(|i| from_mel(top * i as f64 / (n_mels + 1) as f64)).collect();
    let bank = MelFilterbank::new(n_mels, 1280, SR).unwrap();
    for (a, b) in centers.iter().zip(bank.centers_hz()) {
        assert!((a - b).abs() < 1e-6);
    }

    let cfg = FrameConfig::default();
    for freq in [440.0, 1000.0, 2500.0, 5123.0, 9000.0] {
        let x: Vec<f64> = (0..12_000).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / SR as f64).sin()).collect();
        let mel = mel_spectrogram(&wave(x), &cfg, n_mels).unwrap();
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - freq).abs().total_cmp(&(b.1 - freq).abs()))
            .unwrap()
            .0;
        let frame = &mel.values[mel.values.len() / 2];
        let arg = frame.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(arg, nearest, "{freq} Hz");
    }
}

#[test]
fn mel_of_silence_is_the_floor() {
    let mel = mel_spectrogram(&Waveform::silence(3000, SR).unwrap(), &FrameConfig::default(), 80).unwrap();
    let floor = LOG_FLOOR.ln();
    assert!(mel.values.iter().flatten().all(|&v| v == floor));
}

#[test]
fn mel_rejects_more_bands_than_bins() {
    assert!(MelFilterbank::new(642, 1280, SR).is_err());
    assert!(MelFilterbank::new(641, 1280, SR).is_ok());
}

#[test]
fn overlap_add_examples() {
    let frame = vec![0.3, -1.0, 2.0];
    assert_eq!(overlap_add(&[frame.clone()], 2).unwrap(), frame);
    assert_eq!(overlap_add(&[vec![1.0; 4], vec![1.0; 4]], 4).unwrap(), vec![1.0; 8]);
    assert!(overlap_add(&[vec![1.0; 4], vec![1.0; 3]], 2).is_err());

    let n = 512;
    let hann = Window::Hann.coefficients(n);
    let frames = vec![hann.iter().map(|w| 0.7 * w).collect::<Vec<_>>(); 12];
    let out = overlap_add(&frames, n / 2).unwrap();
    for v in &out[n..out.len() - n] {
        assert!((v - 0.7).abs() < 1e-9);
    }
}

#[test]
fn window_examples() {
    let frame = vec![1.0; 16];
    assert_eq!(apply_window(&frame, Window::Rectangular), frame);
    let hann = apply_window(&frame, Window::Hann);
    for (n, v) in hann.iter().enumerate() {
        assert!((v - (0.5 - 0.5 * (2.0 * PI * n as f64 / 16.0).cos())).abs() < 1e-15);
    }
    // periodic convention: the zero falls on sample 0 and on the (absent) sample N
    assert_eq!(hann[0], 0.0);
    assert!(hann[15] > 0.0);
    assert!((hann[1] - hann[15]).abs() < 1e-15);
}

fn interior(cfg: &FrameConfig, x: &[f64]) -> std::ops::Range<usize> {
    cfg.frame_length..x.len() - cfg.frame_length
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cola_round_trip(seed in any::<u64>(), quarter in any::<bool>(), len in 3000usize..9000) {
        let frame = 512;
        let hop = if quarter { frame / 4 } else { frame / 2 };
        let cfg = FrameConfig::new(frame, hop, Window::Hann).unwrap();
        let x = random_signal(len, seed);
        let y = istft(&stft(&wave(x.clone()), &cfg).unwrap()).unwrap();
        let r = interior(&cfg, &x);
        prop_assert!(rel_l2(&y.samples()[r.clone()], &x[r]) < 1e-6);
    }

    #[test]
    fn stft_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let cfg = FrameConfig::new(256, 64, Window::Hann).unwrap();
        let x = random_signal(2048, seed);
        let y = random_signal(2048, seed ^ 0x5555);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let sx = stft(&wave(x), &cfg).unwrap();
        let sy = stft(&wave(y), &cfg).unwrap();
        let sm = stft(&wave(mix), &cfg).unwrap();
        for ((fx, fy), fm) in sx.bins.iter().zip(&sy.bins).zip(&sm.bins) {
            for ((cx, cy), cm) in fx.iter().zip(fy).zip(fm) {
                prop_assert!((cx * a + cy * b - cm).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn parseval_per_frame(seed in any::<u64>(), rect in any::<bool>()) {
        let window = if rect { Window::Rectangular } else { Window::Hann };
        let cfg = FrameConfig::new(256, 64, window).unwrap();
        let n = cfg.frame_length;
        let x = random_signal(4096, seed);
        let spec = stft(&wave(x.clone()), &cfg).unwrap();
        let w = window.coefficients(n);
        for j in 4..spec.n_frames() - 4 {
            let start = j * cfg.hop_length - n / 2;
            let time: f64 = (0..n).map(|i| (w[i] * x[start + i]).powi(2)).sum();
            let bins = &spec.bins[j];
            let mut freq: f64 = bins.iter().map(|c| 2.0 * c.norm_sqr()).sum();
            freq -= bins[0].norm_sqr() + bins[n / 2].norm_sqr();
            freq /= n as f64;
            prop_assert!((time - freq).abs() <= 1e-6 * time);
        }
    }

    #[test]
    fn stft_is_deterministic(seed in any::<u64>()) {
        let cfg = FrameConfig::new(512, 128, Window::Hann).unwrap();
        let w = wave(random_signal(3000, seed));
        prop_assert_eq!(stft(&w, &cfg).unwrap(), stft(&w, &cfg).unwrap());
    }
}
