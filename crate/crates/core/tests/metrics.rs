use std::f64::consts::PI;

use pitchfree::metrics::{
    analyze_utterance, mcd, mcd_constant, render_spectrogram, rms_profile, spectrogram_image, GrayImage,
    MetricsReport, UtteranceMetrics, REPORT_HEADER, RMS_FLOOR_DBFS,
};
use pitchfree::signal::mel_spectrogram;
use pitchfree::{Error, FrameConfig, Waveform};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SR: u32 = 24_000;

fn sine(freq: f64, secs: f64, amp: f64) -> Waveform {
    let n = (secs * SR as f64) as usize;
    Waveform::new((0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / SR as f64).sin()).collect(), SR).unwrap()
}

fn noise(len: usize, amp: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| amp * rng.random_range(-1.0..1.0)).collect()
}

/// Step-by-step MCD: log-mel frames, explicit DCT-II rows 1..=13, a full DTW
/// table, a diagonal-first backtrack, then the dB constant.
fn mcd_oracle(a: &Waveform, b: &Waveform) -> f64 {
    let cfg = FrameConfig::default();
    let cepstra = |w: &Waveform| -> Vec<Vec<f64>> {
        let mel = mel_spectrogram(w, &cfg, 80).unwrap();
        mel.values
            .iter()
            .map(|frame| {
                (1..=13)
                    .map(|q| {
                        let mut c = 0.0;
                        for (m, v) in frame.iter().enumerate() {
                            c += v * (PI * q as f64 * (m as f64 + 0.5) / 80.0).cos();
                        }
                        c * (2.0f64 / 80.0).sqrt()
                    })
                    .collect()
            })
            .collect()
    };
    let (ca, cb) = (cepstra(a), cepstra(b));
    let (n, m) = (ca.len(), cb.len());
    let dist = |i: usize, j: usize| ca[i].iter().zip(&cb[j]).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let mut table = vec![vec![f64::INFINITY; m + 1]; n + 1];
    table[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let best = table[i - 1][j - 1].min(table[i - 1][j]).min(table[i][j - 1]);
            table[i][j] = best + dist(i - 1, j - 1);
        }
    }
    let (mut i, mut j, mut steps) = (n, m, 1);
    while (i, j) != (1, 1) {
        let (dg, up, lf) = (table[i - 1][j - 1], table[i - 1][j], table[i][j - 1]);
        if dg <= up && dg <= lf {
            i -= 1;
            j -= 1;
        } else if up <= lf {
            i -= 1;
        } else {
            j -= 1;
        }
        steps += 1;
    }
    10.0 / std::f64::consts::LN_10 * 2f64.sqrt() * table[n][m] / steps as f64
}

#[test]
fn mcd_of_a_signal_with_itself_and_its_double_is_zero() {
    let cfg = FrameConfig::default();
    let mut x = sine(300.0, 0.4, 0.3).into_samples();
    let hiss = noise(x.len(), 0.01, 4);
    for (a, b) in x.iter_mut().zip(hiss) {
        *a += b;
    }
    let x = Waveform::new(x, SR).unwrap();
    assert!(mcd(&x, &x, &cfg).unwrap().abs() < 1e-9);
    assert!(mcd(&x, &x.scaled(2.0).unwrap(), &cfg).unwrap().abs() < 1e-9);
}

#[test]
fn mcd_matches_step_by_step_oracle() {
    let a = sine(200.0, 0.5, 0.5);
    let b = sine(300.0, 0.5, 0.5);
    let got = mcd(&a, &b, &FrameConfig::default()).unwrap();
    let want = mcd_oracle(&a, &b);
    assert!(got > 0.0);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    assert!((mcd_constant() - 10.0 * 2f64.sqrt() / 10f64.ln()).abs() < 1e-15);
}

#[test]
fn mcd_rejects_mixed_rates() {
    let a = sine(200.0, 0.2, 0.5);
    let b = Waveform::new(a.samples().to_vec(), 16_000).unwrap();
    assert!(matches!(mcd(&a, &b, &FrameConfig::default()), Err(Error::InvalidInput(_))));
}

#[test]
fn rms_examples() {
    let square: Vec<f64> = (0..24_000).map(|i| if (i / 40) % 2 == 0 { 1.0 } else { -1.0 }).collect();
    for (_, db) in rms_profile(&Waveform::new(square, SR).unwrap(), 50.0).unwrap() {
        assert!(db.abs() < 1e-12);
    }
    for (_, db) in rms_profile(&Waveform::silence(5000, SR).unwrap(), 20.0).unwrap() {
        assert_eq!(db, RMS_FLOOR_DBFS);
    }
    // 50 ms holds a whole number of 200 Hz periods
    let half = sine(200.0, 1.0, 0.5);
    let expected = 20.0 * (0.5 / 2f64.sqrt()).log10();
    assert!((expected + 9.03).abs() < 0.01);
    for (_, db) in rms_profile(&half, 50.0).unwrap() {
        assert!((db - expected).abs() < 0.1);
    }
    let stamps: Vec<f64> = rms_profile(&half, 50.0).unwrap().iter().map(|p| p.0).collect();
    assert_eq!(stamps.len(), 20);
    assert!((stamps[0] - 0.025).abs() < 1e-12 && (stamps[19] - 0.975).abs() < 1e-12);
}

#[test]
fn spectrogram_of_silence_is_black() {
    let img = spectrogram_image(&Waveform::silence(4000, SR).unwrap(), &FrameConfig::default()).unwrap();
    assert!(img.pixels.iter().all(|&p| p == 0));
}

#[test]
fn spectrogram_of_a_sine_is_one_bright_row() {
    let cfg = FrameConfig::default();
    // 1875 Hz sits exactly on bin 100
    let img = spectrogram_image(&sine(1875.0, 0.5, 0.5), &cfg).unwrap();
    let row = img.height - 1 - 100;
    for x in 2..img.width - 2 {
        let brightest = (0..img.height).max_by_key(|&y| img.get(x, y)).unwrap();
        assert_eq!(brightest, row);
        assert_eq!(img.get(x, row), 255);
    }
}

#[test]
fn chirp_ridge_rises() {
    let n = SR as usize * 2;
    let (f0, f1) = (100.0, 4000.0);
    let dur = n as f64 / SR as f64;
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            0.5 * (2.0 * PI * (f0 * t + (f1 - f0) * t * t / (2.0 * dur))).sin()
        })
        .collect();
    let img = spectrogram_image(&Waveform::new(x, SR).unwrap(), &FrameConfig::default()).unwrap();
    let ridge: Vec<usize> = (2..img.width - 2)
        .map(|x| {
            let y = (0..img.height).max_by_key(|&y| (img.get(x, y), y)).unwrap();
            img.height - 1 - y
        })
        .collect();
    for w in ridge.windows(2) {
        assert!(w[1] >= w[0], "ridge fell from bin {} to {}", w[0], w[1]);
    }
    assert!(ridge[0] < 12 && *ridge.last().unwrap() > 200);
}

#[test]
fn spectrogram_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let w = sine(440.0, 0.3, 0.4);
    let cfg = FrameConfig::default();
    let pgm = dir.path().join("s.pgm");
    let img = render_spectrogram(&w, &cfg, &pgm).unwrap();
    let back = GrayImage::read_pgm(std::fs::File::open(&pgm).unwrap()).unwrap();
    assert_eq!(back, img);

    let png = dir.path().join("s.png");
    render_spectrogram(&w, &cfg, &png).unwrap();
    assert_eq!(&std::fs::read(&png).unwrap()[1..4], b"PNG");

    let missing = dir.path().join("no/such/dir/s.pgm");
    assert!(matches!(render_spectrogram(&w, &cfg, &missing), Err(Error::Io(_))));
}

fn record(id: &str, split: Option<&str>, duration: f64, vtr: f64, mcd: Option<f64>, rms: f64) -> UtteranceMetrics {
    UtteranceMetrics {
        utterance_id: id.into(),
        split: split.map(Into::into),
        duration_s: duration,
        vtr,
        mcd_db: mcd,
        rms_dbfs_mean: rms,
        ..Default::default()
    }
}

#[test]
fn aggregation_means() {
    let report = MetricsReport {
        records: vec![
            record("a", Some("test"), 1.0, 0.2, Some(4.0), -20.0),
            record("b", Some("test"), 3.0, 0.6, None, -30.0),
            record("c", Some("train"), 2.0, 1.0, Some(6.0), -10.0),
            record("d", None, 2.0, 0.0, None, -40.0),
        ],
    };
    let plain = report.aggregate(false);
    let names: Vec<&str> = plain.iter().map(|a| a.split.as_str()).collect();
    assert_eq!(names, ["all", "test", "train"]);
    let test = &plain[1];
    assert_eq!(test.count, 2);
    assert!((test.vtr - 0.4).abs() < 1e-12);
    assert!((test.rms_dbfs_mean + 25.0).abs() < 1e-12);
    assert_eq!(test.mcd_db, Some(4.0));
    assert!((test.duration_s - 4.0).abs() < 1e-12);
    assert_eq!(plain[0].mcd_db, None);

    let weighted = report.aggregate(true);
    assert!((weighted[1].vtr - (0.2 + 3.0 * 0.6) / 4.0).abs() < 1e-12);
}

#[test]
fn report_csv_and_external_columns() {
    let mut report = MetricsReport {
        records: vec![record("u1", Some("test"), 1.5, 0.25, Some(3.5), -22.0), record("u2", None, 2.0, 0.0, None, -40.0)],
    };
    let matched = report
        .merge_external("utterance_id,utmos,other\nu2,3.9,7\nzz,1.0,1\n".as_bytes())
        .unwrap();
    assert_eq!(matched, 1);
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], REPORT_HEADER.join(","));
    assert_eq!(lines[1], "u1,test,1.500000,0.250000,3.500000,-22.000000,,,,");
    assert_eq!(lines[2], "u2,,2.000000,0.000000,,-40.000000,,3.900000,,");
}

#[test]
fn utterance_metrics_are_in_range() {
    let w = sine(220.0, 0.5, 0.5);
    let r = analyze_utterance("x", &w, Some(&sine(330.0, 0.5, 0.5)), &FrameConfig::default()).unwrap();
    assert!((0.0..=1.0).contains(&r.vtr) && r.vtr > 0.9);
    assert!(r.mcd_db.unwrap() > 0.0);
    assert!((r.duration_s - 0.5).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rms_profile_is_gain_covariant(seed in any::<u64>(), gain in 0.01f64..1.0, window_ms in 5.0f64..80.0) {
        let x = Waveform::new(noise(6000, 0.9, seed), SR).unwrap();
        let base = rms_profile(&x, window_ms).unwrap();
        let scaled = rms_profile(&x.scaled(gain).unwrap(), window_ms).unwrap();
        let shift = 20.0 * gain.log10();
        for (a, b) in base.iter().zip(&scaled) {
            prop_assert_eq!(a.0, b.0);
            prop_assert!((b.1 - a.1 - shift).abs() < 1e-9);
        }
    }

    #[test]
    fn mcd_is_non_negative(seed in any::<u64>(), len_a in 2000usize..8000, len_b in 2000usize..8000) {
        let a = Waveform::new(noise(len_a, 0.5, seed), SR).unwrap();
        let b = Waveform::new(noise(len_b, 0.5, !seed), SR).unwrap();
        prop_assert!(mcd(&a, &b, &FrameConfig::default()).unwrap() >= 0.0);
    }
}
