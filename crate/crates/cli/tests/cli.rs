mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{sine, vowel, white_noise, write_pcm16, SR};
use pitchfree::corpus::{save_manifest, Language, Style, UtteranceRecord};
use pitchfree::{detect_f0, vtr, FrameConfig};
use pitchfree_cli::audio::read_wav;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pitchfree"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn metrics_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn unvoiced_file_passes_through_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("hiss.wav");
    write_pcm16(&input, &white_noise(1.0, SR, 0.2, 3));
    let out = dir.path().join("out");
    let res = run(&["convert", "--in", p(&input), "--out", p(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(fs::read(&input).unwrap(), fs::read(out.join("hiss.wav")).unwrap());
    let log = fs::read_to_string(out.join("convert.log")).unwrap();
    assert!(log.lines().nth(1).unwrap().starts_with("ok\thiss.wav\thiss.wav\tpitch_free\t"));
    assert!(log.lines().nth(1).unwrap().ends_with("\t0\t"));
}

#[test]
fn corrupt_file_is_logged_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    write_pcm16(&input.join("a.wav"), &vowel(150.0, 0.6, SR));
    fs::write(input.join("b.wav"), b"RIFF\x10\0\0\0not really a wave").unwrap();
    write_pcm16(&input.join("c.wav"), &vowel(220.0, 0.6, SR));
    let out = dir.path().join("out");
    let res = run(&["convert", "--in", p(&input), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(out.join("a.wav").exists() && out.join("c.wav").exists());
    assert!(!out.join("b.wav").exists());
    let log = fs::read_to_string(out.join("convert.log")).unwrap();
    let status: Vec<(&str, &str)> = log
        .lines()
        .skip(1)
        .map(|l| {
            let mut cols = l.split('\t');
            (cols.next().unwrap(), cols.next().unwrap())
        })
        .collect();
    assert_eq!(status, [("ok", "a.wav"), ("error", "b.wav"), ("ok", "c.wav")]);
    assert!(!log.lines().nth(2).unwrap().split('\t').nth(6).unwrap().is_empty());
}

#[test]
fn repeated_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    write_pcm16(&input.join("v.wav"), &vowel(180.0, 0.8, SR));
    write_pcm16(&input.join("s.wav"), &sine(200.0, 0.5, 16_000, 0.4));
    for method in ["pitch_free", "whisper_effect", "lpc"] {
        let (a, b) = (dir.path().join(format!("{method}1")), dir.path().join(format!("{method}2")));
        assert!(run(&["convert", "--in", p(&input), "--out", p(&a), "--method", method, "--seed", "5"]).status.success());
        assert!(run(&["convert", "--in", p(&input), "--out", p(&b), "--method", method, "--seed", "5"]).status.success());
        for name in ["v.wav", "s.wav", "convert.log"] {
            assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{method} {name}");
        }
        assert_eq!(read_wav(&a.join("s.wav")).unwrap().sample_rate(), 24_000);
    }
}

#[test]
fn analyze_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    let tone = vowel(200.0, 0.7, SR);
    write_pcm16(&input.join("x.wav"), &tone);
    write_pcm16(&input.join("n.wav"), &white_noise(0.5, SR, 0.1, 1));
    fs::write(dir.path().join("refs.csv"), "utterance,reference\nx,in/x.wav\n").unwrap();
    let out = dir.path().join("out");
    let res = run(&[
        "analyze",
        "--in",
        p(&input),
        "--out",
        p(&out),
        "--ref-map",
        p(&dir.path().join("refs.csv")),
        "--spectrogram",
        "--f0-dump",
        "--rms",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let rows = metrics_rows(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 2);
    let x = rows.iter().find(|r| &r[0] == "x").unwrap();
    let decoded = read_wav(&input.join("x.wav")).unwrap();
    let direct = vtr(&detect_f0(&decoded, &FrameConfig::default()).unwrap()).unwrap();
    assert!((x[3].parse::<f64>().unwrap() - direct).abs() < 1e-6);
    assert_eq!(x[4].parse::<f64>().unwrap(), 0.0);
    let n = rows.iter().find(|r| &r[0] == "n").unwrap();
    assert!(n[4].is_empty());

    let png = fs::read(out.join("spectrogram/x.png")).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    assert!(out.join("f0/n.csv").exists() && out.join("rms/x.csv").exists());
}

fn manifest_records() -> Vec<UtteranceRecord> {
    (0..12)
        .map(|i| UtteranceRecord {
            id: format!("u{i}"),
            speaker_id: format!("s{}", i % 6),
            language: Language::En,
            style: if i % 3 == 0 { Style::Normal } else { Style::Whisper },
            audio_path: format!("audio/u{i}.wav"),
            duration_s: 1.0 + i as f64,
            transcript: None,
            license: "CC0".into(),
            source_dataset: "toy".into(),
            split: None,
            gender: Some(if i % 2 == 0 { "M" } else { "F" }.into()),
        })
        .collect()
}

#[test]
fn corpus_commands() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let stats = dir.path().join("stats.csv");
    assert!(run(&["corpus", "stats", "--manifest", p(&empty), "--out", p(&stats)]).status.success());
    assert_eq!(fs::read_to_string(&stats).unwrap(), "metric\n");

    let manifest = dir.path().join("m.jsonl");
    save_manifest(&manifest_records(), &manifest).unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for out in [&a, &b] {
        assert!(run(&["corpus", "split", "--manifest", p(&manifest), "--seed", "7", "--out", p(out)]).status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let split = pitchfree::corpus::load_manifest(&a).unwrap();
    assert!(split.iter().all(|r| r.split.is_some()));

    assert!(run(&["corpus", "stats", "--manifest", p(&a), "--out", p(&stats)]).status.success());
    let text = fs::read_to_string(&stats).unwrap();
    assert!(text.starts_with("metric,en/train,en/valid,en/test"));
    assert!(text.contains("\nFile Count,"));

    let pairs = dir.path().join("pairs.csv");
    assert!(run(&["corpus", "pair", "--manifest", p(&manifest), "--out", p(&pairs)]).status.success());
    let rows: Vec<_> = csv::Reader::from_path(&pairs).unwrap().records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r[4].is_empty()));

    let missing = dir.path().join("nope.jsonl");
    assert_eq!(run(&["corpus", "stats", "--manifest", p(&missing), "--out", p(&stats)]).status.code(), Some(2));
}
