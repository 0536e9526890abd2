//! Input discovery and the `convert`, `analyze` and `corpus` commands.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use pitchfree::corpus::{self, UtteranceRecord};
use pitchfree::metrics::{self, MetricsReport, DEFAULT_RMS_WINDOW_MS};
use pitchfree::whisperize::{whisperize_with_report, DEFAULT_LPC_ORDER};
use pitchfree::{detect_f0, to_whisper_lpc, whisper_effect, FrameConfig, WhisperizeConfig};
use rayon::prelude::*;

use crate::audio::{read_wav, resample, write_wav, Encoding};

pub const DEFAULT_RATE: u32 = 24_000;
pub const CONVERT_LOG: &str = "convert.log";
pub const METRICS_CSV: &str = "metrics.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Method {
    PitchFree,
    WhisperEffect,
    Lpc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::PitchFree => "pitch_free",
            Method::WhisperEffect => "whisper_effect",
            Method::Lpc => "lpc",
        }
    }
}

/// One input file with the identifier used for output naming and seeding.
#[derive(Debug, Clone, PartialEq)]
pub struct InputItem {
    pub path: PathBuf,
    /// Relative path with `/` separators.
    pub relative: String,
    pub split: Option<String>,
}

impl InputItem {
    /// Relative path without the extension.
    pub fn id(&self) -> String {
        match self.relative.rsplit_once('.') {
            Some((stem, _)) if !stem.is_empty() => stem.to_string(),
            _ => self.relative.clone(),
        }
    }
}

fn is_wav(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn slash_path(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// A directory (all `.wav` files below it), a single `.wav`, or a manifest.
pub fn discover_inputs(input: &Path) -> Result<Vec<InputItem>> {
    if input.is_dir() {
        let mut items = Vec::new();
        for entry in walkdir::WalkDir::new(input).sort_by_file_name() {
            let entry = entry?;
            if entry.file_type().is_file() && is_wav(entry.path()) {
                let rel = entry.path().strip_prefix(input)?;
                items.push(InputItem {
                    path: entry.path().to_path_buf(),
                    relative: slash_path(rel),
                    split: None,
                });
            }
        }
        return Ok(items);
    }
    if is_wav(input) {
        let name = input.file_name().context("input has no file name")?;
        return Ok(vec![InputItem {
            path: input.to_path_buf(),
            relative: name.to_string_lossy().into_owned(),
            split: None,
        }]);
    }
    let records = corpus::load_manifest(input).with_context(|| format!("reading manifest {}", input.display()))?;
    let base = input.parent().unwrap_or(Path::new("."));
    Ok(records
        .iter()
        .map(|r: &UtteranceRecord| InputItem {
            path: base.join(&r.audio_path),
            relative: r.audio_path.replace('\\', "/"),
            split: r.split.map(|s| s.to_string()),
        })
        .collect())
}

/// FNV-1a over the bytes of `s`.
pub fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn file_seed(global: u64, relative: &str) -> u64 {
    global ^ fnv1a(relative)
}

#[derive(Debug, Clone)]
pub struct JobConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub rate: u32,
    pub method: Method,
    pub seed: u64,
    pub gain_match: bool,
    pub crossfade_ms: f64,
    pub cutoff_hz: f64,
    pub noise_gain: f64,
    pub lpc_order: usize,
    pub workers: usize,
    pub encoding: Encoding,
}

impl JobConfig {
    pub fn new(input: PathBuf, output_dir: PathBuf, method: Method) -> Self {
        Self {
            input,
            output_dir,
            rate: DEFAULT_RATE,
            method,
            seed: 0,
            gain_match: true,
            crossfade_ms: pitchfree::whisperize::DEFAULT_CROSSFADE_MS,
            cutoff_hz: pitchfree::whisperize::DEFAULT_CUTOFF_HZ,
            noise_gain: pitchfree::whisperize::DEFAULT_NOISE_GAIN,
            lpc_order: DEFAULT_LPC_ORDER,
            workers: 1,
            encoding: Encoding::Pcm16,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rate == 0 {
            bail!("--rate must be positive");
        }
        if self.workers == 0 {
            bail!("--workers must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvertSummary {
    pub converted: usize,
    pub failed: usize,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

fn convert_one(job: &JobConfig, item: &InputItem) -> Result<(PathBuf, u64, Option<usize>)> {
    let seed = file_seed(job.seed, &item.relative);
    let w = resample(&read_wav(&item.path)?, job.rate)?;
    let (out, segments) = match job.method {
        Method::PitchFree => {
            let cfg = WhisperizeConfig {
                crossfade_ms: job.crossfade_ms,
                noise_gain_match: job.gain_match,
                seed,
                ..WhisperizeConfig::default()
            };
            let (out, report) = whisperize_with_report(&w, &cfg)?;
            (out, Some(report.segments.len()))
        }
        Method::WhisperEffect => (whisper_effect(&w, job.cutoff_hz, job.noise_gain, seed)?, None),
        Method::Lpc => (to_whisper_lpc(&w, job.lpc_order, &FrameConfig::default(), seed)?, None),
    };
    let dest = job.output_dir.join(&item.relative).with_extension("wav");
    if let Some(parent) = dest.parent() {
        fs::create_dir_all(parent)?;
    }
    write_wav(&dest, &out, job.encoding)?;
    Ok((dest, seed, segments))
}

/// Converts every input, writing `convert.log` in input order. Per-file
/// failures are logged and counted, never fatal to the batch.
pub fn cmd_convert(job: &JobConfig) -> Result<ConvertSummary> {
    job.validate()?;
    let items = discover_inputs(&job.input)?;
    fs::create_dir_all(&job.output_dir)?;
    let results: Vec<_> = pool(job.workers)?.install(|| items.par_iter().map(|it| convert_one(job, it)).collect());

    let mut log = fs::File::create(job.output_dir.join(CONVERT_LOG))?;
    writeln!(log, "status\tinput\toutput\tmethod\tseed\tsegments\tmessage")?;
    let mut summary = ConvertSummary { converted: 0, failed: 0 };
    for (item, res) in items.iter().zip(results) {
        match res {
            Ok((dest, seed, segments)) => {
                summary.converted += 1;
                let rel_out = dest.strip_prefix(&job.output_dir).map(slash_path).unwrap_or_default();
                let segs = segments.map_or("-".to_string(), |n| n.to_string());
                writeln!(log, "ok\t{}\t{rel_out}\t{}\t{seed}\t{segs}\t", item.relative, job.method.name())?;
            }
            Err(e) => {
                summary.failed += 1;
                warn!("{}: {e:#}", item.relative);
                let msg = format!("{e:#}").replace(['\t', '\n'], " ");
                writeln!(log, "error\t{}\t\t{}\t\t\t{msg}", item.relative, job.method.name())?;
            }
        }
    }
    info!("converted {} file(s), {} failed", summary.converted, summary.failed);
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct AnalyzeConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub ref_map: Option<PathBuf>,
    pub f0_dump: bool,
    pub rms: bool,
    pub spectrogram: bool,
    pub rate: u32,
    pub workers: usize,
}

/// Reads a two-column `utterance,reference` CSV; relative reference paths
/// resolve against the CSV's directory.
pub fn read_ref_map(path: &Path) -> Result<HashMap<String, PathBuf>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rd = csv::Reader::from_path(path)?;
    let mut map = HashMap::new();
    for row in rd.records() {
        let row = row?;
        let (Some(utt), Some(reference)) = (row.get(0), row.get(1)) else {
            bail!("{}: rows need utterance and reference columns", path.display());
        };
        map.insert(utt.to_string(), base.join(reference));
    }
    Ok(map)
}

fn analyze_one(cfg: &AnalyzeConfig, item: &InputItem, refs: &HashMap<String, PathBuf>) -> Result<metrics::UtteranceMetrics> {
    let frame = FrameConfig::default();
    let id = item.id();
    let w = resample(&read_wav(&item.path)?, cfg.rate)?;
    let reference = match refs.get(&id).or_else(|| refs.get(&item.relative)) {
        Some(p) => Some(resample(&read_wav(p)?, cfg.rate)?),
        None => {
            if !refs.is_empty() {
                warn!("{id}: no reference, mcd left empty");
            }
            None
        }
    };
    let mut m = metrics::analyze_utterance(&id, &w, reference.as_ref(), &frame)?;
    m.split = item.split.clone();
    let artifact = |dir: &str, ext: &str| -> Result<PathBuf> {
        let p = cfg.output_dir.join(dir).join(format!("{id}.{ext}"));
        fs::create_dir_all(p.parent().expect("joined path has a parent"))?;
        Ok(p)
    };
    if cfg.f0_dump {
        detect_f0(&w, &frame)?.write_csv(fs::File::create(artifact("f0", "csv")?)?)?;
    }
    if cfg.rms {
        let mut wr = csv::Writer::from_path(artifact("rms", "csv")?)?;
        wr.write_record(["time_seconds", "rms_dbfs"])?;
        for (t, db) in metrics::rms_profile(&w, DEFAULT_RMS_WINDOW_MS)? {
            wr.write_record([t.to_string(), db.to_string()])?;
        }
        wr.flush()?;
    }
    if cfg.spectrogram {
        metrics::render_spectrogram(&w, &frame, &artifact("spectrogram", "png")?)?;
    }
    Ok(m)
}

/// Writes `metrics.csv` (one row per readable utterance) and returns the
/// number of failed inputs.
pub fn cmd_analyze(cfg: &AnalyzeConfig) -> Result<(MetricsReport, usize)> {
    if cfg.rate == 0 || cfg.workers == 0 {
        bail!("--rate and --workers must be positive");
    }
    let items = discover_inputs(&cfg.input)?;
    let refs = match &cfg.ref_map {
        Some(p) => read_ref_map(p)?,
        None => HashMap::new(),
    };
    fs::create_dir_all(&cfg.output_dir)?;
    let results: Vec<_> =
        pool(cfg.workers)?.install(|| items.par_iter().map(|it| analyze_one(cfg, it, &refs)).collect());
    let mut report = MetricsReport::default();
    let mut failed = 0;
    for (item, res) in items.iter().zip(results) {
        match res {
            Ok(m) => report.records.push(m),
            Err(e) => {
                failed += 1;
                warn!("{}: {e:#}", item.relative);
            }
        }
    }
    report.write_csv(fs::File::create(cfg.output_dir.join(METRICS_CSV))?)?;
    Ok((report, failed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CorpusAction {
    Stats,
    Split,
    Pair,
}

pub fn cmd_corpus(action: CorpusAction, manifest: &Path, seed: u64, out: &Path) -> Result<()> {
    let mut records = corpus::load_manifest(manifest).with_context(|| format!("reading manifest {}", manifest.display()))?;
    match action {
        CorpusAction::Stats => corpus::corpus_stats(&records).write_csv(fs::File::create(out)?)?,
        CorpusAction::Split => {
            corpus::assign_splits(&mut records, seed)?;
            corpus::save_manifest(&records, out)?;
        }
        CorpusAction::Pair => {
            let mut wr = csv::Writer::from_path(out)?;
            wr.write_record(["source_dataset", "speaker_id", "id", "whisper_path", "normal_path"])?;
            for p in corpus::pair_styles(&records) {
                let w = p.whisper;
                let normal = p.normal.map_or("", |n| n.audio_path.as_str());
                wr.write_record([&w.source_dataset, &w.speaker_id, &w.id, &w.audio_path, normal])?;
            }
            wr.flush()?;
        }
    }
    Ok(())
}
