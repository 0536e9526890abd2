//! Objective, non-neural metrics: mel cepstral distortion, RMS level
//! profiles, spectrogram images, and a per-utterance report.

use std::collections::BTreeMap;
use std::f64::consts::{LN_10, PI};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::pitch::{detect_f0, vtr};
use crate::signal::{mel_spectrogram, stft, FrameConfig, Waveform, DEFAULT_N_MELS, LOG_FLOOR};
use crate::{Error, Result};

pub const MCD_COEFFS: usize = 13;
pub const RMS_FLOOR_DBFS: f64 = -100.0;
pub const DEFAULT_RMS_WINDOW_MS: f64 = 50.0;
pub const SPECTROGRAM_RANGE_DB: f64 = 80.0;

/// `10 sqrt(2) / ln 10`.
pub fn mcd_constant() -> f64 {
    10.0 * 2f64.sqrt() / LN_10
}

/// Mel cepstra c1..c13 per frame: orthonormal DCT-II of the 80-band log-mel
/// frame with c0 dropped.
pub fn mel_cepstra(w: &Waveform, cfg: &FrameConfig) -> Result<Vec<Vec<f64>>> {
    let mel = mel_spectrogram(w, cfg, DEFAULT_N_MELS)?;
    let m = mel.n_mels as f64;
    let basis: Vec<Vec<f64>> = (1..=MCD_COEFFS)
        .map(|q| {
            (0..mel.n_mels)
                .map(|b| (2.0 / m).sqrt() * (PI * q as f64 * (b as f64 + 0.5) / m).cos())
                .collect()
        })
        .collect();
    Ok(mel
        .values
        .iter()
        .map(|frame| {
            basis
                .iter()
                .map(|row| row.iter().zip(frame).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect())
}

/// Dynamic time warping with Euclidean local cost and unit-weight steps
/// (horizontal, vertical, diagonal). Returns the mean local cost along the
/// optimal path.
pub fn dtw_mean_cost(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (n, m) = (a.len(), b.len());
    let dist = |i: usize, j: usize| -> f64 {
        a[i].iter().zip(&b[j]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = best + dist(i, j);
        }
    }
    // backtrack for the path length, preferring the diagonal on ties
    let (mut i, mut j, mut steps) = (n - 1, m - 1, 1usize);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
        let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
        let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        steps += 1;
    }
    Ok(acc[n * m - 1] / steps as f64)
}

/// Mel cepstral distortion in dB between DTW-aligned cepstral sequences.
pub fn mcd(reference: &Waveform, hypothesis: &Waveform, cfg: &FrameConfig) -> Result<f64> {
    if reference.sample_rate() != hypothesis.sample_rate() {
        return Err(Error::input(format!(
            "sample rates differ: {} vs {}",
            reference.sample_rate(),
            hypothesis.sample_rate()
        )));
    }
    let a = mel_cepstra(reference, cfg)?;
    let b = mel_cepstra(hypothesis, cfg)?;
    Ok(mcd_constant() * dtw_mean_cost(&a, &b)?)
}

/// RMS level in dBFS over consecutive non-overlapping windows, stamped at
/// each window center. A trailing partial window is dropped unless the signal
/// is shorter than one window.
pub fn rms_profile(w: &Waveform, window_ms: f64) -> Result<Vec<(f64, f64)>> {
    if !(window_ms > 0.0 && window_ms.is_finite()) {
        return Err(Error::config("window_ms must be positive"));
    }
    let sr = f64::from(w.sample_rate());
    let win = ((window_ms * sr / 1000.0).round() as usize).max(1);
    let x = w.samples();
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let chunks: Vec<&[f64]> = if x.len() < win {
        vec![x]
    } else {
        x.chunks_exact(win).collect()
    };
    Ok(chunks
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mean_sq = c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64;
            let db = if mean_sq > 0.0 {
                (10.0 * mean_sq.log10()).max(RMS_FLOOR_DBFS)
            } else {
                RMS_FLOOR_DBFS
            };
            ((i * win) as f64 / sr + c.len() as f64 / (2.0 * sr), db)
        })
        .collect())
}

/// 8-bit grayscale raster, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Binary PGM (P5).
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn read_pgm<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::input("truncated PGM header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" || fields[3] != "255" {
            return Err(Error::input("only 8-bit binary PGM is supported"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::input("bad PGM size"));
        let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
        let pixels = bytes.get(pos + 1..pos + 1 + width * height).ok_or_else(|| Error::input("truncated PGM data"))?;
        Ok(Self {
            width,
            height,
            pixels: pixels.to_vec(),
        })
    }
}

/// Log-magnitude spectrogram image: one column per frame, one row per bin,
/// highest frequency at the top, 80 dB below the peak mapped to black.
pub fn spectrogram_image(w: &Waveform, cfg: &FrameConfig) -> Result<GrayImage> {
    let mags = stft(w, cfg)?.magnitudes();
    let width = mags.len();
    let height = cfg.n_bins();
    let db: Vec<Vec<f64>> = mags
        .iter()
        .map(|col| col.iter().map(|m| 20.0 * m.max(LOG_FLOOR).log10()).collect())
        .collect();
    let floor_db = 20.0 * LOG_FLOOR.log10();
    let peak = db.iter().flatten().cloned().fold(floor_db, f64::max);
    let mut pixels = vec![0u8; width * height];
    if peak > floor_db {
        let bottom = peak - SPECTROGRAM_RANGE_DB;
        for (x, col) in db.iter().enumerate() {
            for (bin, &v) in col.iter().enumerate() {
                let level = ((v - bottom) / SPECTROGRAM_RANGE_DB).clamp(0.0, 1.0);
                let y = height - 1 - bin;
                pixels[y * width + x] = (level * 255.0).round() as u8;
            }
        }
    }
    Ok(GrayImage { width, height, pixels })
}

/// Writes [`spectrogram_image`] as PNG when `path` ends in `.png`, else PGM.
pub fn render_spectrogram(w: &Waveform, cfg: &FrameConfig, path: &Path) -> Result<GrayImage> {
    let img = spectrogram_image(w, cfg)?;
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
            .ok_or_else(|| Error::input("image buffer size mismatch"))?;
        buf.save_with_format(path, image::ImageFormat::Png)?;
    } else {
        let mut out = BufWriter::new(File::create(path)?);
        img.write_pgm(&mut out)?;
        out.flush()?;
    }
    Ok(img)
}

/// Columns accepted as pass-through values from externally computed metrics.
pub const EXTERNAL_COLUMNS: [&str; 4] = ["dnsmos", "utmos", "cer_wer", "spk_sim"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UtteranceMetrics {
    pub utterance_id: String,
    pub split: Option<String>,
    pub duration_s: f64,
    pub vtr: f64,
    pub mcd_db: Option<f64>,
    pub rms_dbfs_mean: f64,
    pub external: BTreeMap<String, f64>,
}

/// Computes VTR, mean RMS level and, given a reference, MCD.
pub fn analyze_utterance(
    utterance_id: &str,
    w: &Waveform,
    reference: Option<&Waveform>,
    cfg: &FrameConfig,
) -> Result<UtteranceMetrics> {
    let track = detect_f0(w, cfg)?;
    let profile = rms_profile(w, DEFAULT_RMS_WINDOW_MS)?;
    let rms_mean = if profile.is_empty() {
        RMS_FLOOR_DBFS
    } else {
        profile.iter().map(|p| p.1).sum::<f64>() / profile.len() as f64
    };
    Ok(UtteranceMetrics {
        utterance_id: utterance_id.to_string(),
        split: None,
        duration_s: w.duration_s(),
        vtr: vtr(&track)?,
        mcd_db: reference.map(|r| mcd(r, w, cfg)).transpose()?,
        rms_dbfs_mean: rms_mean,
        external: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitAggregate {
    pub split: String,
    pub count: usize,
    pub duration_s: f64,
    pub vtr: f64,
    pub mcd_db: Option<f64>,
    pub rms_dbfs_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub records: Vec<UtteranceMetrics>,
}

pub const REPORT_HEADER: [&str; 10] = [
    "utterance_id",
    "split",
    "duration_s",
    "vtr",
    "mcd_db",
    "rms_dbfs_mean",
    "dnsmos",
    "utmos",
    "cer_wer",
    "spk_sim",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricsReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(REPORT_HEADER)?;
        for r in &self.records {
            let mut row = vec![
                r.utterance_id.clone(),
                r.split.clone().unwrap_or_default(),
                format!("{:.6}", r.duration_s),
                format!("{:.6}", r.vtr),
                fmt_opt(r.mcd_db),
                format!("{:.6}", r.rms_dbfs_mean),
            ];
            row.extend(EXTERNAL_COLUMNS.iter().map(|c| fmt_opt(r.external.get(*c).copied())));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Merges externally computed columns keyed by `utterance_id`. Unknown
    /// columns and unknown ids are ignored; returns how many records matched.
    pub fn merge_external<R: Read>(&mut self, input: R) -> Result<usize> {
        let mut rd = csv::Reader::from_reader(input);
        let headers = rd.headers()?.clone();
        let id_col = headers
            .iter()
            .position(|h| h == "utterance_id")
            .ok_or_else(|| Error::input("external metrics need an utterance_id column"))?;
        let mut matched = 0;
        for row in rd.records() {
            let row = row?;
            let Some(rec) = self.records.iter_mut().find(|r| r.utterance_id == row[id_col]) else {
                continue;
            };
            matched += 1;
            for (name, value) in headers.iter().zip(row.iter()) {
                if EXTERNAL_COLUMNS.contains(&name) && !value.is_empty() {
                    let v = value
                        .parse()
                        .map_err(|_| Error::input(format!("{name}: bad value {value:?}")))?;
                    rec.external.insert(name.to_string(), v);
                }
            }
        }
        Ok(matched)
    }

    /// Per-split means (records without a split fall under `"all"`).
    /// `duration_weighted` weights each utterance by its duration.
    pub fn aggregate(&self, duration_weighted: bool) -> Vec<SplitAggregate> {
        let mut groups: BTreeMap<String, Vec<&UtteranceMetrics>> = BTreeMap::new();
        for r in &self.records {
            groups
                .entry(r.split.clone().unwrap_or_else(|| "all".into()))
                .or_default()
                .push(r);
        }
        groups
            .into_iter()
            .map(|(split, recs)| {
                let weight = |r: &UtteranceMetrics| if duration_weighted { r.duration_s } else { 1.0 };
                let mean = |f: &dyn Fn(&UtteranceMetrics) -> Option<f64>| -> Option<f64> {
                    let (mut num, mut den) = (0.0, 0.0);
                    for r in &recs {
                        if let Some(v) = f(r) {
                            num += weight(r) * v;
                            den += weight(r);
                        }
                    }
                    (den > 0.0).then(|| num / den)
                };
                SplitAggregate {
                    count: recs.len(),
                    duration_s: recs.iter().map(|r| r.duration_s).sum(),
                    vtr: mean(&|r| Some(r.vtr)).unwrap_or(0.0),
                    mcd_db: mean(&|r| r.mcd_db),
                    rms_dbfs_mean: mean(&|r| Some(r.rms_dbfs_mean)).unwrap_or(RMS_FLOOR_DBFS),
                    split,
                }
            })
            .collect()
    }
}
