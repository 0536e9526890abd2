//! Corpus manifests, speaker-disjoint splits, whisper/normal pairing and
//! dataset statistics.
//!
//! # Manifest format
//!
//! UTF-8 text. The first line is the header `# pitchfree-manifest v1`; every
//! following non-blank line is one JSON object:
//!
//! ```text
//! # pitchfree-manifest v1
//! {"id":"a01","speaker_id":"spk1","language":"zh","style":"whisper","audio_path":"wav/a01.wav","duration_s":4.2,"license":"BY-NC","source_dataset":"WhispNJU"}
//! ```
//!
//! Optional keys: `transcript`, `split` (`train`/`valid`/`test`, honored
//! verbatim when present) and `gender` (free text, `M`/`F` by convention).
//! `language` is `en`, `zh`, or any other tag. Records are keyed by
//! `(source_dataset, style, id)`, so a whisper and its normal counterpart can
//! share an id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MANIFEST_HEADER: &str = "# pitchfree-manifest v1";
const HEADER_PREFIX: &str = "# pitchfree-manifest";
pub const SPLIT_RATIOS: (f64, f64, f64) = (0.6, 0.2, 0.2);
pub const MIN_SPEAKERS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Language {
    En,
    Zh,
    Other(String),
}

impl From<String> for Language {
    fn from(s: String) -> Self {
        match s.as_str() {
            "en" => Language::En,
            "zh" => Language::Zh,
            _ => Language::Other(s),
        }
    }
}

impl From<Language> for String {
    fn from(l: Language) -> Self {
        l.to_string()
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Language::En => f.write_str("en"),
            Language::Zh => f.write_str("zh"),
            Language::Other(tag) => f.write_str(tag),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Whisper,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker_id: String,
    pub language: Language,
    pub style: Style,
    pub audio_path: String,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    pub license: String,
    pub source_dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
}

impl UtteranceRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.speaker_id.is_empty() {
            return Err("empty speaker_id".into());
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(format!("duration_s must be positive, got {}", self.duration_s));
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    read_manifest(fs::File::open(path)?)
}

pub fn read_manifest<R: Read>(input: R) -> Result<Vec<UtteranceRecord>> {
    let mut records = Vec::new();
    let mut seen: HashMap<(String, Style, String), usize> = HashMap::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix(HEADER_PREFIX) {
            if rest.trim() != "v1" {
                return Err(Error::Manifest {
                    line: line_no,
                    reason: format!("unsupported manifest version {:?}", rest.trim()),
                });
            }
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let rec: UtteranceRecord = serde_json::from_str(trimmed).map_err(|e| Error::Manifest {
            line: line_no,
            reason: e.to_string(),
        })?;
        rec.validate().map_err(|reason| Error::Manifest { line: line_no, reason })?;
        let key = (rec.source_dataset.clone(), rec.style, rec.id.clone());
        if seen.insert(key, line_no).is_some() {
            return Err(Error::DuplicateRecord {
                line: line_no,
                dataset: rec.source_dataset,
                id: rec.id,
            });
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_manifest<W: Write>(records: &[UtteranceRecord], mut out: W) -> Result<()> {
    writeln!(out, "{MANIFEST_HEADER}")?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::input(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_manifest(records: &[UtteranceRecord], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_manifest(records, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, Split>,
    pub seed: u64,
    pub ratios: (f64, f64, f64),
}

impl SplitAssignment {
    pub fn get(&self, speaker: &str) -> Option<Split> {
        self.assignments.get(speaker).copied()
    }

    pub fn speakers_in(&self, split: Split) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

/// Sizes of the (train, valid, test) splits for `n` speakers: valid and test
/// are floored, train takes the remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let valid = (n as f64 * SPLIT_RATIOS.1).floor() as usize;
    let test = (n as f64 * SPLIT_RATIOS.2).floor() as usize;
    (n - valid - test, valid, test)
}

/// Speaker-disjoint 60/20/20 split.
///
/// Speakers are sorted, shuffled by a permutation seeded from `seed`, and cut
/// into train, valid and test blocks of [`split_sizes`].
pub fn split_by_speaker(records: &[UtteranceRecord], seed: u64) -> Result<SplitAssignment> {
    let mut speakers: Vec<String> = records
        .iter()
        .map(|r| r.speaker_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if speakers.len() < MIN_SPEAKERS {
        return Err(Error::TooFewSpeakers(speakers.len()));
    }
    speakers.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, valid, _) = split_sizes(speakers.len());
    let assignments = speakers
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let split = if i < train {
                Split::Train
            } else if i < train + valid {
                Split::Valid
            } else {
                Split::Test
            };
            (s, split)
        })
        .collect();
    Ok(SplitAssignment {
        assignments,
        seed,
        ratios: SPLIT_RATIOS,
    })
}

/// Fills the `split` of every record that lacks one, splitting each source
/// dataset by speaker independently. Records that already carry a split
/// (upstream official splits) are left alone.
pub fn assign_splits(records: &mut [UtteranceRecord], seed: u64) -> Result<()> {
    let mut by_dataset: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.split.is_none() {
            by_dataset.entry(r.source_dataset.clone()).or_default().push(i);
        }
    }
    for (dataset, idx) in by_dataset {
        let subset: Vec<UtteranceRecord> = idx.iter().map(|&i| records[i].clone()).collect();
        let assignment = split_by_speaker(&subset, seed).map_err(|e| match e {
            Error::TooFewSpeakers(n) => Error::input(format!(
                "dataset {dataset} has {n} speakers without an upstream split; at least {MIN_SPEAKERS} are needed"
            )),
            other => other,
        })?;
        for i in idx {
            records[i].split = assignment.get(&records[i].speaker_id);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StylePair<'a> {
    pub whisper: &'a UtteranceRecord,
    pub normal: Option<&'a UtteranceRecord>,
}

/// Matches each whisper record to the normal record with the same dataset,
/// speaker and id. Every whisper appears exactly once, in input order.
pub fn pair_styles(records: &[UtteranceRecord]) -> Vec<StylePair<'_>> {
    let normals: HashMap<(&str, &str, &str), &UtteranceRecord> = records
        .iter()
        .filter(|r| r.style == Style::Normal)
        .map(|r| ((r.source_dataset.as_str(), r.speaker_id.as_str(), r.id.as_str()), r))
        .collect();
    records
        .iter()
        .filter(|r| r.style == Style::Whisper)
        .map(|w| StylePair {
            whisper: w,
            normal: normals
                .get(&(w.source_dataset.as_str(), w.speaker_id.as_str(), w.id.as_str()))
                .copied(),
        })
        .collect()
}

/// Column key of the statistics table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroupKey {
    pub language: String,
    /// `None` for records without a split.
    pub split: Option<Split>,
}

impl GroupKey {
    fn sort_key(&self) -> (&str, u8) {
        let rank = match self.split {
            Some(Split::Train) => 0,
            Some(Split::Valid) => 1,
            Some(Split::Test) => 2,
            None => 3,
        };
        (&self.language, rank)
    }

    pub fn label(&self) -> String {
        let split = self.split.map_or("unassigned".to_string(), |s| s.to_string());
        format!("{}/{split}", self.language)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupStats {
    pub file_count: usize,
    pub total_seconds: f64,
    /// Distinct speakers per declared gender (`"?"` when undeclared).
    pub speakers_by_gender: BTreeMap<String, usize>,
}

impl GroupStats {
    pub fn hours(&self) -> f64 {
        self.total_seconds / 3600.0
    }

    pub fn mean_seconds(&self) -> f64 {
        if self.file_count == 0 {
            0.0
        } else {
            self.total_seconds / self.file_count as f64
        }
    }

    pub fn speaker_count(&self) -> usize {
        self.speakers_by_gender.values().sum()
    }

    /// `78M 87F` style summary; males first, then females, then the rest.
    pub fn speaker_summary(&self) -> String {
        let rank = |g: &str| match g {
            "M" => 0,
            "F" => 1,
            _ => 2,
        };
        let mut parts: Vec<(&String, &usize)> = self.speakers_by_gender.iter().collect();
        parts.sort_by_key(|(g, _)| (rank(g), g.to_string()));
        if parts.len() == 1 && parts[0].0 == "?" {
            return parts[0].1.to_string();
        }
        parts
            .iter()
            .map(|(g, n)| format!("{n}{g}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusStats {
    pub groups: Vec<(GroupKey, GroupStats)>,
}

impl CorpusStats {
    pub fn get(&self, language: &str, split: Option<Split>) -> Option<&GroupStats> {
        self.groups
            .iter()
            .find(|(k, _)| k.language == language && k.split == split)
            .map(|(_, s)| s)
    }

    pub fn total(&self) -> GroupStats {
        let mut t = GroupStats::default();
        for (_, g) in &self.groups {
            t.file_count += g.file_count;
            t.total_seconds += g.total_seconds;
            for (gender, n) in &g.speakers_by_gender {
                *t.speakers_by_gender.entry(gender.clone()).or_default() += n;
            }
        }
        t
    }

    /// Table with one column per group and rows `File Count`, `Size (h)`,
    /// `Avg (s)`, `Speaker Count`. No groups gives a header-only table.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let mut header = vec!["metric".to_string()];
        header.extend(self.groups.iter().map(|(k, _)| k.label()));
        wr.write_record(&header)?;
        if !self.groups.is_empty() {
            let row = |name: &str, f: &dyn Fn(&GroupStats) -> String| {
                let mut r = vec![name.to_string()];
                r.extend(self.groups.iter().map(|(_, g)| f(g)));
                r
            };
            wr.write_record(row("File Count", &|g| g.file_count.to_string()))?;
            wr.write_record(row("Size (h)", &|g| format!("{:.2}", g.hours())))?;
            wr.write_record(row("Avg (s)", &|g| format!("{:.2}", g.mean_seconds())))?;
            wr.write_record(row("Speaker Count", &|g| g.speaker_summary()))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Per (language, split): files, hours, mean seconds and distinct speakers by
/// gender.
pub fn corpus_stats(records: &[UtteranceRecord]) -> CorpusStats {
    let mut groups: Vec<(GroupKey, GroupStats)> = Vec::new();
    let mut index: HashMap<GroupKey, usize> = HashMap::new();
    let mut seen_speakers: HashMap<GroupKey, BTreeSet<(String, String)>> = HashMap::new();
    for r in records {
        let key = GroupKey {
            language: r.language.to_string(),
            split: r.split,
        };
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            groups.push((key.clone(), GroupStats::default()));
            groups.len() - 1
        });
        let g = &mut groups[slot].1;
        g.file_count += 1;
        g.total_seconds += r.duration_s;
        let gender = r.gender.clone().unwrap_or_else(|| "?".into());
        let speaker = (r.source_dataset.clone(), r.speaker_id.clone());
        if seen_speakers.entry(key).or_default().insert(speaker) {
            *g.speakers_by_gender.entry(gender).or_default() += 1;
        }
    }
    groups.sort_by(|a, b| a.0.sort_key().cmp(&b.0.sort_key()));
    CorpusStats { groups }
}

impl std::hash::Hash for GroupKey {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.language.hash(state);
        self.split.hash(state);
    }
}
