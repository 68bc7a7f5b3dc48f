//! Corpus manifests and dataset split construction.
//!
//! A manifest file is UTF-8 with one JSON object per line. Blank lines are
//! skipped. A line of the form `# frame_rate_hz: <value>` sets the manifest
//! frame rate; any other line starting with `#` is a comment.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::FormatError;

pub const DEFAULT_FRAME_RATE_HZ: f64 = 50.0;

/// Relative tolerance on the hour target of a split.
pub const SPLIT_TOLERANCE: f64 = 0.02;

const FRAME_RATE_DIRECTIVE: &str = "# frame_rate_hz:";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("duplicate id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("record {id:?}: {msg}")]
    InvalidRecord { id: String, msg: String },
    #[error("infeasible split: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Natural,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio_path: String,
    pub duration_sec: f64,
    pub speaker_id: String,
    pub gender: Gender,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    /// Sampling weight, present only on composed corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

impl UtteranceRecord {
    pub fn new(
        id: impl Into<String>,
        audio_path: impl Into<String>,
        duration_sec: f64,
        speaker_id: impl Into<String>,
        gender: Gender,
        kind: Kind,
    ) -> Self {
        UtteranceRecord {
            id: id.into(),
            audio_path: audio_path.into(),
            duration_sec,
            speaker_id: speaker_id.into(),
            gender,
            kind,
            text: None,
            tags: BTreeSet::new(),
            weight: None,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if !self.duration_sec.is_finite() || self.duration_sec < 0.0 {
            return Err(format!("invalid duration {}", self.duration_sec));
        }
        if let Some(w) = self.weight {
            if !w.is_finite() || w < 0.0 {
                return Err(format!("invalid weight {w}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<UtteranceRecord>,
    pub frame_rate_hz: f64,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            records: Vec::new(),
            frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
        }
    }
}

impl Manifest {
    /// Builds a manifest, validating every record and id uniqueness.
    pub fn new(records: Vec<UtteranceRecord>) -> Result<Self, ManifestError> {
        let mut seen = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            r.validate().map_err(|msg| ManifestError::InvalidRecord {
                id: r.id.clone(),
                msg,
            })?;
            if seen.insert(r.id.as_str(), i).is_some() {
                return Err(ManifestError::DuplicateId {
                    id: r.id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Manifest {
            records,
            frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.records.iter().map(|r| r.duration_sec).sum()
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut records = Vec::new();
        let mut frame_rate_hz = DEFAULT_FRAME_RATE_HZ;
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix(FRAME_RATE_DIRECTIVE) {
                frame_rate_hz = rest
                    .trim()
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite() && *v > 0.0)
                    .ok_or_else(|| ManifestError::Malformed {
                        line: lineno,
                        msg: format!("bad frame rate {:?}", rest.trim()),
                    })?;
                continue;
            }
            if trimmed.starts_with('#') {
                continue;
            }
            let rec: UtteranceRecord =
                serde_json::from_str(trimmed).map_err(|e| ManifestError::Malformed {
                    line: lineno,
                    msg: e.to_string(),
                })?;
            rec.validate()
                .map_err(|msg| ManifestError::Malformed { line: lineno, msg })?;
            if seen.contains_key(&rec.id) {
                return Err(ManifestError::DuplicateId {
                    id: rec.id,
                    line: lineno,
                });
            }
            seen.insert(rec.id.clone(), lineno);
            records.push(rec);
        }
        Ok(Manifest {
            records,
            frame_rate_hz,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if self.frame_rate_hz != DEFAULT_FRAME_RATE_HZ {
            out.push_str(&format!("{FRAME_RATE_DIRECTIVE} {}\n", self.frame_rate_hz));
        }
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    Manifest::parse(&text)
}

pub fn save_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<(), ManifestError> {
    let path = path.as_ref();
    fs::write(path, m.to_text()).map_err(|e| FormatError::io(path, e).into())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestStats {
    pub total_hours: f64,
    pub utterances: usize,
    pub speakers: usize,
    pub genders: BTreeMap<Gender, usize>,
    pub kinds: BTreeMap<Kind, usize>,
}

/// Summary counts. Gender counts are per speaker, kind counts per utterance.
pub fn manifest_stats(m: &Manifest) -> ManifestStats {
    let mut speakers: BTreeMap<&str, Gender> = BTreeMap::new();
    let mut kinds = BTreeMap::new();
    for r in &m.records {
        speakers.entry(&r.speaker_id).or_insert(r.gender);
        *kinds.entry(r.kind).or_insert(0) += 1;
    }
    let mut genders = BTreeMap::new();
    for g in speakers.values() {
        *genders.entry(*g).or_insert(0) += 1;
    }
    ManifestStats {
        total_hours: m.total_duration() / 3600.0,
        utterances: m.records.len(),
        speakers: speakers.len(),
        genders,
        kinds,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    pub target_hours: f64,
    pub speaker_budget: usize,
    pub gender_balance: bool,
    pub seed: u64,
}

struct SpeakerPool<'a> {
    gender: Gender,
    total_sec: f64,
    records: Vec<&'a UtteranceRecord>,
}

/// Selects a subset of `manifest` with roughly `target_hours` of speech.
///
/// Speakers are taken in seeded random order, alternating male and female
/// when balancing is requested; if their combined data falls short of the
/// target, the smallest chosen speaker is swapped for a larger unchosen one
/// of the same gender while that helps. Utterances are then drawn round-robin
/// over speakers, each speaker's utterances in seeded random order, until the
/// target is reached. Output keeps the input record order.
pub fn build_split(m: &Manifest, p: &SplitParams) -> Result<Manifest, ManifestError> {
    if !(p.target_hours > 0.0) || !p.target_hours.is_finite() {
        return Err(ManifestError::Infeasible(format!(
            "target hours must be positive, got {}",
            p.target_hours
        )));
    }
    if p.speaker_budget == 0 {
        return Err(ManifestError::Infeasible("speaker budget is 0".into()));
    }
    if m.is_empty() {
        return Err(ManifestError::Infeasible("manifest is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let mut by_speaker: BTreeMap<&str, SpeakerPool> = BTreeMap::new();
    for r in m.records.iter().filter(|r| r.duration_sec > 0.0) {
        let pool = by_speaker.entry(&r.speaker_id).or_insert(SpeakerPool {
            gender: r.gender,
            total_sec: 0.0,
            records: Vec::new(),
        });
        pool.total_sec += r.duration_sec;
        pool.records.push(r);
    }
    if by_speaker.is_empty() {
        return Err(ManifestError::Infeasible(
            "no record has positive duration".into(),
        ));
    }

    let mut order: Vec<&str> = by_speaker.keys().copied().collect();
    order.shuffle(&mut rng);

    let target_sec = p.target_hours * 3600.0;
    let chosen = if p.gender_balance {
        choose_balanced(&order, &by_speaker, p.speaker_budget, target_sec)?
    } else {
        let mut chosen: Vec<&str> = order.iter().take(p.speaker_budget).copied().collect();
        repair_capacity(&mut chosen, &order, &by_speaker, target_sec, |_| true);
        chosen
    };

    let capacity: f64 = chosen.iter().map(|s| by_speaker[s].total_sec).sum();
    let mut keep: BTreeSet<&str> = BTreeSet::new();
    if capacity <= target_sec * (1.0 + SPLIT_TOLERANCE) {
        for s in &chosen {
            keep.extend(by_speaker[s].records.iter().map(|r| r.id.as_str()));
        }
    } else {
        let mut queues: Vec<Vec<&UtteranceRecord>> = chosen
            .iter()
            .map(|s| {
                let mut recs = by_speaker[s].records.clone();
                recs.shuffle(&mut rng);
                recs.reverse();
                recs
            })
            .collect();
        let upper = target_sec * (1.0 + SPLIT_TOLERANCE);
        let mut total = 0.0;
        'fill: loop {
            let mut progressed = false;
            for q in queues.iter_mut() {
                if total >= target_sec {
                    break 'fill;
                }
                while let Some(r) = q.pop() {
                    if total + r.duration_sec <= upper {
                        total += r.duration_sec;
                        keep.insert(&r.id);
                        progressed = true;
                        break;
                    }
                }
            }
            if !progressed {
                break;
            }
        }
    }

    let records = m
        .records
        .iter()
        .filter(|r| keep.contains(r.id.as_str()))
        .cloned()
        .collect();
    Ok(Manifest {
        records,
        frame_rate_hz: m.frame_rate_hz,
    })
}

fn choose_balanced<'a>(
    order: &[&'a str],
    pools: &BTreeMap<&'a str, SpeakerPool>,
    budget: usize,
    target_sec: f64,
) -> Result<Vec<&'a str>, ManifestError> {
    let males: Vec<&str> = order
        .iter()
        .copied()
        .filter(|s| pools[s].gender == Gender::Male)
        .collect();
    let females: Vec<&str> = order
        .iter()
        .copied()
        .filter(|s| pools[s].gender == Gender::Female)
        .collect();
    if males.is_empty() && females.is_empty() {
        return Err(ManifestError::Infeasible(
            "gender balance requested but no speaker is labelled male or female".into(),
        ));
    }
    let (mut mi, mut fi) = (0, 0);
    let mut chosen = Vec::new();
    while chosen.len() < budget {
        if mi <= fi && mi < males.len() {
            chosen.push(males[mi]);
            mi += 1;
        } else if fi <= mi && fi < females.len() {
            chosen.push(females[fi]);
            fi += 1;
        } else {
            break;
        }
    }
    for g in [Gender::Male, Gender::Female] {
        repair_capacity(&mut chosen, order, pools, target_sec, |s| {
            pools[s].gender == g
        });
    }
    Ok(chosen)
}

/// Swaps the smallest chosen speaker matching `eligible` for the largest
/// unchosen one while capacity is below the target and the swap gains data.
fn repair_capacity<'a>(
    chosen: &mut [&'a str],
    order: &[&'a str],
    pools: &BTreeMap<&'a str, SpeakerPool>,
    target_sec: f64,
    eligible: impl Fn(&str) -> bool,
) {
    let lower = target_sec * (1.0 - SPLIT_TOLERANCE);
    loop {
        let capacity: f64 = chosen.iter().map(|s| pools[s].total_sec).sum();
        if capacity >= lower {
            return;
        }
        let in_set: BTreeSet<&str> = chosen.iter().copied().collect();
        let smallest = chosen
            .iter()
            .enumerate()
            .filter(|(_, s)| eligible(s))
            .min_by(|a, b| pools[a.1].total_sec.total_cmp(&pools[b.1].total_sec));
        let largest = order
            .iter()
            .filter(|s| eligible(s) && !in_set.contains(*s))
            .max_by(|a, b| pools[*a].total_sec.total_cmp(&pools[*b].total_sec));
        match (smallest, largest) {
            (Some((i, s)), Some(l)) if pools[l].total_sec > pools[s].total_sec => chosen[i] = l,
            _ => return,
        }
    }
}
