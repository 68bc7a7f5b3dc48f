//! Training targets for the text-to-unit, duration and pitch predictors.
//!
//! Unit EOS is the id one past the codebook (`k`); phoneme EOS is the id one
//! past the phoneme inventory. Output units are grouped in pairs. An odd
//! sequence pads its last pair with EOS; an even one gets an extra all-EOS
//! pair, so every target ends in a group containing EOS.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::SessionEmbedding;
use crate::pitch::PitchTrack;
use crate::segment::UnitSequence;

pub const REDUCTION_FACTOR: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum TargetError {
    #[error("empty unit sequence")]
    EmptyUnits,
    #[error("empty phoneme sequence")]
    EmptyPhonemes,
    #[error("unit sequence is not deduplicated: repeated unit {unit} at position {pos}")]
    NotDeduplicated { unit: u32, pos: usize },
    #[error("unit id {unit} collides with EOS id {eos}")]
    UnitOutOfRange { unit: u32, eos: u32 },
    #[error("phoneme id {phoneme} collides with EOS id {eos}")]
    PhonemeOutOfRange { phoneme: u32, eos: u32 },
    #[error("frame count mismatch (units vs pitch): {units} vs {pitch}")]
    LengthMismatch { units: usize, pitch: usize },
    #[error("{units} units but {counts} counts")]
    CountMismatch { units: usize, counts: usize },
    #[error("non-positive repetition count {count} at position {pos}")]
    BadCount { count: i64, pos: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct T2uTarget {
    pub utterance_id: String,
    pub input_phonemes: Vec<u32>,
    pub output_groups: Vec<[u32; REDUCTION_FACTOR]>,
    pub unit_eos: u32,
}

impl T2uTarget {
    /// Flattens groups and strips everything from the first EOS on.
    pub fn ungroup(&self) -> Vec<u32> {
        ungroup(&self.output_groups, self.unit_eos)
    }
}

pub fn ungroup(groups: &[[u32; REDUCTION_FACTOR]], eos: u32) -> Vec<u32> {
    groups
        .iter()
        .flatten()
        .copied()
        .take_while(|&u| u != eos)
        .collect()
}

/// Groups units in pairs with EOS padding and a guaranteed stop group.
pub fn group_units(units: &[u32], eos: u32) -> Vec<[u32; REDUCTION_FACTOR]> {
    let mut padded = units.to_vec();
    padded.push(eos);
    while !padded.len().is_multiple_of(REDUCTION_FACTOR) {
        padded.push(eos);
    }
    padded
        .chunks_exact(REDUCTION_FACTOR)
        .map(|c| [c[0], c[1]])
        .collect()
}

pub fn prepare_t2u_target(
    utterance_id: &str,
    phonemes: &[u32],
    phoneme_eos: u32,
    units: &UnitSequence,
    unit_eos: u32,
) -> Result<T2uTarget, TargetError> {
    if units.is_empty() {
        return Err(TargetError::EmptyUnits);
    }
    if phonemes.is_empty() {
        return Err(TargetError::EmptyPhonemes);
    }
    if let Some(pos) = units.units.windows(2).position(|w| w[0] == w[1]) {
        return Err(TargetError::NotDeduplicated {
            unit: units.units[pos + 1],
            pos: pos + 1,
        });
    }
    if let Some(&unit) = units.units.iter().find(|&&u| u >= unit_eos) {
        return Err(TargetError::UnitOutOfRange {
            unit,
            eos: unit_eos,
        });
    }
    if let Some(&phoneme) = phonemes.iter().find(|&&p| p >= phoneme_eos) {
        return Err(TargetError::PhonemeOutOfRange {
            phoneme,
            eos: phoneme_eos,
        });
    }
    let mut input_phonemes = phonemes.to_vec();
    input_phonemes.push(phoneme_eos);
    Ok(T2uTarget {
        utterance_id: utterance_id.to_string(),
        input_phonemes,
        output_groups: group_units(&units.units, unit_eos),
        unit_eos,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorTargets {
    pub dedup_units: Vec<u32>,
    pub repetition_counts: Vec<u32>,
    pub log_f0: Vec<f32>,
    pub voiced: Vec<bool>,
    pub session_embedding_ref: String,
}

pub fn prepare_predictor_targets(
    units: &UnitSequence,
    pitch: &PitchTrack,
    embedding: &SessionEmbedding,
) -> Result<PredictorTargets, TargetError> {
    if units.is_empty() {
        return Err(TargetError::EmptyUnits);
    }
    if let Some(pos) = units.units.windows(2).position(|w| w[0] == w[1]) {
        return Err(TargetError::NotDeduplicated {
            unit: units.units[pos + 1],
            pos: pos + 1,
        });
    }
    let frames = units.num_frames();
    if frames != pitch.len() {
        return Err(TargetError::LengthMismatch {
            units: frames,
            pitch: pitch.len(),
        });
    }
    Ok(PredictorTargets {
        dedup_units: units.units.clone(),
        repetition_counts: units.durations.clone(),
        log_f0: pitch.log_f0.clone(),
        voiced: pitch.voiced.clone(),
        session_embedding_ref: embedding.utterance_id.clone(),
    })
}

/// Expands deduplicated units by predicted repetition counts.
pub fn restore_durations(
    dedup_units: &[u32],
    predicted_counts: &[i64],
) -> Result<Vec<u32>, TargetError> {
    if dedup_units.len() != predicted_counts.len() {
        return Err(TargetError::CountMismatch {
            units: dedup_units.len(),
            counts: predicted_counts.len(),
        });
    }
    if let Some(pos) = predicted_counts.iter().position(|&c| c < 1) {
        return Err(TargetError::BadCount {
            count: predicted_counts[pos],
            pos,
        });
    }
    let mut out = Vec::with_capacity(predicted_counts.iter().sum::<i64>() as usize);
    for (&u, &c) in dedup_units.iter().zip(predicted_counts) {
        out.extend(std::iter::repeat_n(u, c as usize));
    }
    Ok(out)
}

/// One line of a target file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRecord {
    pub id: String,
    pub phonemes: Vec<u32>,
    pub groups: Vec<[u32; REDUCTION_FACTOR]>,
    pub counts: Vec<u32>,
    pub pitch_path: String,
    pub embedding_path: Option<String>,
}
