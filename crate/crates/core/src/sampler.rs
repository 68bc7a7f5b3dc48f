//! Oversampled composition of natural and synthetic corpora.
//!
//! Natural utterances carry weight `r`, synthetic ones weight 1. Epoch
//! schedules draw utterances with replacement in proportion to weight.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::manifest::{Manifest, UtteranceRecord};

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("id {0:?} appears in both manifests")]
    IdCollision(String),
    #[error("empty {0} pool")]
    EmptyPool(&'static str),
    #[error("oversampling rate must be finite and >= 1, got {0}")]
    BadRate(f64),
    #[error("epoch size must be at least 1")]
    ZeroEpoch,
    #[error("total sampling weight is zero")]
    ZeroWeight,
    #[error("invalid weight {weight} at index {index}")]
    BadWeight { index: usize, weight: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// Each utterance counts once.
    #[default]
    Utterance,
    /// Each utterance counts by its duration in seconds.
    Duration,
}

#[derive(Debug, Clone)]
pub struct MixSpec<'a> {
    pub natural: &'a Manifest,
    pub synthetic: &'a Manifest,
    pub oversampling_rate: f64,
    pub epoch_size: usize,
    pub seed: u64,
    pub mode: WeightMode,
}

impl MixSpec<'_> {
    fn validate(&self) -> Result<(), SamplerError> {
        if !self.oversampling_rate.is_finite() || self.oversampling_rate < 1.0 {
            return Err(SamplerError::BadRate(self.oversampling_rate));
        }
        if self.natural.is_empty() {
            return Err(SamplerError::EmptyPool("natural"));
        }
        if self.synthetic.is_empty() {
            return Err(SamplerError::EmptyPool("synthetic"));
        }
        if self.epoch_size == 0 {
            return Err(SamplerError::ZeroEpoch);
        }
        Ok(())
    }
}

fn base_weight(r: &UtteranceRecord, mode: WeightMode) -> f64 {
    match mode {
        WeightMode::Utterance => 1.0,
        WeightMode::Duration => r.duration_sec,
    }
}

/// Merges both manifests (natural first) with per-record sampling weights.
pub fn compose_corpus(spec: &MixSpec) -> Result<Manifest, SamplerError> {
    spec.validate()?;
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(spec.natural.len() + spec.synthetic.len());
    for (m, scale) in [
        (spec.natural, spec.oversampling_rate),
        (spec.synthetic, 1.0),
    ] {
        for r in &m.records {
            if !seen.insert(r.id.as_str()) {
                return Err(SamplerError::IdCollision(r.id.clone()));
            }
            let mut rec = r.clone();
            rec.weight = Some(scale * base_weight(r, spec.mode));
            records.push(rec);
        }
    }
    Ok(Manifest {
        records,
        frame_rate_hz: spec.natural.frame_rate_hz,
    })
}

/// Inverse-CDF sampler over non-negative weights.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    cumulative: Vec<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &[f64]) -> Result<Self, SamplerError> {
        if weights.is_empty() {
            return Err(SamplerError::EmptyPool("weighted"));
        }
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for (index, &weight) in weights.iter().enumerate() {
            if !weight.is_finite() || weight < 0.0 {
                return Err(SamplerError::BadWeight { index, weight });
            }
            acc += weight;
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return Err(SamplerError::ZeroWeight);
        }
        Ok(WeightedSampler { cumulative })
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.total();
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

/// The generator for epoch `epoch`: independent stream per epoch.
pub fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

/// Draws `epoch_size` indices for one epoch.
pub fn schedule_indices(
    sampler: &WeightedSampler,
    epoch_size: usize,
    seed: u64,
    epoch: u64,
) -> Vec<usize> {
    let mut rng = epoch_rng(seed, epoch);
    (0..epoch_size).map(|_| sampler.draw(&mut rng)).collect()
}

/// Schedule over a weighted manifest; records without a weight count as 1.
pub fn schedule_from_manifest(
    merged: &Manifest,
    epoch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<String>, SamplerError> {
    if epoch_size == 0 {
        return Err(SamplerError::ZeroEpoch);
    }
    let weights: Vec<f64> = merged
        .records
        .iter()
        .map(|r| r.weight.unwrap_or(1.0))
        .collect();
    let sampler = WeightedSampler::new(&weights)?;
    Ok(schedule_indices(&sampler, epoch_size, seed, epoch)
        .into_iter()
        .map(|i| merged.records[i].id.clone())
        .collect())
}

/// Utterance ids for epoch `epoch` of the mixture.
pub fn epoch_schedule(spec: &MixSpec, epoch: u64) -> Result<Vec<String>, SamplerError> {
    let merged = compose_corpus(spec)?;
    schedule_from_manifest(&merged, spec.epoch_size, spec.seed, epoch)
}

/// Expected fraction of natural draws: `r N_nat / (r N_nat + N_syn)`.
pub fn expected_natural_fraction(rate: f64, n_natural: usize, n_synthetic: usize) -> f64 {
    let nat = rate * n_natural as f64;
    nat / (nat + n_synthetic as f64)
}
