//! Corpus augmentation: duration stretching in the unit domain and additive
//! background noise at a sampled SNR.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::audio_io::{mean_square, read_wav, write_wav, FormatError, Waveform};
use crate::manifest::{Manifest, ManifestError, UtteranceRecord};
use crate::segment::{format_units_line, UnitSequence};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("stretch scalar {0} is below 1")]
    Compression(f64),
    #[error("non-positive duration at position {0}")]
    ZeroCount(usize),
    #[error("sample rate mismatch: signal {signal} Hz, noise {noise} Hz")]
    SampleRateMismatch { signal: u32, noise: u32 },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("SNR undefined: {0} has zero power")]
    SilentInput(&'static str),
    #[error("utterance {id:?}: {source}")]
    Utterance {
        id: String,
        #[source]
        source: Box<AugmentError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPolicy {
    pub stretch_low: f64,
    pub stretch_high: f64,
    pub snr_low_db: f64,
    pub snr_high_db: f64,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            stretch_low: 1.0,
            stretch_high: 1.5,
            snr_low_db: 0.0,
            snr_high_db: 15.0,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let finite = [
            self.stretch_low,
            self.stretch_high,
            self.snr_low_db,
            self.snr_high_db,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(AugmentError::InvalidPolicy("non-finite bound".into()));
        }
        if self.stretch_low < 1.0 {
            return Err(AugmentError::InvalidPolicy(format!(
                "stretch_low {} is below 1",
                self.stretch_low
            )));
        }
        if self.stretch_low > self.stretch_high || self.snr_low_db > self.snr_high_db {
            return Err(AugmentError::InvalidPolicy(
                "low bound exceeds high bound".into(),
            ));
        }
        Ok(())
    }
}

/// Per-utterance random draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyDraw {
    pub scalar: f64,
    pub snr_db: f64,
    /// Raw offset draw; reduced modulo the valid range when noise is fitted.
    pub noise_offset: u64,
    /// Raw noise-clip choice; reduced modulo the noise pool size.
    pub noise_choice: u64,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn uniform(rng: &mut ChaCha8Rng, low: f64, high: f64) -> f64 {
    if low == high {
        low
    } else {
        rng.random_range(low..=high)
    }
}

/// Deterministic draws for one utterance, a pure function of the policy
/// seed and the utterance id.
pub fn sample_policy(policy: &AugmentPolicy, utterance_id: &str) -> PolicyDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed ^ fnv1a(utterance_id).rotate_left(17));
    let scalar = uniform(&mut rng, policy.stretch_low, policy.stretch_high);
    let snr_db = uniform(&mut rng, policy.snr_low_db, policy.snr_high_db);
    PolicyDraw {
        scalar,
        snr_db,
        noise_offset: rng.random(),
        noise_choice: rng.random(),
    }
}

/// Scales each duration by `scalar`, rounding half up, never below 1.
pub fn stretch_durations(counts: &[u32], scalar: f64) -> Result<Vec<u32>, AugmentError> {
    if !scalar.is_finite() || scalar < 1.0 {
        return Err(AugmentError::Compression(scalar));
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if c == 0 {
                return Err(AugmentError::ZeroCount(i));
            }
            Ok(((c as f64 * scalar + 0.5).floor() as u32).max(1))
        })
        .collect()
}

pub fn stretch_sequence(seq: &UnitSequence, scalar: f64) -> Result<UnitSequence, AugmentError> {
    Ok(UnitSequence {
        units: seq.units.clone(),
        durations: stretch_durations(&seq.durations, scalar)?,
        frame_rate_hz: seq.frame_rate_hz,
        dedup: seq.dedup,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixOutput {
    pub mixed: Waveform,
    /// The noise exactly as added, gain applied.
    pub noise: Vec<f32>,
    pub gain: f64,
    pub offset: usize,
    pub clipped: usize,
}

/// Loops or crops `noise` to `len` samples starting at an offset derived
/// from `offset_draw`.
pub fn fit_noise(noise: &[f32], len: usize, offset_draw: u64) -> (Vec<f32>, usize) {
    if noise.len() >= len {
        let offset = (offset_draw % (noise.len() - len + 1) as u64) as usize;
        (noise[offset..offset + len].to_vec(), offset)
    } else {
        let offset = (offset_draw % noise.len() as u64) as usize;
        (
            (0..len)
                .map(|i| noise[(offset + i) % noise.len()])
                .collect(),
            offset,
        )
    }
}

/// Adds `noise` to `signal` at `snr_db`, using an offset drawn from `seed`.
pub fn mix_noise_at_snr(
    signal: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    seed: u64,
    clip: bool,
) -> Result<MixOutput, AugmentError> {
    let offset_draw = ChaCha8Rng::seed_from_u64(seed).random();
    mix_noise_with_offset(signal, noise, snr_db, offset_draw, clip)
}

/// Power is measured over the whole utterance. The gain is
/// `sqrt(P_signal / (P_noise * 10^(snr/10)))`.
pub fn mix_noise_with_offset(
    signal: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    offset_draw: u64,
    clip: bool,
) -> Result<MixOutput, AugmentError> {
    if signal.sample_rate_hz != noise.sample_rate_hz {
        return Err(AugmentError::SampleRateMismatch {
            signal: signal.sample_rate_hz,
            noise: noise.sample_rate_hz,
        });
    }
    if signal.is_empty() {
        return Err(AugmentError::Empty("signal"));
    }
    if noise.is_empty() {
        return Err(AugmentError::Empty("noise"));
    }
    if !snr_db.is_finite() {
        return Err(AugmentError::InvalidPolicy(format!("snr {snr_db} dB")));
    }
    let p_signal = signal.power();
    if p_signal <= 0.0 {
        return Err(AugmentError::SilentInput("signal"));
    }
    let (fitted, offset) = fit_noise(&noise.samples, signal.len(), offset_draw);
    let p_noise = mean_square(&fitted);
    if p_noise <= 0.0 {
        return Err(AugmentError::SilentInput("noise"));
    }
    let gain = (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f32> = fitted.iter().map(|&n| (n as f64 * gain) as f32).collect();
    let samples = signal
        .samples
        .iter()
        .zip(&scaled)
        .map(|(&s, &n)| (s as f64 + n as f64) as f32)
        .collect();
    let mut mixed = Waveform::new(samples, signal.sample_rate_hz);
    let clipped = if clip { mixed.clip() } else { 0 };
    Ok(MixOutput {
        mixed,
        noise: scaled,
        gain,
        offset,
        clipped,
    })
}

/// SNR in dB between two components, by mean-square power.
pub fn measured_snr_db(signal: &[f32], noise: &[f32]) -> f64 {
    10.0 * (mean_square(signal) / mean_square(noise)).log10()
}

pub struct AugmentJob<'a> {
    pub input: &'a Manifest,
    /// Directory that audio paths of `input` are relative to.
    pub input_root: &'a Path,
    pub noise: &'a Manifest,
    pub noise_root: &'a Path,
    /// Deduplicated units per utterance to stretch, when available.
    pub units: Option<&'a BTreeMap<String, UnitSequence>>,
    pub policy: AugmentPolicy,
    pub out_dir: &'a Path,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSummary {
    pub manifest: Manifest,
    pub clipped_samples: usize,
}

/// Augments every utterance of the job. Writes `<id>.wav`, `manifest.jsonl`
/// and, when units are supplied, `stretched.units` into the output directory.
pub fn augment_corpus(job: &AugmentJob) -> Result<AugmentSummary, AugmentError> {
    job.policy.validate()?;
    if job.noise.is_empty() {
        return Err(AugmentError::Empty("noise manifest"));
    }
    fs::create_dir_all(job.out_dir).map_err(|e| FormatError::io(job.out_dir, e))?;
    let noises: Vec<Waveform> = job
        .noise
        .records
        .par_iter()
        .map(|r| read_wav(job.noise_root.join(&r.audio_path)))
        .collect::<Result<_, _>>()?;

    let results: Vec<(UtteranceRecord, usize, Option<String>)> = job
        .input
        .records
        .par_iter()
        .map(|r| {
            augment_one(job, &noises, r).map_err(|e| AugmentError::Utterance {
                id: r.id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_, _>>()?;

    let mut records = Vec::with_capacity(results.len());
    let mut clipped_samples = 0;
    let mut units_text = String::new();
    for (rec, clipped, line) in results {
        records.push(rec);
        clipped_samples += clipped;
        if let Some(l) = line {
            units_text.push_str(&l);
            units_text.push('\n');
        }
    }
    if job.units.is_some() {
        let p = job.out_dir.join("stretched.units");
        fs::write(&p, units_text).map_err(|e| FormatError::io(&p, e))?;
    }
    let mut manifest = Manifest::new(records)?;
    manifest.frame_rate_hz = job.input.frame_rate_hz;
    crate::manifest::save_manifest(&manifest, job.out_dir.join("manifest.jsonl"))?;
    Ok(AugmentSummary {
        manifest,
        clipped_samples,
    })
}

fn augment_one(
    job: &AugmentJob,
    noises: &[Waveform],
    r: &UtteranceRecord,
) -> Result<(UtteranceRecord, usize, Option<String>), AugmentError> {
    let draw = sample_policy(&job.policy, &r.id);
    let signal = read_wav(job.input_root.join(&r.audio_path))?;
    let noise = &noises[(draw.noise_choice % noises.len() as u64) as usize];
    let out = mix_noise_with_offset(&signal, noise, draw.snr_db, draw.noise_offset, true)?;
    let file = format!("{}.wav", r.id);
    write_wav(&out.mixed, job.out_dir.join(&file))?;

    let line = match job.units.and_then(|u| u.get(&r.id)) {
        Some(seq) => Some(format_units_line(
            &r.id,
            &stretch_sequence(seq, draw.scalar)?,
        )),
        None => None,
    };
    let mut rec = r.clone();
    rec.audio_path = file;
    rec.tags.insert(format!("snr_db={:.3}", draw.snr_db));
    rec.tags.insert(format!("stretch={:.4}", draw.scalar));
    Ok((rec, out.clipped, line))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stretch_examples() {
        assert_eq!(stretch_durations(&[2, 3, 7], 1.0).unwrap(), vec![2, 3, 7]);
        assert_eq!(stretch_durations(&[2, 3], 1.5).unwrap(), vec![3, 5]);
        assert!(matches!(
            stretch_durations(&[2], 0.9),
            Err(AugmentError::Compression(_))
        ));
        assert!(matches!(
            stretch_durations(&[2, 0], 1.2),
            Err(AugmentError::ZeroCount(1))
        ));
    }

    #[test]
    fn policy_is_deterministic_and_in_range() {
        let p = AugmentPolicy {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(sample_policy(&p, "utt1"), sample_policy(&p, "utt1"));
        assert_ne!(sample_policy(&p, "utt1"), sample_policy(&p, "utt2"));
        for i in 0..1000 {
            let d = sample_policy(&p, &format!("u{i}"));
            assert!((1.0..=1.5).contains(&d.scalar));
            assert!((0.0..=15.0).contains(&d.snr_db));
        }
    }

    #[test]
    fn policy_validation() {
        let bad = AugmentPolicy {
            stretch_low: 0.8,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentPolicy {
            snr_low_db: 20.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(AugmentPolicy::default().validate().is_ok());
    }

    #[test]
    fn silent_inputs_rejected() {
        let s = Waveform::new(vec![0.0; 100], 16000);
        let n = Waveform::new(vec![0.1; 100], 16000);
        assert!(matches!(
            mix_noise_at_snr(&s, &n, 5.0, 0, false),
            Err(AugmentError::SilentInput("signal"))
        ));
        assert!(matches!(
            mix_noise_at_snr(&n, &s, 5.0, 0, false),
            Err(AugmentError::SilentInput("noise"))
        ));
        let n8 = Waveform::new(vec![0.1; 100], 8000);
        assert!(matches!(
            mix_noise_at_snr(&n, &n8, 5.0, 0, false),
            Err(AugmentError::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn noise_loops_and_crops() {
        let noise: Vec<f32> = (0..5).map(|i| i as f32).collect();
        let (looped, off) = fit_noise(&noise, 12, 7);
        assert_eq!(off, 2);
        assert_eq!(&looped[..6], &[2.0, 3.0, 4.0, 0.0, 1.0, 2.0]);
        let (cropped, off) = fit_noise(&noise, 3, 4);
        assert_eq!(off, 1);
        assert_eq!(cropped, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn clipping_is_reported() {
        let s = Waveform::new(vec![0.9, -0.9, 0.9, -0.9], 16000);
        let n = Waveform::new(vec![1.0, -1.0, 1.0, -1.0], 16000);
        let out = mix_noise_at_snr(&s, &n, 0.0, 1, true).unwrap();
        assert!(out.clipped > 0);
        assert!(out.mixed.samples.iter().all(|v| v.abs() <= 1.0));
        let raw = mix_noise_at_snr(&s, &n, 0.0, 1, false).unwrap();
        assert_eq!(raw.clipped, 0);
        assert!(raw.mixed.samples.iter().any(|v| v.abs() > 1.0));
    }
}
