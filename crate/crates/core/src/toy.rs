//! Small synthetic corpora for tests, demos and pipeline smoke runs.
//!
//! Every phone type owns a mean feature vector and a pitch. An utterance is
//! a sequence of phones, each lasting a few frames; frames are the phone mean
//! plus isotropic Gaussian noise, so quantizing them with a codebook larger
//! than the phone inventory produces flickering unit runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio_io::{
    write_embedding, write_features, write_wav, FeatureMatrix, FormatError, PhoneAlignment,
    PhoneInterval, SessionEmbedding, Waveform, CANONICAL_SAMPLE_RATE,
};
use crate::manifest::{save_manifest, Gender, Kind, Manifest, ManifestError, UtteranceRecord};
use crate::segment::{dedup_runs, write_units, SegmentError, UnitSequence};

pub const TOY_FRAME_RATE_HZ: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub seed: u64,
    pub natural: usize,
    pub synthetic: usize,
    pub noise_clips: usize,
    pub speakers: usize,
    pub phone_types: usize,
    pub dim: usize,
    pub phones_per_utt: (usize, usize),
    pub frames_per_phone: (usize, usize),
    pub noise_std: f64,
    pub embedding_dim: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            seed: 0,
            natural: 24,
            synthetic: 12,
            noise_clips: 3,
            speakers: 6,
            phone_types: 8,
            dim: 4,
            phones_per_utt: (6, 12),
            frames_per_phone: (3, 9),
            noise_std: 0.6,
            embedding_dim: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyUtterance {
    pub record: UtteranceRecord,
    pub features: FeatureMatrix,
    pub alignment: PhoneAlignment,
    pub phones: Vec<String>,
    /// Phone-type index per frame.
    pub frame_phones: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub spec: ToySpec,
    pub phone_means: Vec<Vec<f32>>,
    pub phone_f0: Vec<f64>,
    pub natural: Vec<ToyUtterance>,
    pub synthetic: Vec<ToyUtterance>,
}

/// Paths written by [`ToyCorpus::write_to`], relative to the corpus root.
pub mod layout {
    pub const NATURAL_MANIFEST: &str = "natural.jsonl";
    pub const SYNTHETIC_MANIFEST: &str = "synthetic.jsonl";
    pub const NOISE_MANIFEST: &str = "noise.jsonl";
    pub const FEATURES_DIR: &str = "features";
    pub const ALIGNMENTS_DIR: &str = "alignments";
    pub const AUDIO_DIR: &str = "audio";
    pub const EMBEDDINGS_DIR: &str = "embeddings";
    pub const SYNTHETIC_UNITS_DIR: &str = "synthetic_units";
    pub const PHONES: &str = "phones.txt";
    pub const CONFIG: &str = "pipeline.toml";
}

fn phone_name(p: usize) -> String {
    format!("p{p}")
}

impl ToyCorpus {
    pub fn generate(spec: &ToySpec) -> ToyCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let phone_means: Vec<Vec<f32>> = (0..spec.phone_types)
            .map(|_| {
                (0..spec.dim)
                    .map(|_| rng.random_range(-6.0f32..6.0))
                    .collect()
            })
            .collect();
        let phone_f0: Vec<f64> = (0..spec.phone_types)
            .map(|_| rng.random_range(100.0..250.0))
            .collect();
        let mut corpus = ToyCorpus {
            spec: spec.clone(),
            phone_means,
            phone_f0,
            natural: Vec::new(),
            synthetic: Vec::new(),
        };
        for i in 0..spec.natural {
            let u = corpus.utterance(
                &mut rng,
                format!("nat{i:04}"),
                i % spec.speakers.max(1),
                Kind::Natural,
            );
            corpus.natural.push(u);
        }
        for i in 0..spec.synthetic {
            let u = corpus.utterance(
                &mut rng,
                format!("syn{i:04}"),
                i % spec.speakers.max(1),
                Kind::Synthetic,
            );
            corpus.synthetic.push(u);
        }
        corpus
    }

    fn utterance(
        &self,
        rng: &mut ChaCha8Rng,
        id: String,
        speaker: usize,
        kind: Kind,
    ) -> ToyUtterance {
        let spec = &self.spec;
        let normal = Normal::new(0.0, spec.noise_std).expect("valid std");
        let n_phones = rng.random_range(spec.phones_per_utt.0..=spec.phones_per_utt.1);
        let mut phones = Vec::with_capacity(n_phones);
        let mut frame_phones = Vec::new();
        let mut intervals = Vec::with_capacity(n_phones);
        let mut prev = usize::MAX;
        for _ in 0..n_phones {
            let mut p = rng.random_range(0..spec.phone_types);
            if p == prev {
                p = (p + 1) % spec.phone_types;
            }
            prev = p;
            let len = rng.random_range(spec.frames_per_phone.0..=spec.frames_per_phone.1);
            let start = frame_phones.len();
            frame_phones.extend(std::iter::repeat_n(p as u32, len));
            intervals.push(PhoneInterval {
                start_frame: start,
                end_frame: start + len - 1,
                phone: phone_name(p),
            });
            phones.push(phone_name(p));
        }
        let t_len = frame_phones.len();
        let mut data = Vec::with_capacity(t_len * spec.dim);
        for &p in &frame_phones {
            for &m in &self.phone_means[p as usize] {
                data.push(m + normal.sample(rng) as f32);
            }
        }
        let features = FeatureMatrix::new(data, t_len, spec.dim, TOY_FRAME_RATE_HZ as f32, 9)
            .expect("finite toy features");
        let gender = if speaker.is_multiple_of(2) {
            Gender::Male
        } else {
            Gender::Female
        };
        let mut record = UtteranceRecord::new(
            id.clone(),
            format!("{}/{id}.wav", layout::AUDIO_DIR),
            t_len as f64 / TOY_FRAME_RATE_HZ,
            format!("spk{speaker:02}"),
            gender,
            kind,
        );
        record.text = Some(phones.join(" "));
        ToyUtterance {
            record,
            features,
            alignment: PhoneAlignment { intervals },
            phones,
            frame_phones,
        }
    }

    /// Phone-pitched tone, one hop of samples per frame, continuous phase.
    pub fn audio(&self, u: &ToyUtterance) -> Waveform {
        let sr = CANONICAL_SAMPLE_RATE as f64;
        let hop = (sr / TOY_FRAME_RATE_HZ) as usize;
        let mut phase = 0.0f64;
        let mut samples = Vec::with_capacity(u.frame_phones.len() * hop);
        for &p in &u.frame_phones {
            let step = 2.0 * std::f64::consts::PI * self.phone_f0[p as usize] / sr;
            for _ in 0..hop {
                samples.push((0.3 * phase.sin()) as f32);
                phase += step;
            }
        }
        Waveform::new(samples, CANONICAL_SAMPLE_RATE)
    }

    /// Speaker vector plus a small per-utterance jitter.
    pub fn embedding(&self, u: &ToyUtterance) -> SessionEmbedding {
        let spk: u64 = u
            .record
            .speaker_id
            .trim_start_matches("spk")
            .parse()
            .unwrap_or(0);
        let mut spk_rng = ChaCha8Rng::seed_from_u64(self.spec.seed.wrapping_add(spk));
        let utt: u64 = u
            .record
            .id
            .bytes()
            .fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
        let mut utt_rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ utt);
        SessionEmbedding {
            vector: (0..self.spec.embedding_dim)
                .map(|_| {
                    spk_rng.random_range(-1.0f32..1.0) + 0.05 * utt_rng.random_range(-1.0f32..1.0)
                })
                .collect(),
            utterance_id: u.record.id.clone(),
        }
    }

    /// Deduplicated phone-type units, standing in for predicted synthetic units.
    pub fn oracle_units(&self, u: &ToyUtterance) -> UnitSequence {
        dedup_runs(&UnitSequence::framewise(
            u.frame_phones.clone(),
            TOY_FRAME_RATE_HZ,
        ))
    }

    pub fn natural_manifest(&self) -> Manifest {
        Manifest::new(self.natural.iter().map(|u| u.record.clone()).collect())
            .expect("unique toy ids")
    }

    pub fn synthetic_manifest(&self) -> Manifest {
        Manifest::new(self.synthetic.iter().map(|u| u.record.clone()).collect())
            .expect("unique toy ids")
    }

    /// Writes the corpus and a pipeline config under `root`.
    pub fn write_to(&self, root: &Path) -> Result<PathBuf, ToyError> {
        use layout::*;
        for d in [
            FEATURES_DIR,
            ALIGNMENTS_DIR,
            AUDIO_DIR,
            EMBEDDINGS_DIR,
            SYNTHETIC_UNITS_DIR,
        ] {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(|e| FormatError::io(&p, e))?;
        }
        for u in self.natural.iter().chain(&self.synthetic) {
            let id = &u.record.id;
            write_features(
                &u.features,
                root.join(FEATURES_DIR).join(format!("{id}.fmat")),
            )?;
            let ali = root.join(ALIGNMENTS_DIR).join(format!("{id}.txt"));
            fs::write(&ali, u.alignment.to_text()).map_err(|e| FormatError::io(&ali, e))?;
            write_wav(&self.audio(u), root.join(&u.record.audio_path))?;
            write_embedding(
                &self.embedding(u),
                root.join(EMBEDDINGS_DIR).join(format!("{id}.fmat")),
            )?;
        }
        for u in &self.synthetic {
            let seq = self.oracle_units(u);
            write_units(
                root.join(SYNTHETIC_UNITS_DIR)
                    .join(format!("{}.units", u.record.id)),
                [(u.record.id.as_str(), &seq)],
            )?;
        }
        save_manifest(&self.natural_manifest(), root.join(NATURAL_MANIFEST))?;
        save_manifest(&self.synthetic_manifest(), root.join(SYNTHETIC_MANIFEST))?;

        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ 0x6e_6f69_7365);
        let mut noise_records = Vec::new();
        for i in 0..self.spec.noise_clips {
            let id = format!("noise{i:02}");
            let n = CANONICAL_SAMPLE_RATE as usize / 2;
            let w = Waveform::new(
                (0..n).map(|_| rng.random_range(-0.5f32..0.5)).collect(),
                CANONICAL_SAMPLE_RATE,
            );
            let path = format!("{AUDIO_DIR}/{id}.wav");
            write_wav(&w, root.join(&path))?;
            noise_records.push(UtteranceRecord::new(
                id,
                path,
                0.5,
                "noise",
                Gender::Unknown,
                Kind::Natural,
            ));
        }
        save_manifest(&Manifest::new(noise_records)?, root.join(NOISE_MANIFEST))?;

        let phones: String = (0..self.spec.phone_types).fold(String::new(), |mut s, p| {
            let _ = writeln!(s, "{}", phone_name(p));
            s
        });
        let p = root.join(PHONES);
        fs::write(&p, phones).map_err(|e| FormatError::io(&p, e))?;

        let config = root.join(CONFIG);
        fs::write(&config, self.pipeline_config()).map_err(|e| FormatError::io(&config, e))?;
        Ok(config)
    }

    pub fn pipeline_config(&self) -> String {
        use layout::*;
        let k = self.spec.phone_types * 2;
        format!(
            r#"# toy corpus pipeline
[corpus]
manifest = "{NATURAL_MANIFEST}"
features_dir = "{FEATURES_DIR}"
alignments_dir = "{ALIGNMENTS_DIR}"
embeddings_dir = "{EMBEDDINGS_DIR}"
phones = "{PHONES}"
audio_root = "."

[pipeline]
output_dir = "out"
stages = ["kmeans-fit", "dpdp", "dedup", "purity", "f0", "targets", "augment", "compose", "sample"]

[kmeans]
k = {k}
seed = {seed}

[dpdp]
lambda = 1.0
max_segment_frames = 50

[augment]
manifest = "{SYNTHETIC_MANIFEST}"
noise_manifest = "{NOISE_MANIFEST}"
units_dir = "{SYNTHETIC_UNITS_DIR}"
stretch = [1.0, 1.5]
snr_db = [0.0, 15.0]
seed = {aug_seed}

[compose]
rate = 10.0

[sample]
epoch_size = 500
epochs = 2
seed = {sample_seed}
"#,
            seed = self.spec.seed,
            aug_seed = self.spec.seed + 1,
            sample_seed = self.spec.seed + 2,
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ToyError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
}
