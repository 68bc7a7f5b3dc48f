//! Command-line interface.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::audio_io::{read_alignment, read_features, read_wav, FeatureMatrix};
use crate::augment::{augment_corpus, AugmentJob, AugmentPolicy};
use crate::error::{Error, Result};
use crate::kmeans::{
    kmeans_assign, kmeans_fit, read_codebook, write_codebook, KMeansParams, DEFAULT_N_INIT,
};
use crate::manifest::{build_split, load_manifest, manifest_stats, save_manifest, SplitParams};
use crate::metrics::{accumulate_counts, purity_report, ContingencyTable};
use crate::pipeline::{load_config, run_pipeline, schedule_text, PhoneInventory};
use crate::pitch::{extract_f0, read_pitch, write_pitch, PitchParams};
use crate::sampler::{compose_corpus, MixSpec, WeightMode};
use crate::segment::{
    dedup_runs, dpdp_segment, length_ratio, read_units, read_units_dir, write_units, DpdpParams,
    RatioEntry, UnitSequence, DEFAULT_MAX_SEGMENT_FRAMES,
};
use crate::targets::{prepare_predictor_targets, prepare_t2u_target, TargetRecord};
use crate::toy::{ToyCorpus, ToySpec};
use crate::{audio_io::read_embedding, manifest::DEFAULT_FRAME_RATE_HZ};

#[derive(Debug, Parser)]
#[command(name = "speechunits", version, about = "Discrete speech unit toolkit")]
pub struct Cli {
    /// Worker threads (defaults to the number of CPUs)
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print hours, utterance, speaker, gender and kind counts as JSON
    ManifestStats { manifest: PathBuf },
    /// Select a speaker-budgeted subset of a manifest
    Split(SplitArgs),
    /// Fit a k-means codebook on feature files
    KmeansFit(KmeansFitArgs),
    /// Assign every frame to its nearest centroid
    KmeansAssign(AssignArgs),
    /// Duration-penalized segmentation into unit runs
    Dpdp(DpdpArgs),
    /// Collapse runs of repeated units
    Dedup { input: PathBuf, output: PathBuf },
    /// Ratio of unit-sequence length to phoneme count
    Ratio {
        /// Units file or directory of .units files
        units: PathBuf,
        alignments_dir: PathBuf,
    },
    /// Phone and cluster purity against frame alignments
    Purity(PurityArgs),
    /// Extract log-F0 tracks for every utterance of a manifest
    F0(F0Args),
    /// Build text-to-unit and predictor training targets
    Targets(TargetsArgs),
    /// Time-stretch units and mix noise into audio
    Augment(AugmentArgs),
    /// Merge natural and synthetic manifests with oversampling weights
    Compose(ComposeArgs),
    /// Print seeded epoch schedules as `epoch<TAB>id` lines
    Sample(SampleArgs),
    /// Run the stages listed in a TOML config
    Pipeline {
        config: PathBuf,
        /// Also write the stage report to this file
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a small synthetic corpus and a matching pipeline config
    ToyCorpus(ToyArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    pub manifest: PathBuf,
    pub output: PathBuf,
    #[arg(long)]
    pub hours: f64,
    #[arg(long)]
    pub speakers: usize,
    /// Alternate male and female speakers
    #[arg(long)]
    pub balance: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct KmeansFitArgs {
    /// Feature files or directories of .fmat files
    #[arg(required = true, num_args = 1..)]
    pub features: Vec<PathBuf>,
    /// Output codebook file
    pub out: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Fraction of frames used for fitting
    #[arg(long, default_value_t = 1.0)]
    pub subsample: f64,
    /// Independent initializations; the lowest inertia wins
    #[arg(long, default_value_t = DEFAULT_N_INIT)]
    pub n_init: usize,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    pub codebook: PathBuf,
    /// Feature file or directory of .fmat files
    pub features: PathBuf,
    /// Output units file
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DpdpArgs {
    pub codebook: PathBuf,
    /// Feature file or directory of .fmat files
    pub features: PathBuf,
    /// Output units file
    pub output: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_SEGMENT_FRAMES)]
    pub max_segment_frames: usize,
}

#[derive(Debug, Args)]
pub struct PurityArgs {
    /// Units file or directory of .units files
    pub units: PathBuf,
    pub alignments_dir: PathBuf,
    /// Also write the JSON report to this file
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct F0Args {
    /// Manifest, or a single .wav file
    pub input: PathBuf,
    /// Output directory, or the pitch file when the input is a .wav
    pub output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FRAME_RATE_HZ)]
    pub frame_rate: f64,
    #[arg(long, default_value_t = 60.0)]
    pub f_min: f64,
    #[arg(long, default_value_t = 400.0)]
    pub f_max: f64,
    #[arg(long, default_value_t = 0.3)]
    pub voicing_threshold: f64,
}

#[derive(Debug, Args)]
pub struct TargetsArgs {
    pub manifest: PathBuf,
    /// Deduplicated units file or directory
    pub units: PathBuf,
    pub pitch_dir: PathBuf,
    /// Output directory; receives targets.jsonl
    pub out_dir: PathBuf,
    /// Codebook size; the unit EOS id
    #[arg(long)]
    pub k: u32,
    /// Phone inventory, one symbol per line
    #[arg(long)]
    pub phones: PathBuf,
    /// Directory of per-utterance embedding files
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    #[arg(long)]
    pub noise_manifest: PathBuf,
    /// Stretch range as LOW:HIGH
    #[arg(long, default_value = "1.0:1.5", value_parser = parse_range)]
    pub stretch: (f64, f64),
    /// SNR range in dB as LOW:HIGH
    #[arg(long, default_value = "0:15", value_parser = parse_range)]
    pub snr: (f64, f64),
    #[arg(long)]
    pub seed: u64,
    /// Deduplicated units to stretch (file or directory)
    #[arg(long)]
    pub units: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    #[arg(long)]
    pub natural: PathBuf,
    #[arg(long)]
    pub synthetic: PathBuf,
    /// Oversampling rate for natural utterances
    #[arg(long)]
    pub rate: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Weight utterances by duration instead of count
    #[arg(long)]
    pub by_duration: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Weighted manifest from `compose`
    pub merged: PathBuf,
    #[arg(long)]
    pub epoch_size: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: u64,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 24)]
    pub natural: usize,
    #[arg(long, default_value_t = 12)]
    pub synthetic: usize,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected LOW:HIGH, got {s:?}"))?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok((lo, hi))
}

fn json_line(out: &mut dyn Write, v: &impl serde::Serialize) -> Result<()> {
    let s = serde_json::to_string(v).expect("value serializes");
    writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e))
}

fn files_with_ext(path: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_features(paths: &[PathBuf]) -> Result<Vec<(String, FeatureMatrix)>> {
    let mut files = Vec::new();
    for p in paths {
        files.extend(files_with_ext(p, "fmat")?);
    }
    files
        .par_iter()
        .map(|p| read_features(p).map(|m| (stem(p), m)).map_err(Error::from))
        .collect()
}

fn load_units(path: &Path, frame_rate: f64) -> Result<BTreeMap<String, UnitSequence>> {
    if path.is_dir() {
        return Ok(read_units_dir(path, frame_rate)?);
    }
    let mut map = BTreeMap::new();
    for (id, seq) in read_units(path, frame_rate)? {
        if map.insert(id.clone(), seq).is_some() {
            return Err(Error::Invalid(format!(
                "duplicate utterance id {id:?} in {}",
                path.display()
            )));
        }
    }
    Ok(map)
}

fn dir_of(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

/// Runs a parsed command, writing its primary output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    if let Some(n) = cli.threads {
        // Ignored if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::ManifestStats { manifest } => {
            let m = load_manifest(&manifest)?;
            json_line(out, &manifest_stats(&m))
        }
        Command::Split(a) => {
            let m = load_manifest(&a.manifest)?;
            let params = SplitParams {
                target_hours: a.hours,
                speaker_budget: a.speakers,
                gender_balance: a.balance,
                seed: a.seed,
            };
            let split = build_split(&m, &params)?;
            save_manifest(&split, &a.output)?;
            json_line(out, &manifest_stats(&split))
        }
        Command::KmeansFit(a) => {
            let data: Vec<FeatureMatrix> = load_features(&a.features)?
                .into_iter()
                .map(|(_, m)| m)
                .collect();
            let params = KMeansParams {
                k: a.k,
                max_iters: a.max_iters,
                tol: a.tol,
                seed: a.seed,
                subsample: a.subsample,
                n_init: a.n_init,
            };
            let cb = kmeans_fit(&data, &params)?;
            write_codebook(&cb, &a.out)?;
            json_line(
                out,
                &serde_json::json!({
                    "k": cb.k(), "dim": cb.dim(),
                    "iterations": cb.meta.iterations, "inertia": cb.meta.inertia,
                }),
            )
        }
        Command::KmeansAssign(a) => {
            let cb = read_codebook(&a.codebook)?;
            let feats = load_features(std::slice::from_ref(&a.features))?;
            let seqs: Vec<(String, UnitSequence)> = feats
                .par_iter()
                .map(|(id, m)| {
                    kmeans_assign(m, &cb)
                        .map(|u| {
                            (
                                id.clone(),
                                UnitSequence::framewise(u, m.frame_rate_hz as f64),
                            )
                        })
                        .map_err(|e| Error::in_utterance(id, e))
                })
                .collect::<Result<_>>()?;
            write_units(&a.output, seqs.iter().map(|(id, s)| (id.as_str(), s)))?;
            Ok(())
        }
        Command::Dpdp(a) => {
            let cb = read_codebook(&a.codebook)?;
            let params = DpdpParams {
                lambda: a.lambda,
                max_segment_frames: a.max_segment_frames,
            };
            let feats = load_features(std::slice::from_ref(&a.features))?;
            let seqs: Vec<(String, UnitSequence)> = feats
                .par_iter()
                .map(|(id, m)| {
                    dpdp_segment(m, &cb, &params)
                        .map(|s| (id.clone(), s.to_unit_sequence()))
                        .map_err(|e| Error::in_utterance(id, e))
                })
                .collect::<Result<_>>()?;
            write_units(&a.output, seqs.iter().map(|(id, s)| (id.as_str(), s)))?;
            Ok(())
        }
        Command::Dedup { input, output } => {
            let seqs = load_units(&input, DEFAULT_FRAME_RATE_HZ)?;
            let dd: Vec<(&String, UnitSequence)> =
                seqs.iter().map(|(id, s)| (id, dedup_runs(s))).collect();
            write_units(&output, dd.iter().map(|(id, s)| (id.as_str(), s)))?;
            Ok(())
        }
        Command::Ratio {
            units,
            alignments_dir,
        } => {
            let seqs = load_units(&units, DEFAULT_FRAME_RATE_HZ)?;
            let mut entries = Vec::with_capacity(seqs.len());
            for (id, s) in &seqs {
                let ali = read_alignment(alignments_dir.join(format!("{id}.txt")), s.num_frames())
                    .map_err(|e| Error::in_utterance(id, e))?;
                entries.push(RatioEntry {
                    id: id.clone(),
                    unit_len: s.len(),
                    phoneme_len: ali.intervals.len(),
                });
            }
            let ratio = length_ratio(&entries)?;
            json_line(
                out,
                &serde_json::json!({ "utterances": entries.len(), "ratio": ratio }),
            )
        }
        Command::Purity(a) => {
            let seqs = load_units(&a.units, DEFAULT_FRAME_RATE_HZ)?;
            let tables: Vec<ContingencyTable> = seqs
                .par_iter()
                .map(|(id, s)| {
                    let units = s.expand();
                    read_alignment(a.alignments_dir.join(format!("{id}.txt")), units.len())
                        .map_err(Error::from)
                        .and_then(|ali| accumulate_counts(&units, &ali).map_err(Error::from))
                        .map_err(|e| Error::in_utterance(id, e))
                })
                .collect::<Result<_>>()?;
            let mut table = ContingencyTable::new();
            for t in &tables {
                table.merge(t);
            }
            let report = purity_report(&table)?;
            if let Some(p) = &a.report {
                let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
                fs::write(p, text).map_err(|e| Error::io(p, e))?;
            }
            json_line(out, &report)
        }
        Command::F0(a) => {
            let params = PitchParams {
                frame_rate_hz: a.frame_rate,
                f_min: a.f_min,
                f_max: a.f_max,
                voicing_threshold: a.voicing_threshold,
            };
            let is_wav = a
                .input
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
            if is_wav {
                let track = extract_f0(&read_wav(&a.input)?, &params)?;
                write_pitch(&track, &a.output)?;
                let voiced = track.voiced.iter().filter(|v| **v).count();
                return json_line(
                    out,
                    &serde_json::json!({ "frames": track.len(), "voiced_frames": voiced }),
                );
            }
            let m = load_manifest(&a.input)?;
            fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
            let root = dir_of(&a.input);
            m.records.par_iter().try_for_each(|r| {
                read_wav(root.join(&r.audio_path))
                    .map_err(Error::from)
                    .and_then(|w| extract_f0(&w, &params).map_err(Error::from))
                    .and_then(|t| {
                        write_pitch(&t, a.output.join(format!("{}.f0", r.id))).map_err(Error::from)
                    })
                    .map_err(|e| Error::in_utterance(&r.id, e))
            })?;
            json_line(out, &serde_json::json!({ "utterances": m.len() }))
        }
        Command::Targets(a) => {
            let m = load_manifest(&a.manifest)?;
            let units = load_units(&a.units, m.frame_rate_hz)?;
            let phones = fs::read_to_string(&a.phones).map_err(|e| Error::io(&a.phones, e))?;
            let inv = PhoneInventory::parse(&phones);
            let mut text = String::new();
            for r in &m.records {
                let id = &r.id;
                let rec =
                    (|| -> Result<TargetRecord> {
                        let phon = inv.encode(r.text.as_deref().ok_or_else(|| {
                            Error::Invalid("record has no phoneme text".into())
                        })?)?;
                        let seq = units
                            .get(id)
                            .ok_or_else(|| Error::Invalid("no units".into()))?;
                        let pitch_path = a.pitch_dir.join(format!("{id}.f0"));
                        let track = read_pitch(&pitch_path)?;
                        let t2u = prepare_t2u_target(id, &phon, inv.eos(), seq, a.k)?;
                        let (emb, emb_path) = match &a.embeddings {
                            Some(d) => {
                                let p = d.join(format!("{id}.fmat"));
                                (
                                    read_embedding(&p, id)?,
                                    Some(p.to_string_lossy().into_owned()),
                                )
                            }
                            None => (
                                crate::audio_io::SessionEmbedding {
                                    vector: Vec::new(),
                                    utterance_id: id.clone(),
                                },
                                None,
                            ),
                        };
                        let pred = prepare_predictor_targets(seq, &track, &emb)?;
                        Ok(TargetRecord {
                            id: id.clone(),
                            phonemes: t2u.input_phonemes,
                            groups: t2u.output_groups,
                            counts: pred.repetition_counts,
                            pitch_path: pitch_path.to_string_lossy().into_owned(),
                            embedding_path: emb_path,
                        })
                    })()
                    .map_err(|e| Error::in_utterance(id, e))?;
                text.push_str(&serde_json::to_string(&rec).expect("target serializes"));
                text.push('\n');
            }
            fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
            let path = a.out_dir.join("targets.jsonl");
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            json_line(out, &serde_json::json!({ "utterances": m.len() }))
        }
        Command::Augment(a) => {
            let input = load_manifest(&a.manifest)?;
            let noise = load_manifest(&a.noise_manifest)?;
            let units = a
                .units
                .as_ref()
                .map(|p| load_units(p, input.frame_rate_hz))
                .transpose()?;
            let job = AugmentJob {
                input: &input,
                input_root: dir_of(&a.manifest),
                noise: &noise,
                noise_root: dir_of(&a.noise_manifest),
                units: units.as_ref(),
                policy: AugmentPolicy {
                    stretch_low: a.stretch.0,
                    stretch_high: a.stretch.1,
                    snr_low_db: a.snr.0,
                    snr_high_db: a.snr.1,
                    seed: a.seed,
                },
                out_dir: &a.out_dir,
            };
            let s = augment_corpus(&job)?;
            if s.clipped_samples > 0 {
                eprintln!("warning: {} samples clipped", s.clipped_samples);
            }
            json_line(
                out,
                &serde_json::json!({ "utterances": s.manifest.len(), "clipped_samples": s.clipped_samples }),
            )
        }
        Command::Compose(a) => {
            let natural = load_manifest(&a.natural)?;
            let synthetic = load_manifest(&a.synthetic)?;
            let merged = compose_corpus(&MixSpec {
                natural: &natural,
                synthetic: &synthetic,
                oversampling_rate: a.rate,
                epoch_size: 1,
                seed: 0,
                mode: if a.by_duration {
                    WeightMode::Duration
                } else {
                    WeightMode::Utterance
                },
            })?;
            save_manifest(&merged, &a.out)?;
            json_line(
                out,
                &serde_json::json!({ "natural": natural.len(), "synthetic": synthetic.len(), "rate": a.rate }),
            )
        }
        Command::Sample(a) => {
            let merged = load_manifest(&a.merged)?;
            let text = schedule_text(&merged, a.epoch_size, a.epochs, a.seed)?;
            out.write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
        Command::Pipeline { config, report } => {
            let (cfg, base) = load_config(&config).map_err(|e| Error::Invalid(e.to_string()))?;
            let r = run_pipeline(&cfg, &base).map_err(|e| Error::Invalid(e.to_string()))?;
            let text = r.to_lines();
            if let Some(p) = &report {
                fs::write(p, &text).map_err(|e| Error::io(p, e))?;
            }
            out.write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
        Command::ToyCorpus(a) => {
            let spec = ToySpec {
                seed: a.seed,
                natural: a.natural,
                synthetic: a.synthetic,
                ..ToySpec::default()
            };
            let config = ToyCorpus::generate(&spec).write_to(&a.out_dir)?;
            json_line(out, &serde_json::json!({ "config": config }))
        }
    }
}
