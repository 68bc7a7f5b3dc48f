//! Config-driven chaining of the toolkit stages.
//!
//! The config is TOML. Paths are relative to the config file's directory.
//! Stages run in canonical order; each writes its outputs under the output
//! directory and reports a SHA-256 digest per written file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio_io::{read_alignment, read_embedding, read_features, read_wav, FeatureMatrix};
use crate::augment::{augment_corpus, AugmentJob, AugmentPolicy};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans_assign, kmeans_fit, read_codebook, Codebook, KMeansParams};
use crate::manifest::{load_manifest, save_manifest, Manifest};
use crate::metrics::{accumulate_counts, purity_report, ContingencyTable};
use crate::pitch::{extract_f0, write_pitch, PitchParams, PitchTrack};
use crate::sampler::{compose_corpus, schedule_from_manifest, MixSpec, WeightMode};
use crate::segment::{
    dedup_runs, dpdp_segment, format_units_line, length_ratio, read_units_dir, DpdpParams,
    RatioEntry, UnitSequence,
};
use crate::targets::{prepare_predictor_targets, prepare_t2u_target, TargetRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    KMeansFit,
    Assign,
    Dpdp,
    Dedup,
    Purity,
    F0,
    Targets,
    Augment,
    Compose,
    Sample,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::KMeansFit,
        Stage::Assign,
        Stage::Dpdp,
        Stage::Dedup,
        Stage::Purity,
        Stage::F0,
        Stage::Targets,
        Stage::Augment,
        Stage::Compose,
        Stage::Sample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::KMeansFit => "kmeans-fit",
            Stage::Assign => "assign",
            Stage::Dpdp => "dpdp",
            Stage::Dedup => "dedup",
            Stage::Purity => "purity",
            Stage::F0 => "f0",
            Stage::Targets => "targets",
            Stage::Augment => "augment",
            Stage::Compose => "compose",
            Stage::Sample => "sample",
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .iter()
            .copied()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
#[error("stage {stage}: {source}")]
pub struct PipelineError {
    pub stage: String,
    #[source]
    pub source: Error,
}

fn at(stage: Stage) -> impl Fn(Error) -> PipelineError {
    move |source| PipelineError {
        stage: stage.name().to_string(),
        source,
    }
}

fn config_error(msg: impl Into<String>) -> PipelineError {
    PipelineError {
        stage: "config".into(),
        source: Error::Invalid(msg.into()),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusSection,
    pub pipeline: PipelineSection,
    pub kmeans: Option<KMeansSection>,
    pub dpdp: Option<DpdpSection>,
    pub f0: Option<F0Section>,
    pub augment: Option<AugmentSection>,
    pub compose: Option<ComposeSection>,
    pub sample: Option<SampleSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub manifest: PathBuf,
    pub features_dir: Option<PathBuf>,
    pub alignments_dir: Option<PathBuf>,
    pub embeddings_dir: Option<PathBuf>,
    /// Phone inventory, one symbol per line; ids are line indices.
    pub phones: Option<PathBuf>,
    /// Directory audio paths are relative to; the manifest's directory by default.
    pub audio_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub stages: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KMeansSection {
    pub k: usize,
    pub seed: u64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_one")]
    pub subsample: f64,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    /// Existing codebook, used when `kmeans-fit` is not among the stages.
    pub codebook: Option<PathBuf>,
}

fn default_max_iters() -> usize {
    100
}

fn default_tol() -> f64 {
    1e-4
}

fn default_n_init() -> usize {
    crate::kmeans::DEFAULT_N_INIT
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpdpSection {
    #[serde(default = "default_one")]
    pub lambda: f64,
    #[serde(default = "default_max_segment")]
    pub max_segment_frames: usize,
}

fn default_max_segment() -> usize {
    crate::segment::DEFAULT_MAX_SEGMENT_FRAMES
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct F0Section {
    pub f_min: Option<f64>,
    pub f_max: Option<f64>,
    pub voicing_threshold: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub manifest: PathBuf,
    pub noise_manifest: PathBuf,
    pub units_dir: Option<PathBuf>,
    #[serde(default = "default_stretch")]
    pub stretch: [f64; 2],
    #[serde(default = "default_snr")]
    pub snr_db: [f64; 2],
    pub seed: u64,
}

fn default_stretch() -> [f64; 2] {
    [1.0, 1.5]
}

fn default_snr() -> [f64; 2] {
    [0.0, 15.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeSection {
    pub rate: f64,
    /// Synthetic manifest, used when `augment` is not among the stages.
    pub synthetic: Option<PathBuf>,
    #[serde(default)]
    pub by_duration: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub epoch_size: usize,
    pub epochs: u64,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    /// Stage list validated against the canonical order.
    pub fn stages(&self) -> Result<Vec<Stage>, PipelineError> {
        let stages: Vec<Stage> = self
            .pipeline
            .stages
            .iter()
            .map(|s| s.parse().map_err(config_error))
            .collect::<Result<_, _>>()?;
        for w in stages.windows(2) {
            if w[0] >= w[1] {
                return Err(config_error(format!(
                    "stage {} cannot follow {} (order: {})",
                    w[1],
                    w[0],
                    Stage::ALL.map(|s| s.name()).join(", ")
                )));
            }
        }
        if stages.contains(&Stage::Assign) && stages.contains(&Stage::Dpdp) {
            return Err(config_error("choose one of assign and dpdp"));
        }
        Ok(stages)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<(PipelineConfig, PathBuf), PipelineError> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((PipelineConfig::parse(&text)?, base))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub outputs: Vec<OutputDigest>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PipelineReport {
    pub stages: Vec<StageReport>,
}

impl PipelineReport {
    /// One JSON object per stage, newline-terminated.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{}",
                serde_json::to_string(s).expect("report serializes")
            );
        }
        out
    }

    pub fn digests(&self) -> Vec<&OutputDigest> {
        self.stages.iter().flat_map(|s| &s.outputs).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

struct Context<'a> {
    cfg: &'a PipelineConfig,
    base: &'a Path,
    out: PathBuf,
    manifest: Manifest,
    features: Option<BTreeMap<String, FeatureMatrix>>,
    codebook: Option<Codebook>,
    framewise: Option<BTreeMap<String, UnitSequence>>,
    dedup: Option<BTreeMap<String, UnitSequence>>,
    pitch: Option<BTreeMap<String, PitchTrack>>,
    augmented: Option<Manifest>,
    merged: Option<Manifest>,
    written: Vec<PathBuf>,
}

impl Context<'_> {
    fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn record_existing(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    fn take_outputs(&mut self) -> Result<Vec<OutputDigest>> {
        let mut out = Vec::new();
        for p in std::mem::take(&mut self.written) {
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let rel = p.strip_prefix(&self.out).unwrap_or(&p);
            out.push(OutputDigest {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: sha256_hex(&bytes),
            });
        }
        out.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(out)
    }

    fn features(&mut self) -> Result<&BTreeMap<String, FeatureMatrix>> {
        if self.features.is_none() {
            let dir = self
                .cfg
                .corpus
                .features_dir
                .as_ref()
                .map(|d| self.resolve(d))
                .ok_or_else(|| Error::Invalid("corpus.features_dir is not set".into()))?;
            let loaded: Vec<(String, FeatureMatrix)> = self
                .manifest
                .records
                .par_iter()
                .map(|r| {
                    read_features(dir.join(format!("{}.fmat", r.id)))
                        .map(|m| (r.id.clone(), m))
                        .map_err(|e| Error::in_utterance(&r.id, e))
                })
                .collect::<Result<_>>()?;
            self.features = Some(loaded.into_iter().collect());
        }
        Ok(self.features.as_ref().unwrap())
    }

    fn codebook(&mut self) -> Result<Codebook> {
        if let Some(cb) = &self.codebook {
            return Ok(cb.clone());
        }
        let path = self
            .cfg
            .kmeans
            .as_ref()
            .and_then(|k| k.codebook.as_ref())
            .map(|p| self.resolve(p))
            .ok_or_else(|| {
                Error::Invalid("no codebook: run kmeans-fit or set kmeans.codebook".into())
            })?;
        if !path.exists() {
            return Err(Error::Invalid(format!(
                "codebook not found: {}",
                path.display()
            )));
        }
        let cb = read_codebook(&path)?;
        self.codebook = Some(cb.clone());
        Ok(cb)
    }

    fn audio_root(&self) -> PathBuf {
        match &self.cfg.corpus.audio_root {
            Some(p) => self.resolve(p),
            None => self
                .resolve(&self.cfg.corpus.manifest)
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default(),
        }
    }
}

fn units_text(id: &str, seq: &UnitSequence) -> String {
    let mut s = format_units_line(id, seq);
    s.push('\n');
    s
}

/// Runs the configured stages in order, stopping at the first failure.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    base_dir: &Path,
) -> Result<PipelineReport, PipelineError> {
    let stages = cfg.stages()?;
    let mut report = PipelineReport::default();
    if stages.is_empty() {
        return Ok(report);
    }
    let manifest_path = base_dir.join(&cfg.corpus.manifest);
    let manifest = load_manifest(&manifest_path).map_err(|e| config_error(e.to_string()))?;
    let out = base_dir.join(&cfg.pipeline.output_dir);
    fs::create_dir_all(&out).map_err(|e| config_error(format!("{}: {e}", out.display())))?;
    let mut ctx = Context {
        cfg,
        base: base_dir,
        out,
        manifest,
        features: None,
        codebook: None,
        framewise: None,
        dedup: None,
        pitch: None,
        augmented: None,
        merged: None,
        written: Vec::new(),
    };
    for stage in stages {
        let summary = run_stage(&mut ctx, stage).map_err(at(stage))?;
        let outputs = ctx.take_outputs().map_err(at(stage))?;
        report.stages.push(StageReport {
            stage: stage.name().to_string(),
            outputs,
            summary,
        });
    }
    Ok(report)
}

fn require<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Invalid(format!("missing {what}")))
}

fn run_stage(ctx: &mut Context, stage: Stage) -> Result<serde_json::Value> {
    match stage {
        Stage::KMeansFit => stage_kmeans_fit(ctx),
        Stage::Assign | Stage::Dpdp => stage_units(ctx, stage),
        Stage::Dedup => stage_dedup(ctx),
        Stage::Purity => stage_purity(ctx),
        Stage::F0 => stage_f0(ctx),
        Stage::Targets => stage_targets(ctx),
        Stage::Augment => stage_augment(ctx),
        Stage::Compose => stage_compose(ctx),
        Stage::Sample => stage_sample(ctx),
    }
}

fn stage_kmeans_fit(ctx: &mut Context) -> Result<serde_json::Value> {
    let section = require(&ctx.cfg.kmeans, "[kmeans] section")?.clone();
    let data: Vec<FeatureMatrix> = ctx.features()?.values().cloned().collect();
    let params = KMeansParams {
        k: section.k,
        max_iters: section.max_iters,
        tol: section.tol,
        seed: section.seed,
        subsample: section.subsample,
        n_init: section.n_init,
    };
    let cb = kmeans_fit(&data, &params)?;
    ctx.write("codebook.kmcb", &cb.to_bytes())?;
    let summary = serde_json::json!({
        "k": cb.k(),
        "dim": cb.dim(),
        "iterations": cb.meta.iterations,
        "inertia": cb.meta.inertia,
    });
    ctx.codebook = Some(cb);
    Ok(summary)
}

fn stage_units(ctx: &mut Context, stage: Stage) -> Result<serde_json::Value> {
    let cb = ctx.codebook()?;
    let dpdp = match ctx.cfg.dpdp.as_ref() {
        Some(d) => DpdpParams {
            lambda: d.lambda,
            max_segment_frames: d.max_segment_frames,
        },
        None => DpdpParams::default(),
    };
    let frame_rate = ctx.manifest.frame_rate_hz;
    let feats = ctx.features()?;
    let results: Vec<(String, UnitSequence, f64)> = feats
        .par_iter()
        .map(|(id, m)| {
            let r: Result<_> = if stage == Stage::Dpdp {
                dpdp_segment(m, &cb, &dpdp)
                    .map(|s| {
                        let mut seq = s.to_unit_sequence();
                        seq.frame_rate_hz = frame_rate;
                        (seq, s.cost)
                    })
                    .map_err(Error::from)
            } else {
                kmeans_assign(m, &cb)
                    .map(|u| (UnitSequence::framewise(u, frame_rate), 0.0))
                    .map_err(Error::from)
            };
            r.map(|(seq, cost)| (id.clone(), seq, cost))
                .map_err(|e| Error::in_utterance(id, e))
        })
        .collect::<Result<_>>()?;
    let mut total_cost = 0.0;
    let mut frames = 0;
    let mut map = BTreeMap::new();
    for (id, seq, cost) in results {
        ctx.write(
            &format!("units/{id}.units"),
            units_text(&id, &seq).as_bytes(),
        )?;
        total_cost += cost;
        frames += seq.num_frames();
        map.insert(id, seq);
    }
    ctx.framewise = Some(map);
    let mut summary = serde_json::json!({ "utterances": ctx.manifest.len(), "frames": frames });
    if stage == Stage::Dpdp {
        summary["lambda"] = dpdp.lambda.into();
        summary["total_cost"] = total_cost.into();
    }
    Ok(summary)
}

fn stage_dedup(ctx: &mut Context) -> Result<serde_json::Value> {
    let framewise = require(&ctx.framewise, "framewise units (run assign or dpdp first)")?;
    let dedup: BTreeMap<String, UnitSequence> = framewise
        .iter()
        .map(|(id, s)| (id.clone(), dedup_runs(s)))
        .collect();
    let (mut frames, mut tokens) = (0, 0);
    for (id, seq) in &dedup {
        frames += seq.num_frames();
        tokens += seq.len();
        ctx.write(&format!("dedup/{id}.units"), units_text(id, seq).as_bytes())?;
    }
    ctx.dedup = Some(dedup);
    Ok(serde_json::json!({ "frames": frames, "tokens": tokens }))
}

fn stage_purity(ctx: &mut Context) -> Result<serde_json::Value> {
    let dir = ctx
        .cfg
        .corpus
        .alignments_dir
        .as_ref()
        .map(|d| ctx.resolve(d))
        .ok_or_else(|| Error::Invalid("corpus.alignments_dir is not set".into()))?;
    let framewise = require(&ctx.framewise, "framewise units (run assign or dpdp first)")?;
    let per_utt: Vec<(ContingencyTable, RatioEntry, Option<RatioEntry>)> = framewise
        .par_iter()
        .map(|(id, seq)| {
            let r: Result<_> = (|| {
                let units = seq.expand();
                let ali = read_alignment(dir.join(format!("{id}.txt")), units.len())?;
                let table = accumulate_counts(&units, &ali)?;
                let phonemes = ali.intervals.len();
                let raw = RatioEntry {
                    id: id.clone(),
                    unit_len: seq.len(),
                    phoneme_len: phonemes,
                };
                let dd = ctx
                    .dedup
                    .as_ref()
                    .and_then(|d| d.get(id))
                    .map(|d| RatioEntry {
                        id: id.clone(),
                        unit_len: d.len(),
                        phoneme_len: phonemes,
                    });
                Ok((table, raw, dd))
            })();
            r.map_err(|e| Error::in_utterance(id, e))
        })
        .collect::<Result<_>>()?;
    let mut table = ContingencyTable::new();
    let mut raw = Vec::new();
    let mut dedup = Vec::new();
    for (t, r, d) in per_utt {
        table.merge(&t);
        raw.push(r);
        dedup.extend(d);
    }
    let report = purity_report(&table)?;
    let mut summary = serde_json::to_value(&report).expect("report serializes");
    summary["ratio_framewise"] = length_ratio(&raw)?.into();
    if !dedup.is_empty() {
        summary["ratio_dedup"] = length_ratio(&dedup)?.into();
    }
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    ctx.write("purity.json", text.as_bytes())?;
    Ok(summary)
}

fn stage_f0(ctx: &mut Context) -> Result<serde_json::Value> {
    let mut params = PitchParams {
        frame_rate_hz: ctx.manifest.frame_rate_hz,
        ..Default::default()
    };
    if let Some(s) = &ctx.cfg.f0 {
        params.f_min = s.f_min.unwrap_or(params.f_min);
        params.f_max = s.f_max.unwrap_or(params.f_max);
        params.voicing_threshold = s.voicing_threshold.unwrap_or(params.voicing_threshold);
    }
    let root = ctx.audio_root();
    let tracks: Vec<(String, PitchTrack)> = ctx
        .manifest
        .records
        .par_iter()
        .map(|r| {
            read_wav(root.join(&r.audio_path))
                .map_err(Error::from)
                .and_then(|w| extract_f0(&w, &params).map_err(Error::from))
                .map(|t| (r.id.clone(), t))
                .map_err(|e| Error::in_utterance(&r.id, e))
        })
        .collect::<Result<_>>()?;
    let mut voiced = 0usize;
    let mut frames = 0usize;
    for (id, t) in &tracks {
        let path = ctx.out.join("pitch").join(format!("{id}.f0"));
        fs::create_dir_all(path.parent().unwrap()).map_err(|e| Error::io(&path, e))?;
        write_pitch(t, &path)?;
        ctx.record_existing(path);
        voiced += t.voiced.iter().filter(|&&v| v).count();
        frames += t.len();
    }
    ctx.pitch = Some(tracks.into_iter().collect());
    Ok(serde_json::json!({ "frames": frames, "voiced_frames": voiced }))
}

fn stage_targets(ctx: &mut Context) -> Result<serde_json::Value> {
    let phones_path = ctx
        .cfg
        .corpus
        .phones
        .as_ref()
        .map(|p| ctx.resolve(p))
        .ok_or_else(|| Error::Invalid("corpus.phones is not set".into()))?;
    let phones_text = fs::read_to_string(&phones_path).map_err(|e| Error::io(&phones_path, e))?;
    let inventory = PhoneInventory::parse(&phones_text);
    let unit_eos = ctx.codebook()?.k() as u32;
    let dedup = require(&ctx.dedup, "deduplicated units (run dedup first)")?;
    let pitch = require(&ctx.pitch, "pitch tracks (run f0 first)")?;
    let emb_dir = ctx
        .cfg
        .corpus
        .embeddings_dir
        .as_ref()
        .map(|d| ctx.resolve(d));
    let mut lines = String::new();
    for r in &ctx.manifest.records {
        let id = &r.id;
        let wrap = |e: Error| Error::in_utterance(id, e);
        let text = r
            .text
            .as_deref()
            .ok_or_else(|| wrap(Error::Invalid("record has no phoneme text".into())))?;
        let phonemes = inventory.encode(text).map_err(wrap)?;
        let units = dedup
            .get(id)
            .ok_or_else(|| wrap(Error::Invalid("no units".into())))?;
        let track = pitch
            .get(id)
            .ok_or_else(|| wrap(Error::Invalid("no pitch track".into())))?;
        let t2u = prepare_t2u_target(id, &phonemes, inventory.eos(), units, unit_eos)
            .map_err(|e| wrap(e.into()))?;
        let (embedding, embedding_path) = match &emb_dir {
            Some(dir) => {
                let p = dir.join(format!("{id}.fmat"));
                let e = read_embedding(&p, id).map_err(|e| wrap(e.into()))?;
                (e, Some(p.to_string_lossy().into_owned()))
            }
            None => (
                crate::audio_io::SessionEmbedding {
                    vector: Vec::new(),
                    utterance_id: id.clone(),
                },
                None,
            ),
        };
        let pred =
            prepare_predictor_targets(units, track, &embedding).map_err(|e| wrap(e.into()))?;
        let rec = TargetRecord {
            id: id.clone(),
            phonemes: t2u.input_phonemes,
            groups: t2u.output_groups,
            counts: pred.repetition_counts,
            pitch_path: format!("pitch/{id}.f0"),
            embedding_path: embedding_path.map(|p| relative_to(&p, ctx.base)),
        };
        lines.push_str(&serde_json::to_string(&rec).expect("target serializes"));
        lines.push('\n');
    }
    ctx.write("targets.jsonl", lines.as_bytes())?;
    Ok(
        serde_json::json!({ "utterances": ctx.manifest.len(), "unit_eos": unit_eos, "phoneme_eos": inventory.eos() }),
    )
}

fn relative_to(p: &str, base: &Path) -> String {
    Path::new(p)
        .strip_prefix(base)
        .map(|r| r.to_string_lossy().into_owned())
        .unwrap_or_else(|_| p.to_string())
}

fn stage_augment(ctx: &mut Context) -> Result<serde_json::Value> {
    let s = require(&ctx.cfg.augment, "[augment] section")?.clone();
    let input_path = ctx.resolve(&s.manifest);
    let noise_path = ctx.resolve(&s.noise_manifest);
    let input = load_manifest(&input_path)?;
    let noise = load_manifest(&noise_path)?;
    let units = match &s.units_dir {
        Some(d) => Some(read_units_dir(ctx.resolve(d), input.frame_rate_hz)?),
        None => None,
    };
    let out_dir = ctx.out.join("augment");
    let job = AugmentJob {
        input: &input,
        input_root: input_path.parent().unwrap_or(Path::new(".")),
        noise: &noise,
        noise_root: noise_path.parent().unwrap_or(Path::new(".")),
        units: units.as_ref(),
        policy: AugmentPolicy {
            stretch_low: s.stretch[0],
            stretch_high: s.stretch[1],
            snr_low_db: s.snr_db[0],
            snr_high_db: s.snr_db[1],
            seed: s.seed,
        },
        out_dir: &out_dir,
    };
    let summary = augment_corpus(&job)?;
    for r in &summary.manifest.records {
        ctx.record_existing(out_dir.join(&r.audio_path));
    }
    ctx.record_existing(out_dir.join("manifest.jsonl"));
    if units.is_some() {
        ctx.record_existing(out_dir.join("stretched.units"));
    }
    let n = summary.manifest.len();
    let mut m = summary.manifest;
    // audio paths relative to the output root, for downstream manifests
    for r in &mut m.records {
        r.audio_path = format!("augment/{}", r.audio_path);
    }
    ctx.augmented = Some(m);
    Ok(serde_json::json!({ "utterances": n, "clipped_samples": summary.clipped_samples }))
}

fn stage_compose(ctx: &mut Context) -> Result<serde_json::Value> {
    let s = require(&ctx.cfg.compose, "[compose] section")?.clone();
    let synthetic = match (&ctx.augmented, &s.synthetic) {
        (Some(m), _) => m.clone(),
        (None, Some(p)) => load_manifest(ctx.resolve(p))?,
        (None, None) => {
            return Err(Error::Invalid(
                "no synthetic corpus: run augment or set compose.synthetic".into(),
            ))
        }
    };
    let spec = MixSpec {
        natural: &ctx.manifest,
        synthetic: &synthetic,
        oversampling_rate: s.rate,
        epoch_size: 1,
        seed: 0,
        mode: if s.by_duration {
            WeightMode::Duration
        } else {
            WeightMode::Utterance
        },
    };
    let merged = compose_corpus(&spec)?;
    let path = ctx.out.join("merged.jsonl");
    save_manifest(&merged, &path)?;
    ctx.record_existing(path);
    let total_weight: f64 = merged.records.iter().filter_map(|r| r.weight).sum();
    let summary = serde_json::json!({
        "natural": ctx.manifest.len(),
        "synthetic": synthetic.len(),
        "rate": s.rate,
        "total_weight": total_weight,
    });
    ctx.merged = Some(merged);
    Ok(summary)
}

fn stage_sample(ctx: &mut Context) -> Result<serde_json::Value> {
    let s = require(&ctx.cfg.sample, "[sample] section")?.clone();
    let merged = match &ctx.merged {
        Some(m) => m.clone(),
        None => load_manifest(ctx.out.join("merged.jsonl"))?,
    };
    let text = schedule_text(&merged, s.epoch_size, s.epochs, s.seed)?;
    ctx.write("schedule.txt", text.as_bytes())?;
    Ok(serde_json::json!({ "epochs": s.epochs, "epoch_size": s.epoch_size }))
}

/// Schedule lines `epoch<TAB>id`, epochs generated in parallel.
pub fn schedule_text(
    merged: &Manifest,
    epoch_size: usize,
    epochs: u64,
    seed: u64,
) -> Result<String> {
    let per_epoch: Vec<Vec<String>> = (0..epochs)
        .into_par_iter()
        .map(|e| schedule_from_manifest(merged, epoch_size, seed, e))
        .collect::<Result<_, _>>()?;
    let mut text = String::new();
    for (e, ids) in per_epoch.iter().enumerate() {
        for id in ids {
            let _ = writeln!(text, "{e}\t{id}");
        }
    }
    Ok(text)
}

/// Symbol table mapping phone symbols to ids by line order.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneInventory {
    symbols: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl PhoneInventory {
    pub fn parse(text: &str) -> Self {
        let symbols: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        PhoneInventory { symbols, index }
    }

    pub fn eos(&self) -> u32 {
        self.symbols.len() as u32
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|s| {
                self.index
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::Invalid(format!("unknown phone {s:?}")))
            })
            .collect()
    }
}
