//! End-to-end runs over scenes and frames, artifact writing and run manifests.
//!
//! Every command recomputes its inputs from the scene description, so a
//! command's outputs depend only on the scene, the configuration and the seed.
//! Frames are processed in parallel on a pool of the requested size and
//! written sequentially in job order; no output records the worker count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accumulation::{build_ground_truth, noisy_optical_flow, AccumulationConfig, FilterReport, GroundTruth};
use crate::association::{
    compute_labels, heuristic_predictor, noisy_oracle_predictor, oracle_predictor, probability_loss, BceLoss,
    HeuristicConfig, LabelParams, Labels, NeighborhoodSpec, NoisyOracleConfig, PdaVolume,
};
use crate::error::{Error, Result};
use crate::eval::{
    discard_rate, pda_curve, region_low_height, region_pda, write_curve_csv, write_rows_csv, CurveRow, EvalRow,
    MetricReport, Summary,
};
use crate::image::{DepthImage, FlowField, Mask};
use crate::io;
use crate::mer::{
    assemble_stage2_input, build_mer, complete_depth_baseline, expand, validate_thresholds, Completion,
    CompletionConfig, ExpandedDepth, MerImage, DEFAULT_THRESHOLDS,
};
use crate::radar::{accumulate_radar, radar_flow, RadarConfig, RadarImage};
use crate::sim::library;
use crate::sim::{camera_occluded_returns, render_truth, sample_lidar, sample_radar, FrameTruth, Scene};

/// Association predictor used to fill the PDA volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    /// Labels computed against the dense simulator depth.
    Oracle,
    /// Oracle confidences degraded by calibrated logit noise.
    NoisyOracle,
    /// Flow-consistency gate with a distance-decaying profile.
    Heuristic,
}

impl PredictorKind {
    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::Oracle => "oracle",
            PredictorKind::NoisyOracle => "noisy-oracle",
            PredictorKind::Heuristic => "heuristic",
        }
    }
}

/// All parameters of a run. Every field has a default, so `{}` is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Library scene names or paths to scene JSON files.
    pub scenes: Vec<String>,
    /// Target frames evaluated in every scene.
    pub frames: Vec<usize>,
    /// Overrides every scene's own RNG seed when set.
    pub seed: Option<u64>,
    pub predictor: PredictorKind,
    pub labels: LabelParams,
    pub neighborhood: NeighborhoodSpec,
    pub thresholds: Vec<f64>,
    pub radar: RadarConfig,
    pub accumulation: AccumulationConfig,
    pub noisy_oracle: NoisyOracleConfig,
    pub heuristic: HeuristicConfig,
    pub completion: CompletionConfig,
    /// Confidence level of the evaluation region around associated radar pixels.
    pub pda_level: f64,
    /// Threshold `T_1` for the discard rate.
    pub discard_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scenes: library::names().iter().map(|s| s.to_string()).collect(),
            frames: vec![library::TARGET_FRAME],
            seed: None,
            predictor: PredictorKind::Oracle,
            labels: LabelParams::default(),
            neighborhood: NeighborhoodSpec::default(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            radar: RadarConfig::default(),
            accumulation: AccumulationConfig::default(),
            noisy_oracle: NoisyOracleConfig::default(),
            heuristic: HeuristicConfig::default(),
            completion: CompletionConfig::default(),
            pda_level: 0.9,
            discard_threshold: DEFAULT_THRESHOLDS[0],
        }
    }
}

impl PipelineConfig {
    /// Parses a JSON configuration, reporting the offending field on error.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::SceneParse {
                line: inner.line(),
                column: inner.column(),
                path,
                message: inner.to_string(),
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenes.is_empty() {
            return Err(Error::InvalidConfig("no scenes selected".into()));
        }
        if self.frames.is_empty() {
            return Err(Error::InvalidConfig("no frames selected".into()));
        }
        self.labels.validate()?;
        validate_thresholds(&self.thresholds)?;
        self.accumulation.validate()?;
        if !(self.pda_level > 0.0 && self.pda_level < 1.0) {
            return Err(Error::InvalidConfig(format!("pda_level must be in (0, 1), got {}", self.pda_level)));
        }
        if !(self.discard_threshold > 0.0 && self.discard_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "discard_threshold must be in (0, 1), got {}",
                self.discard_threshold
            )));
        }
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of [`Self::canonical_json`], hex encoded.
    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Resolves a library scene name or a path to a scene file.
pub fn load_scene(spec: &str) -> Result<Scene> {
    if library::names().contains(&spec) {
        library::build(spec)
    } else {
        let path = Path::new(spec);
        if !path.exists() {
            return Err(Error::InvalidConfig(format!(
                "'{spec}' is neither a library scene ({}) nor an existing file",
                library::names().join(", ")
            )));
        }
        Scene::load(path)
    }
}

/// Applies a seed override to a scene.
pub fn with_seed(scene: Scene, seed: Option<u64>) -> Result<Scene> {
    match seed {
        Some(s) if s != scene.rng_seed() => {
            let mut file = scene.file().clone();
            file.rng_seed = s;
            Scene::new(file)
        }
        _ => Ok(scene),
    }
}

/// Seed of the noisy-oracle stream for one frame of a scene.
pub fn predictor_seed(scene: &Scene, frame: usize) -> u64 {
    scene.rng_seed().wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(frame as u64)
}

/// Every intermediate product of one target frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub scene: String,
    pub frame: usize,
    pub occlusion_scene: bool,
    pub truth: FrameTruth,
    /// Dense simulator depth clipped to the accumulation depth range; the evaluation reference.
    pub eval_truth: DepthImage,
    pub ground_truth: GroundTruth,
    pub radar: RadarImage,
    pub optical_flow: FlowField,
    pub labels: Labels,
    pub pda: PdaVolume,
    pub loss: BceLoss,
    pub expanded: ExpandedDepth,
    pub mer: MerImage,
    pub completion_mer: Completion,
    pub completion_radar: Completion,
    pub discard_rate: Option<f64>,
    pub pda_region: Mask,
    pub low_height_region: Mask,
    pub camera_occluded_returns: usize,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Runs the full chain for one target frame.
pub fn process_frame(scene: &Scene, frame: usize, cfg: &PipelineConfig) -> Result<FrameResult> {
    scene.check_frame(frame)?;
    let truth = stage("render", render_truth(scene, frame))?;
    let ground_truth = stage("accumulate", build_ground_truth(scene, &truth, &cfg.accumulation))?;
    let radar = stage("radar", accumulate_radar(scene, frame, &cfg.radar))?;
    let other = if frame + 1 < scene.frame_count() { frame + 1 } else { frame.saturating_sub(1) };
    let optical_flow = stage(
        "optical flow",
        noisy_optical_flow(scene, &truth, other, cfg.accumulation.flow_noise_sigma),
    )?;
    let labels = stage(
        "labels",
        compute_labels(&radar.depth, &ground_truth.depth, &cfg.neighborhood, &cfg.labels),
    )?;
    let pda = stage(
        "predictor",
        match cfg.predictor {
            PredictorKind::Oracle => oracle_predictor(&radar.depth, &truth.depth, &cfg.neighborhood, &cfg.labels),
            PredictorKind::NoisyOracle => noisy_oracle_predictor(
                &radar.depth,
                &truth.depth,
                &cfg.neighborhood,
                &cfg.labels,
                &cfg.noisy_oracle,
                predictor_seed(scene, frame),
            ),
            PredictorKind::Heuristic => radar_flow(scene, &radar, other).and_then(|rf| {
                heuristic_predictor(&radar.depth, &rf, &optical_flow, &cfg.neighborhood, &cfg.heuristic)
            }),
        },
    )?;
    let loss = stage("loss", probability_loss(&pda, &labels))?;
    let expanded = stage("expand", expand(&radar.depth, &pda, &cfg.neighborhood))?;
    let mer = stage("mer", build_mer(&expanded, &cfg.thresholds))?;
    let empty_mer = MerImage {
        thresholds: vec![],
        channels: vec![],
        width: mer.width,
        height: mer.height,
    };
    let completion_mer = stage(
        "complete",
        assemble_stage2_input(&radar.depth, &mer, &optical_flow)
            .and_then(|s| complete_depth_baseline(&s, &cfg.completion)),
    )?;
    let completion_radar = stage(
        "complete",
        assemble_stage2_input(&radar.depth, &empty_mer, &optical_flow)
            .and_then(|s| complete_depth_baseline(&s, &cfg.completion)),
    )?;
    let mut eval_truth = truth.depth.clone();
    eval_truth.clip_max(cfg.accumulation.max_depth);
    let sweep = stage("radar", sample_radar(scene, frame))?;
    let occluded = stage(
        "radar",
        camera_occluded_returns(scene, &sweep, &truth.depth, cfg.labels.t_a, cfg.labels.t_r),
    )?;
    Ok(FrameResult {
        scene: scene.name().to_string(),
        frame,
        occlusion_scene: scene.has_tag(library::OCCLUSION_TAG),
        discard_rate: discard_rate(&pda, cfg.discard_threshold),
        pda_region: region_pda(&expanded.confidence, cfg.pda_level),
        low_height_region: region_low_height(&truth.height),
        camera_occluded_returns: occluded.len(),
        truth,
        eval_truth,
        ground_truth,
        radar,
        optical_flow,
        labels,
        pda,
        loss,
        expanded,
        mer,
        completion_mer,
        completion_radar,
    })
}

/// Completion methods compared in the evaluation table.
pub const METHODS: [&str; 2] = ["radar", "mer"];
/// Evaluation regions.
pub const REGIONS: [&str; 3] = ["full", "pda", "low-height"];

impl FrameResult {
    pub fn image_id(&self) -> String {
        format!("{}/{:03}", self.scene, self.frame)
    }

    pub fn completion(&self, method: &str) -> &Completion {
        match method {
            "radar" => &self.completion_radar,
            _ => &self.completion_mer,
        }
    }

    pub fn region(&self, region: &str) -> Option<&Mask> {
        match region {
            "pda" => Some(&self.pda_region),
            "low-height" => Some(&self.low_height_region),
            _ => None,
        }
    }
}

/// Per-image rows and pooled summary over a set of frame results.
pub fn evaluate(results: &[FrameResult]) -> Result<(Vec<EvalRow>, Summary)> {
    let mut rows = Vec::new();
    let mut summary = Summary::default();
    for r in results {
        for region in REGIONS {
            for method in METHODS {
                let report = summary.add(region, method, &r.completion(method).depth, &r.eval_truth, r.region(region))?;
                rows.push(EvalRow::new(&r.image_id(), region, method, &report));
            }
        }
    }
    Ok((rows, summary))
}

/// MER area/MAE curve against the evaluation truth.
pub fn curve(results: &[FrameResult]) -> Result<Vec<CurveRow>> {
    let items: Vec<_> = results.iter().map(|r| (&r.mer, &r.eval_truth)).collect();
    pda_curve(&items)
}

/// Collects written files and their digests for the manifest.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    entries: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        io::write_file(&self.root.join(rel), bytes)?;
        self.entries.push(ArtifactEntry {
            path: rel.to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value).map_err(|e| Error::format("JSON", e.to_string()))?;
        text.push(b'\n');
        self.write(rel, &text)
    }

    pub fn entries(&self) -> &[ArtifactEntry] {
        &self.entries
    }

    /// Writes `manifest.json` listing every artifact written so far.
    pub fn finish(mut self, manifest: Manifest) -> Result<Manifest> {
        let manifest = Manifest {
            artifacts: std::mem::take(&mut self.entries),
            ..manifest
        };
        let mut text = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::format("JSON", e.to_string()))?;
        text.push(b'\n');
        io::write_file(&self.root.join(MANIFEST), &text)?;
        Ok(manifest)
    }
}

pub const MANIFEST: &str = "manifest.json";

/// Per-scene facts recorded in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub name: String,
    pub rng_seed: u64,
    pub frames: Vec<usize>,
    /// Camera-occluded radar returns per listed frame.
    pub camera_occluded_returns: Vec<usize>,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    /// Resolved configuration.
    pub config: PipelineConfig,
    /// The configuration text exactly as supplied, when read from a file.
    pub config_input: Option<String>,
    /// Defaults of this build, so overrides can be told apart.
    pub defaults: PipelineConfig,
    pub scenes: Vec<SceneRecord>,
    pub artifacts: Vec<ArtifactEntry>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &PipelineConfig, config_input: Option<&str>) -> Self {
        Self {
            tool: "rcpda".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.clone(),
            config_input: config_input.map(str::to_string),
            defaults: PipelineConfig::default(),
            scenes: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = io::read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format("manifest", e.to_string()))
    }
}

/// Runs `f` on a pool of `workers` threads (all cores when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == Some(0) {
        return Err(Error::InvalidConfig("worker count must be at least 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Loads the configured scenes with the seed override applied.
pub fn load_scenes(cfg: &PipelineConfig) -> Result<Vec<Scene>> {
    cfg.scenes
        .iter()
        .map(|s| load_scene(s).and_then(|scene| with_seed(scene, cfg.seed)))
        .collect()
}

/// Processes every configured `(scene, frame)` pair in parallel, returning results in job order.
pub fn process_all(scenes: &[Scene], cfg: &PipelineConfig, workers: Option<usize>) -> Result<Vec<FrameResult>> {
    cfg.validate()?;
    let jobs: Vec<(&Scene, usize)> = scenes
        .iter()
        .flat_map(|s| cfg.frames.iter().map(move |&f| (s, f)))
        .collect();
    with_workers(workers, || {
        jobs.par_iter()
            .map(|(s, f)| process_frame(s, *f, cfg))
            .collect::<Result<Vec<_>>>()
    })?
}

fn scene_records(scenes: &[Scene], results: &[FrameResult]) -> Vec<SceneRecord> {
    scenes
        .iter()
        .map(|s| {
            let mine: Vec<_> = results.iter().filter(|r| r.scene == s.name()).collect();
            SceneRecord {
                name: s.name().to_string(),
                rng_seed: s.rng_seed(),
                frames: mine.iter().map(|r| r.frame).collect(),
                camera_occluded_returns: mine.iter().map(|r| r.camera_occluded_returns).collect(),
            }
        })
        .collect()
}

/// Which per-frame artifacts a command writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outputs {
    Accumulate,
    Labels,
    Mer,
    Complete,
    Everything,
}

/// Sidecar of the semi-dense ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSidecar {
    pub scene: String,
    pub frame: usize,
    pub rng_seed: u64,
    pub config: AccumulationConfig,
    pub report: FilterReport,
}

/// Per-frame numbers written next to the frame artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub scene: String,
    pub frame: usize,
    pub predictor: PredictorKind,
    pub radar_pixels: usize,
    pub camera_occluded_returns: usize,
    pub label_loss: BceLoss,
    pub discard_rate: Option<f64>,
    pub mer_areas: Vec<usize>,
    pub completion_anchors: BTreeMap<String, usize>,
    pub completion_no_anchors: BTreeMap<String, bool>,
}

fn write_frame(w: &mut ArtifactWriter, r: &FrameResult, cfg: &PipelineConfig, seed: u64, outputs: Outputs) -> Result<()> {
    let dir = format!("{}/{:03}", r.scene, r.frame);
    let all = outputs == Outputs::Everything;
    if all || outputs == Outputs::Accumulate {
        w.write(&format!("{dir}/gt_depth.pgm"), &io::encode_depth_pgm(&r.ground_truth.depth))?;
        w.write(&format!("{dir}/gt_raw_depth.pgm"), &io::encode_depth_pgm(&r.ground_truth.raw_depth))?;
        w.write_json(
            &format!("{dir}/gt_depth.json"),
            &GroundTruthSidecar {
                scene: r.scene.clone(),
                frame: r.frame,
                rng_seed: seed,
                config: cfg.accumulation,
                report: r.ground_truth.report,
            },
        )?;
        w.write(&format!("{dir}/radar_depth.pgm"), &io::encode_depth_pgm(&r.radar.depth))?;
    }
    if all || outputs == Outputs::Labels {
        w.write(&format!("{dir}/labels.pdal"), &io::encode_labels(&r.labels, &cfg.neighborhood)?)?;
    }
    if all || outputs == Outputs::Mer {
        w.write(&format!("{dir}/pda.pdav"), &io::encode_pda(&r.pda, &cfg.neighborhood)?)?;
        w.write(&format!("{dir}/mer.mer1"), &io::encode_mer(&r.mer)?)?;
        for (l, ch) in r.mer.channels.iter().enumerate() {
            w.write(&format!("{dir}/mer_{l}.pgm"), &io::encode_depth_pgm(ch))?;
        }
    }
    if all || outputs == Outputs::Complete {
        w.write(&format!("{dir}/completion_mer.pgm"), &io::encode_depth_pgm(&r.completion_mer.depth))?;
        w.write(&format!("{dir}/completion_radar.pgm"), &io::encode_depth_pgm(&r.completion_radar.depth))?;
    }
    if all {
        w.write(&format!("{dir}/truth_depth.pgm"), &io::encode_depth_pgm(&r.eval_truth))?;
    }
    let summary = FrameSummary {
        scene: r.scene.clone(),
        frame: r.frame,
        predictor: cfg.predictor,
        radar_pixels: r.radar.pixels.len(),
        camera_occluded_returns: r.camera_occluded_returns,
        label_loss: r.loss,
        discard_rate: r.discard_rate,
        mer_areas: r.mer.areas(),
        completion_anchors: METHODS
            .iter()
            .map(|m| (m.to_string(), r.completion(m).anchors))
            .collect(),
        completion_no_anchors: METHODS
            .iter()
            .map(|m| (m.to_string(), r.completion(m).no_anchors))
            .collect(),
    };
    w.write_json(&format!("{dir}/summary.json"), &summary)
}

/// Pooled full-image metrics per method, mirroring a completion comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub n_pixels: usize,
    pub mae: Option<f64>,
    pub abs_rel: Option<f64>,
    pub rmse: Option<f64>,
    pub rmse_log: Option<f64>,
}

fn comparison(reports: &BTreeMap<String, BTreeMap<String, MetricReport>>) -> Vec<ComparisonRow> {
    let full = reports.get("full");
    METHODS
        .iter()
        .filter_map(|m| full.and_then(|f| f.get(*m)).map(|r| (m, r)))
        .map(|(m, r)| ComparisonRow {
            method: m.to_string(),
            n_pixels: r.n_pixels,
            mae: r.stats.map(|s| s.mae),
            abs_rel: r.stats.map(|s| s.abs_rel),
            rmse: r.stats.map(|s| s.rmse),
            rmse_log: r.stats.map(|s| s.rmse_log),
        })
        .collect()
}

/// JSON summary of an evaluation: pooled reports keyed by region then method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub predictor: PredictorKind,
    pub images: usize,
    pub reports: BTreeMap<String, BTreeMap<String, MetricReport>>,
    pub discard_rate: Option<f64>,
    pub label_loss_mean: Option<f64>,
}

fn eval_outputs(w: &mut ArtifactWriter, results: &[FrameResult], cfg: &PipelineConfig) -> Result<EvalSummary> {
    let (rows, summary) = evaluate(results)?;
    let mut csv = Vec::new();
    write_rows_csv(&mut csv, &rows)?;
    w.write("eval.csv", &csv)?;
    let reports = summary.reports();

    let mut curve_csv = Vec::new();
    write_curve_csv(&mut curve_csv, &[(cfg.predictor.name(), &curve(results)?)])?;
    w.write("pda_curve.csv", &curve_csv)?;

    let mut table = Vec::new();
    {
        let mut cw = csv::Writer::from_writer(&mut table);
        for row in comparison(&reports) {
            cw.serialize(row).map_err(|e| Error::format("comparison CSV", e.to_string()))?;
        }
        cw.flush().map_err(|e| Error::format("comparison CSV", e.to_string()))?;
    }
    w.write("comparison.csv", &table)?;

    // Pooled over radar pixels of all images, like the per-image rates.
    let (discarded, total) = results.iter().fold((0.0, 0usize), |(d, t), r| {
        let n = r.pda.support().len();
        (d + r.discard_rate.unwrap_or(0.0) * n as f64, t + n)
    });
    let active: usize = results.iter().map(|r| r.loss.active).sum();
    let loss_sum: f64 = results.iter().map(|r| r.loss.sum).sum();
    let eval_summary = EvalSummary {
        predictor: cfg.predictor,
        images: results.len(),
        reports,
        discard_rate: (total > 0).then(|| discarded / total as f64),
        label_loss_mean: (active > 0).then(|| loss_sum / active as f64),
    };
    w.write_json("summary.json", &eval_summary)?;
    Ok(eval_summary)
}

/// Result of a command that processes frames.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub summary: Option<EvalSummary>,
}

/// Shared driver of the frame-processing commands.
pub fn run_command(
    command: &str,
    outputs: Option<Outputs>,
    with_eval: bool,
    cfg: &PipelineConfig,
    config_input: Option<&str>,
    out: &Path,
    workers: Option<usize>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let scenes = load_scenes(cfg)?;
    let results = process_all(&scenes, cfg, workers)?;
    let mut w = ArtifactWriter::new(out)?;
    if let Some(o) = outputs {
        for r in &results {
            let seed = scenes
                .iter()
                .find(|s| s.name() == r.scene)
                .map_or(0, |s| s.rng_seed());
            write_frame(&mut w, r, cfg, seed, o)?;
        }
    }
    let summary = if with_eval { Some(eval_outputs(&mut w, &results, cfg)?) } else { None };
    let mut manifest = Manifest::new(command, cfg, config_input);
    manifest.scenes = scene_records(&scenes, &results);
    Ok(RunOutcome {
        manifest: w.finish(manifest)?,
        summary,
    })
}

/// The full chain with every artifact and the evaluation outputs.
pub fn run_pipeline(cfg: &PipelineConfig, config_input: Option<&str>, out: &Path, workers: Option<usize>) -> Result<RunOutcome> {
    run_command("pipeline", Some(Outputs::Everything), true, cfg, config_input, out, workers)
}

/// A radar return as written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnRecord {
    /// Reported position in the radar frame.
    pub position: [f64; 3],
    pub radial_velocity: f64,
    pub timestamp: f64,
    /// Simulator truth: reflecting point in the radar frame.
    pub true_hit: [f64; 3],
    pub camera_occluded: bool,
}

/// Writes per-frame simulator truth and sensor sweeps for `frames` (all when empty).
pub fn simulate(scene: &Scene, frames: &[usize], cfg: &PipelineConfig, out: &Path, workers: Option<usize>) -> Result<Manifest> {
    let frames: Vec<usize> = if frames.is_empty() {
        (0..scene.frame_count()).collect()
    } else {
        frames.to_vec()
    };
    for &f in &frames {
        scene.check_frame(f)?;
    }
    type FrameOut = (usize, FrameTruth, Vec<crate::geometry::LidarPoint>, Vec<ReturnRecord>);
    let per_frame: Vec<FrameOut> = with_workers(workers, || {
        frames
            .par_iter()
            .map(|&f| -> Result<FrameOut> {
                let truth = render_truth(scene, f)?;
                let lidar = sample_lidar(scene, f)?;
                let radar = sample_radar(scene, f)?;
                let occluded = camera_occluded_returns(scene, &radar, &truth.depth, cfg.labels.t_a, cfg.labels.t_r)?;
                let records = radar
                    .returns
                    .iter()
                    .enumerate()
                    .map(|(i, r)| ReturnRecord {
                        position: r.ret.position.into(),
                        radial_velocity: r.ret.radial_velocity,
                        timestamp: r.ret.timestamp,
                        true_hit: r.true_hit.into(),
                        camera_occluded: occluded.contains(&i),
                    })
                    .collect();
                Ok((f, truth, lidar.points, records))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut w = ArtifactWriter::new(out)?;
    w.write("scene.json", scene.to_json().as_bytes())?;
    let mut occluded_counts = Vec::with_capacity(per_frame.len());
    for (f, truth, lidar, radar) in &per_frame {
        let dir = format!("frames/{f:03}");
        w.write(&format!("{dir}/depth.pgm"), &io::encode_depth_pgm(&truth.depth))?;
        w.write(&format!("{dir}/depth.f32"), &io::encode_grid(&io::depth_grid(&truth.depth))?)?;
        w.write(&format!("{dir}/flow.f32"), &io::encode_grid(&io::flow_grid(&truth.optical_flow))?)?;
        w.write(&format!("{dir}/height.f32"), &io::encode_grid(&io::scalar_grid(&truth.height))?)?;
        w.write(&format!("{dir}/vehicle_mask.pgm"), &io::encode_mask_pgm(&truth.vehicle_mask))?;
        let ids = truth.instance_mask.map(|&id| id as f64);
        w.write(&format!("{dir}/instance.f32"), &io::encode_grid(&io::scalar_grid(&ids))?)?;
        let lidar_grid = io::RawGrid {
            width: lidar.len(),
            height: 1,
            channels: 4,
            data: (0..4)
                .flat_map(|c| {
                    lidar.iter().map(move |p| match c {
                        0..=2 => p.position[c] as f32,
                        _ => p.instance_id.map_or(0.0, |i| i as f32),
                    })
                })
                .collect(),
        };
        w.write(&format!("{dir}/lidar.f32"), &io::encode_grid(&lidar_grid)?)?;
        w.write_json(&format!("{dir}/radar.json"), radar)?;
        occluded_counts.push(radar.iter().filter(|r| r.camera_occluded).count());
    }
    let mut manifest = Manifest::new("simulate", cfg, None);
    manifest.scenes = vec![SceneRecord {
        name: scene.name().to_string(),
        rng_seed: scene.rng_seed(),
        frames: per_frame.iter().map(|p| p.0).collect(),
        camera_occluded_returns: occluded_counts,
    }];
    w.finish(manifest)
}
