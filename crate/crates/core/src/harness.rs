//! End-to-end experiment driver.
//!
//! Turns a TOML-loadable [`ExperimentConfig`] into a benchmark run: build
//! (or load) a scene, split its trajectory into reference and query views,
//! synthesize query images, run the retrieval / initialization / refinement
//! pipeline over the query batch, and emit reports (per-query JSONL, summary
//! CSV, pass-rate-vs-iteration CSV, SVG plots).
//!
//! Two scenes are in play. The *pipeline* scene is the one the localizer is
//! allowed to touch: references are rendered from it, the search and the
//! refiner render against it, and artifact injection corrupts it. Query
//! images always come from the *clean* scene (plus optional photometric
//! noise), standing in for real captures of the true world.
//!
//! Reproducibility contract: with a fixed config, the summary CSV is
//! byte-identical across runs and across worker counts. Per-query noise is
//! keyed by (config seed, query id), never by scheduling order; timings are
//! confined to the JSONL results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraPose, Intrinsics};
use crate::image::Image;
use crate::initializer::{
    run_initialization, CandidateOutcome, CandidateRef, QueryContext, RelposeBackend, SearchConfig,
};
use crate::metrics::{median, recall_at, rotation_error_deg, translation_error, PoseError};
use crate::refiner::{refine_pose, RefineConfig};
use crate::render::{render, RenderConfig, RenderedView};
use crate::retrieval::{build_database, compute_descriptor, retrieve_topk, PoseDatabase};
use crate::scene::{
    inject_artifacts, load_ply, synthesize_scene, ArtifactSpec, GaussianScene, SceneError,
    SceneRecipe,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("scene: {0}")]
    Scene(#[from] SceneError),
    #[error("retrieval: {0}")]
    Retrieval(#[from] crate::retrieval::RetrievalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("encode: {0}")]
    Encode(String),
}

/// Recall thresholds as (rotation degrees, translation as a fraction of
/// scene diameter). Diameter-relative distances let one benchmark
/// definition cover scenes of any physical scale.
pub const THRESHOLD_LOOSE: (f64, f64) = (2.0, 0.02);
pub const THRESHOLD_TIGHT: (f64, f64) = (1.0, 0.01);
pub const THRESHOLD_STRICT: (f64, f64) = (0.1, 0.002);

/// Where the scene and its camera trajectory come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSource {
    /// Procedural scene; the recipe also fixes the trajectory.
    Recipe(SceneRecipe),
    /// Splat PLY plus a JSON pose array (the importer extension point).
    Ply { scene: PathBuf, trajectory: PathBuf },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    pub fov_x_deg: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec { width: 256, height: 192, fov_x_deg: 70.0 }
    }
}

impl CameraSpec {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.width, self.height, self.fov_x_deg)
    }
}

/// How far down the pipeline each query is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseStaging {
    /// Retrieval only: the query's pose is the top-1 database pose.
    Retrieval,
    /// Retrieval plus scale-aware search initialization.
    Initialization,
    /// The full pipeline including photometric refinement.
    Refinement,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    /// Corruption applied to the pipeline scene only; the default spec is
    /// a no-op. Query imagery always renders from the clean scene.
    pub artifacts: ArtifactSpec,
    pub camera: CameraSpec,
    /// Every `reference_stride`-th trajectory pose becomes a reference,
    /// the rest become queries; 3 gives the default 1:2 split.
    pub reference_stride: usize,
    /// Cap on the number of query views (taken in trajectory order).
    pub max_queries: Option<usize>,
    pub retrieval_k: usize,
    /// Insert rendered midpoint views between consecutive references.
    pub augment_database: bool,
    pub staging: PhaseStaging,
    /// Std dev of per-pixel Gaussian noise added to query renders.
    pub query_noise_sigma: f64,
    /// Max magnitude of the per-query relative exposure gain error.
    pub exposure_jitter: f64,
    /// Base seed for the per-query noise streams. Scene, artifact, and
    /// backend randomness carry their own seeds in their own specs.
    pub seed: u64,
    pub search: SearchConfig,
    pub refine: RefineConfig,
    pub backend: RelposeBackend,
    pub render: RenderConfig,
    pub output_dir: PathBuf,
    /// Also write per-query debug PNGs (query image, reliability mask).
    pub dump_images: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scene: SceneSource::Recipe(SceneRecipe::default()),
            artifacts: ArtifactSpec::default(),
            camera: CameraSpec::default(),
            reference_stride: 3,
            max_queries: None,
            retrieval_k: 3,
            augment_database: true,
            staging: PhaseStaging::Refinement,
            query_noise_sigma: 0.01,
            exposure_jitter: 0.0,
            seed: 0,
            search: SearchConfig::default(),
            refine: RefineConfig::default(),
            backend: RelposeBackend::OracleNoise {
                sigma_rot_rad: 1.0f64.to_radians(),
                sigma_dir_rad: 1.0f64.to_radians(),
                seed: 0,
            },
            render: RenderConfig::default(),
            output_dir: PathBuf::from("runs/out"),
            dump_images: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.camera.width < 8 || self.camera.height < 8 {
            return fail(format!(
                "camera {}x{} too small (need at least 8x8)",
                self.camera.width, self.camera.height
            ));
        }
        if !(self.camera.fov_x_deg > 10.0 && self.camera.fov_x_deg < 170.0) {
            return fail(format!("fov_x_deg {} outside (10, 170)", self.camera.fov_x_deg));
        }
        if self.reference_stride < 2 {
            return fail("reference_stride must be >= 2 so some poses remain queries".into());
        }
        if self.max_queries == Some(0) {
            return fail("max_queries must be >= 1 when set".into());
        }
        if self.retrieval_k < 1 {
            return fail("retrieval_k must be >= 1".into());
        }
        if !(0.0..=0.02).contains(&self.query_noise_sigma) {
            return fail(format!(
                "query_noise_sigma {} outside [0, 0.02]",
                self.query_noise_sigma
            ));
        }
        if !(0.0..=0.5).contains(&self.exposure_jitter) {
            return fail(format!("exposure_jitter {} outside [0, 0.5]", self.exposure_jitter));
        }
        let (sigma_rot, sigma_dir) = match self.backend {
            RelposeBackend::OracleNoise { sigma_rot_rad, sigma_dir_rad, .. } => {
                (sigma_rot_rad, sigma_dir_rad)
            }
            RelposeBackend::NccMatcher { sigma_rot_rad, sigma_dir_rad, .. } => {
                (sigma_rot_rad, sigma_dir_rad)
            }
        };
        if !(sigma_rot.is_finite() && sigma_rot >= 0.0 && sigma_dir.is_finite() && sigma_dir >= 0.0)
        {
            return fail("backend noise sigmas must be finite and >= 0".into());
        }
        self.search
            .validate()
            .map_err(|e| HarnessError::Config(format!("search: {e}")))?;
        self.refine
            .validate()
            .map_err(|e| HarnessError::Config(format!("refine: {e}")))?;
        self.render
            .validate()
            .map_err(|e| HarnessError::Config(format!("render: {e}")))?;
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("parse {}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_trajectory(path: &Path, poses: &[CameraPose]) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(poses).map_err(|e| HarnessError::Encode(e.to_string()))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<Vec<CameraPose>, HarnessError> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("parse {}: {e}", path.display())))
}

/// Reference/query split: every `stride`-th pose (starting at index 0) is a
/// reference. Fails unless at least 2 references and 1 query remain, the
/// minimum for midpoint augmentation and for a non-empty benchmark.
pub fn split_trajectory(
    trajectory: &[CameraPose],
    stride: usize,
) -> Result<(Vec<CameraPose>, Vec<CameraPose>), HarnessError> {
    assert!(stride >= 2, "validated stride");
    let (mut references, mut queries) = (Vec::new(), Vec::new());
    for (i, pose) in trajectory.iter().enumerate() {
        if i % stride == 0 {
            references.push(*pose);
        } else {
            queries.push(*pose);
        }
    }
    if references.len() < 2 || queries.is_empty() {
        return Err(HarnessError::Config(format!(
            "trajectory of {} poses with stride {} leaves {} references and {} queries; need >= 2 and >= 1",
            trajectory.len(),
            stride,
            references.len(),
            queries.len()
        )));
    }
    Ok((references, queries))
}

/// Everything the per-query pipeline needs, assembled once per run.
pub struct ExperimentData {
    pub clean_scene: GaussianScene,
    pub pipeline_scene: GaussianScene,
    pub references: Vec<(Image, CameraPose)>,
    pub query_poses: Vec<CameraPose>,
    pub intrinsics: Intrinsics,
    /// Clean-scene diameter; the scale for all distance thresholds.
    pub diameter: f64,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<ExperimentData, HarnessError> {
    let (clean_scene, trajectory) = match &cfg.scene {
        SceneSource::Recipe(recipe) => synthesize_scene(recipe)?,
        SceneSource::Ply { scene, trajectory } => {
            (load_ply(scene)?, load_trajectory(trajectory)?)
        }
    };
    let intrinsics = cfg.camera.intrinsics();
    let (reference_poses, mut query_poses) = split_trajectory(&trajectory, cfg.reference_stride)?;
    if let Some(limit) = cfg.max_queries {
        query_poses.truncate(limit);
    }

    let pipeline_scene = inject_artifacts(&clean_scene, &cfg.artifacts, &trajectory, &intrinsics)?;
    let references: Vec<(Image, CameraPose)> = reference_poses
        .into_par_iter()
        .map(|pose| {
            let view = render(&pipeline_scene, &pose, &intrinsics, &cfg.render);
            (view.rgb, pose)
        })
        .collect();

    let diameter = clean_scene.diameter();
    Ok(ExperimentData {
        clean_scene,
        pipeline_scene,
        references,
        query_poses,
        intrinsics,
        diameter,
    })
}

const QUERY_NOISE_SALT: u64 = 0x5851_F42D_4C95_7F2D;

fn query_noise_rng(seed: u64, query_id: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (query_id as u64 + 1).wrapping_mul(QUERY_NOISE_SALT))
}

/// Renders the ground-truth view from the clean scene and derives the query
/// image from it: optional exposure gain error, then per-pixel Gaussian
/// noise, clamped back to [0, 1]. The noise stream depends only on
/// (config seed, query id).
pub fn synthesize_query(
    clean_scene: &GaussianScene,
    pose: &CameraPose,
    k: &Intrinsics,
    render_cfg: &RenderConfig,
    cfg: &ExperimentConfig,
    query_id: usize,
) -> (Image, RenderedView) {
    let gt_render = render(clean_scene, pose, k, render_cfg);
    let mut image = gt_render.rgb.clone();
    if cfg.query_noise_sigma > 0.0 || cfg.exposure_jitter > 0.0 {
        let mut rng = query_noise_rng(cfg.seed, query_id);
        let gain = 1.0 + cfg.exposure_jitter * rng.gen_range(-1.0..1.0);
        let noise = Normal::new(0.0, cfg.query_noise_sigma).expect("finite sigma");
        for v in 0..image.height {
            for u in 0..image.width {
                let px = image.pixel(u, v);
                let mut out = [0.0; 3];
                for c in 0..3 {
                    out[c] = (px[c] * gain + noise.sample(&mut rng)).clamp(0.0, 1.0);
                }
                image.set_pixel(u, v, out);
            }
        }
    }
    (image, gt_render)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseOutcome {
    pub pose: CameraPose,
    pub rotation_error_deg: f64,
    pub translation_error: f64,
    pub seconds: f64,
}

/// Winning candidate's 1D search, kept small enough for JSONL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSummary {
    pub step: f64,
    pub selected_index: usize,
    pub losses: Vec<f64>,
    pub objectives: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvePoint {
    pub loss: f64,
    pub rotation_error_deg: f64,
    pub translation_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub query_id: usize,
    /// Terminal status: "ok" or "<phase> failed: <reason>". A failed phase
    /// keeps the outcomes of the phases that did complete.
    pub status: String,
    pub gt_pose: CameraPose,
    pub retrieval: Option<PhaseOutcome>,
    pub initialization: Option<PhaseOutcome>,
    pub refinement: Option<PhaseOutcome>,
    pub search: Option<SearchSummary>,
    /// Pose error after each refinement iteration.
    pub refinement_curve: Vec<CurvePoint>,
    pub mask_kept_fraction: Option<f64>,
}

impl LocalizationResult {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

fn phase_outcome(est: &CameraPose, gt: &CameraPose, started: Instant) -> PhaseOutcome {
    PhaseOutcome {
        pose: *est,
        rotation_error_deg: rotation_error_deg(&est.rotation, &gt.rotation),
        translation_error: translation_error(est, gt),
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn localize_one(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    db: &PoseDatabase,
    query_id: usize,
    gt_pose: &CameraPose,
) -> LocalizationResult {
    let (image, gt_render) =
        synthesize_query(&data.clean_scene, gt_pose, &data.intrinsics, &cfg.render, cfg, query_id);
    let mut result = LocalizationResult {
        query_id,
        status: "ok".into(),
        gt_pose: *gt_pose,
        retrieval: None,
        initialization: None,
        refinement: None,
        search: None,
        refinement_curve: Vec::new(),
        mask_kept_fraction: None,
    };
    if cfg.dump_images {
        let path = cfg.output_dir.join(format!("debug/query_{query_id:04}.png"));
        if let Err(e) = fs::create_dir_all(path.parent().expect("has parent"))
            .map_err(|e| e.to_string())
            .and_then(|()| image.save_png(&path).map_err(|e| e.to_string()))
        {
            log::warn!("query {query_id}: debug image write failed: {e}");
        }
    }

    let started = Instant::now();
    let descriptor = compute_descriptor(&image);
    let hits = retrieve_topk(db, &descriptor, cfg.retrieval_k);
    result.retrieval = Some(phase_outcome(&hits[0].entry.pose, gt_pose, started));
    if cfg.staging == PhaseStaging::Retrieval {
        return result;
    }

    let started = Instant::now();
    let candidates: Vec<CandidateRef> = hits.iter().map(|h| CandidateRef::from(h.entry)).collect();
    let query_ctx = QueryContext { image: &image, gt_pose, gt_render: &gt_render };
    let init = run_initialization(
        &query_ctx,
        &candidates,
        &data.pipeline_scene,
        &data.intrinsics,
        &cfg.render,
        &cfg.search,
        &cfg.backend,
        query_id as u64,
    );
    let init_pose = match init {
        Ok((pose, diagnostics)) => {
            if let Some(w) = diagnostics.winner {
                if let CandidateOutcome::Searched { trace, .. } = &diagnostics.reports[w].outcome {
                    result.search = Some(SearchSummary {
                        step: trace.step,
                        selected_index: trace.selected_index,
                        losses: trace.candidates.iter().map(|c| c.loss).collect(),
                        objectives: trace.candidates.iter().map(|c| c.objective).collect(),
                    });
                }
            }
            result.initialization = Some(phase_outcome(&pose, gt_pose, started));
            pose
        }
        Err(e) => {
            result.status = format!("initialization failed: {e}");
            return result;
        }
    };
    if cfg.staging == PhaseStaging::Initialization {
        return result;
    }

    let started = Instant::now();
    match refine_pose(
        &data.pipeline_scene,
        &image,
        &init_pose,
        &data.intrinsics,
        &cfg.render,
        &cfg.refine,
    ) {
        Ok((pose, trace)) => {
            result.refinement_curve = trace
                .iterations
                .iter()
                .map(|row| CurvePoint {
                    loss: row.loss,
                    rotation_error_deg: rotation_error_deg(&row.pose.rotation, &gt_pose.rotation),
                    translation_error: translation_error(&row.pose, gt_pose),
                })
                .collect();
            result.mask_kept_fraction = Some(trace.mask_kept_fraction);
            if cfg.dump_images {
                if let Some(mask) = &trace.mask {
                    let mut img = Image::zeros(mask.width, mask.height);
                    for y in 0..mask.height {
                        for x in 0..mask.width {
                            let v = if mask.at(x, y) { 1.0 } else { 0.0 };
                            img.set_pixel(x, y, [v, v, v]);
                        }
                    }
                    let path = cfg.output_dir.join(format!("debug/mask_{query_id:04}.png"));
                    if let Err(e) = img.save_png(&path) {
                        log::warn!("query {query_id}: mask image write failed: {e}");
                    }
                }
            }
            result.refinement = Some(phase_outcome(&pose, gt_pose, started));
        }
        Err(e) => {
            result.status = format!("refinement failed: {e}");
        }
    }
    result
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub phase: String,
    pub median_rot_deg: f64,
    pub median_trans: f64,
    pub recall_loose: f64,
    pub recall_tight: f64,
    pub recall_strict: f64,
    pub n: usize,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub scenario: String,
    pub scene_diameter: f64,
    pub reference_count: usize,
    pub database_size: usize,
    pub results: Vec<LocalizationResult>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn results_jsonl(&self) -> Result<String, HarnessError> {
        let mut out = String::new();
        for r in &self.results {
            let line =
                serde_json::to_string(r).map_err(|e| HarnessError::Encode(e.to_string()))?;
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }

    /// Mean camera-center distance of the top-1 retrieved pose to ground
    /// truth; the retrieval-quality figure the augmentation ablation reads.
    pub fn mean_top1_center_distance(&self) -> Option<f64> {
        let d: Vec<f64> =
            self.results.iter().filter_map(|r| r.retrieval.as_ref()).map(|o| o.translation_error).collect();
        if d.is_empty() {
            None
        } else {
            Some(d.iter().sum::<f64>() / d.len() as f64)
        }
    }

    /// Fraction of queries whose pose passes (theta_deg, dist_frac of
    /// diameter) at each refinement iteration. Queries that stopped early
    /// hold their last pose. Empty when no query produced a curve.
    pub fn pass_rate_curve(&self, theta_deg: f64, dist_frac: f64) -> Vec<f64> {
        let curves: Vec<&Vec<CurvePoint>> = self
            .results
            .iter()
            .map(|r| &r.refinement_curve)
            .filter(|c| !c.is_empty())
            .collect();
        let max_len = curves.iter().map(|c| c.len()).max().unwrap_or(0);
        let dist = dist_frac * self.scene_diameter;
        (0..max_len)
            .map(|i| {
                let passed = curves
                    .iter()
                    .filter(|c| {
                        let p = &c[i.min(c.len() - 1)];
                        p.rotation_error_deg < theta_deg && p.translation_error < dist
                    })
                    .count();
                passed as f64 / curves.len() as f64
            })
            .collect()
    }
}

fn summarize(scenario: &str, results: &[LocalizationResult], diameter: f64) -> Vec<SummaryRow> {
    type Getter = fn(&LocalizationResult) -> Option<&PhaseOutcome>;
    let stages: [(&str, Getter); 3] = [
        ("retrieval", |r| r.retrieval.as_ref()),
        ("initialization", |r| r.initialization.as_ref()),
        ("refinement", |r| r.refinement.as_ref()),
    ];
    let mut rows = Vec::new();
    for (phase, get) in stages {
        let errors: Vec<PoseError> = results
            .iter()
            .filter_map(get)
            .map(|o| PoseError { rotation_deg: o.rotation_error_deg, translation: o.translation_error })
            .collect();
        if errors.is_empty() {
            continue;
        }
        let rots: Vec<f64> = errors.iter().map(|e| e.rotation_deg).collect();
        let trans: Vec<f64> = errors.iter().map(|e| e.translation).collect();
        let recall = |t: (f64, f64)| recall_at(&errors, t.0, t.1 * diameter).expect("non-empty");
        rows.push(SummaryRow {
            scenario: scenario.to_string(),
            phase: phase.to_string(),
            median_rot_deg: median(&rots).expect("non-empty"),
            median_trans: median(&trans).expect("non-empty"),
            recall_loose: recall(THRESHOLD_LOOSE),
            recall_tight: recall(THRESHOLD_TIGHT),
            recall_strict: recall(THRESHOLD_STRICT),
            n: errors.len(),
        });
    }
    rows
}

fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, HarnessError> {
    let n = match threads {
        Some(n) => Some(n),
        None => match std::env::var("SPLATLOC_THREADS") {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                HarnessError::Config(format!("SPLATLOC_THREADS={v:?} is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(HarnessError::Config("worker count must be >= 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))
}

pub fn run_experiment(cfg: &ExperimentConfig, scenario: &str) -> Result<ExperimentReport, HarnessError> {
    run_experiment_detailed(cfg, scenario, None, None)
}

/// [`run_experiment`] with a query-id filter (ids index the query list) and
/// an explicit worker count overriding `SPLATLOC_THREADS`.
pub fn run_experiment_detailed(
    cfg: &ExperimentConfig,
    scenario: &str,
    query_filter: Option<&[usize]>,
    threads: Option<usize>,
) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let pool = build_pool(threads)?;
    let report = pool.install(|| -> Result<ExperimentReport, HarnessError> {
        let data = prepare_data(cfg)?;
        let db = build_database(
            &data.references,
            &data.pipeline_scene,
            &data.intrinsics,
            &cfg.render,
            cfg.augment_database,
            "experiment",
        )?;

        let selected: Vec<usize> = match query_filter {
            Some(ids) => {
                for &id in ids {
                    if id >= data.query_poses.len() {
                        return Err(HarnessError::Config(format!(
                            "query id {id} out of range (have {} queries)",
                            data.query_poses.len()
                        )));
                    }
                }
                ids.to_vec()
            }
            None => (0..data.query_poses.len()).collect(),
        };

        let results: Vec<LocalizationResult> = selected
            .par_iter()
            .map(|&qid| localize_one(cfg, &data, &db, qid, &data.query_poses[qid]))
            .collect();

        let summary = summarize(scenario, &results, data.diameter);
        Ok(ExperimentReport {
            scenario: scenario.to_string(),
            scene_diameter: data.diameter,
            reference_count: data.references.len(),
            database_size: db.len(),
            results,
            summary,
        })
    })?;

    write_report(&cfg.output_dir, &report)?;
    write_summary(&cfg.output_dir, &[&report])?;
    Ok(report)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "scenario,phase,median_rot_deg,median_trans,recall_loose,recall_tight,recall_strict,n\n",
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{:.9},{:.9},{:.6},{:.6},{:.6},{}",
            r.scenario,
            r.phase,
            r.median_rot_deg,
            r.median_trans,
            r.recall_loose,
            r.recall_tight,
            r.recall_strict,
            r.n
        )
        .expect("write to string");
    }
    out
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<12} {:<15} {:>13} {:>13} {:>8} {:>8} {:>8} {:>5}\n",
        "scenario", "phase", "med_rot_deg", "med_trans", "loose", "tight", "strict", "n"
    );
    for r in rows {
        writeln!(
            out,
            "{:<12} {:<15} {:>13.6} {:>13.6} {:>8.3} {:>8.3} {:>8.3} {:>5}",
            r.scenario,
            r.phase,
            r.median_rot_deg,
            r.median_trans,
            r.recall_loose,
            r.recall_tight,
            r.recall_strict,
            r.n
        )
        .expect("write to string");
    }
    out
}

/// Pass-rate-vs-iteration table at the three benchmark thresholds.
pub fn curve_csv(report: &ExperimentReport) -> String {
    let loose = report.pass_rate_curve(THRESHOLD_LOOSE.0, THRESHOLD_LOOSE.1);
    let tight = report.pass_rate_curve(THRESHOLD_TIGHT.0, THRESHOLD_TIGHT.1);
    let strict = report.pass_rate_curve(THRESHOLD_STRICT.0, THRESHOLD_STRICT.1);
    let mut out = String::from("iteration,pass_loose,pass_tight,pass_strict\n");
    for i in 0..loose.len() {
        writeln!(out, "{},{:.6},{:.6},{:.6}", i, loose[i], tight[i], strict[i])
            .expect("write to string");
    }
    out
}

/// Writes the per-scenario files: results JSONL, pass-rate curve CSV and
/// its SVG rendering (when any query carries a refinement curve).
pub fn write_report(dir: &Path, report: &ExperimentReport) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(format!("{}_results.jsonl", report.scenario)),
        report.results_jsonl()?,
    )?;
    let strict = report.pass_rate_curve(THRESHOLD_STRICT.0, THRESHOLD_STRICT.1);
    if !strict.is_empty() {
        fs::write(dir.join(format!("{}_curve.csv", report.scenario)), curve_csv(report))?;
        let as_points = |v: &[f64]| -> Vec<(f64, f64)> {
            v.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect()
        };
        let series = [
            PlotSeries {
                label: format!("loose ({}\u{b0}, {}% diam)", THRESHOLD_LOOSE.0, THRESHOLD_LOOSE.1 * 100.0),
                points: as_points(&report.pass_rate_curve(THRESHOLD_LOOSE.0, THRESHOLD_LOOSE.1)),
            },
            PlotSeries {
                label: format!("tight ({}\u{b0}, {}% diam)", THRESHOLD_TIGHT.0, THRESHOLD_TIGHT.1 * 100.0),
                points: as_points(&report.pass_rate_curve(THRESHOLD_TIGHT.0, THRESHOLD_TIGHT.1)),
            },
            PlotSeries {
                label: format!("strict ({}\u{b0}, {}% diam)", THRESHOLD_STRICT.0, THRESHOLD_STRICT.1 * 100.0),
                points: as_points(&strict),
            },
        ];
        let svg = line_plot_svg(
            &format!("{}: pass rate vs iteration", report.scenario),
            "iteration",
            "pass rate",
            &series,
        );
        fs::write(dir.join(format!("{}_curve.svg", report.scenario)), svg)?;
    }
    Ok(())
}

/// Writes the cross-scenario summary CSV and its aligned text rendering.
pub fn write_summary(dir: &Path, reports: &[&ExperimentReport]) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let rows: Vec<SummaryRow> =
        reports.iter().flat_map(|r| r.summary.iter().cloned()).collect();
    fs::write(dir.join("summary.csv"), summary_csv(&rows))?;
    fs::write(dir.join("summary.txt"), summary_table(&rows))?;
    Ok(())
}

/// Runs the full pipeline with per-phase reporting; the summary's three
/// rows are the staging comparison.
pub fn run_phase_ablation(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let mut cfg = cfg.clone();
    cfg.staging = PhaseStaging::Refinement;
    run_experiment(&cfg, "staged")
}

#[derive(Debug)]
pub struct MaskAblation {
    pub masked: ExperimentReport,
    pub unmasked: ExperimentReport,
}

impl MaskAblation {
    /// masked / unmasked median refinement translation error; < 1 means
    /// the mask helped.
    pub fn median_translation_ratio(&self) -> Option<f64> {
        let med = |r: &ExperimentReport| {
            r.summary.iter().find(|row| row.phase == "refinement").map(|row| row.median_trans)
        };
        match (med(&self.masked), med(&self.unmasked)) {
            (Some(m), Some(u)) if u > 0.0 => Some(m / u),
            _ => None,
        }
    }
}

/// Same run twice, toggling only the reliability mask. Requires a scene
/// corruption so the mask has something to reject.
pub fn run_mask_ablation(cfg: &ExperimentConfig) -> Result<MaskAblation, HarnessError> {
    if cfg.artifacts.floater_count == 0 && cfg.artifacts.blur_region_fraction == 0.0 {
        return Err(HarnessError::Config(
            "mask ablation needs artifacts (floaters or a blur region) in the pipeline scene".into(),
        ));
    }
    let mut masked_cfg = cfg.clone();
    masked_cfg.staging = PhaseStaging::Refinement;
    masked_cfg.refine.mask_enabled = true;
    let mut unmasked_cfg = masked_cfg.clone();
    unmasked_cfg.refine.mask_enabled = false;

    let masked = run_experiment(&masked_cfg, "masked")?;
    let unmasked = run_experiment(&unmasked_cfg, "unmasked")?;
    write_summary(&cfg.output_dir, &[&masked, &unmasked])?;
    Ok(MaskAblation { masked, unmasked })
}

#[derive(Debug)]
pub struct DbaugAblation {
    pub augmented: ExperimentReport,
    pub plain: ExperimentReport,
}

/// Database augmentation on vs off. Augmentation only changes retrieval,
/// so both runs stop after phase 1.
pub fn run_dbaug_ablation(cfg: &ExperimentConfig) -> Result<DbaugAblation, HarnessError> {
    let mut aug_cfg = cfg.clone();
    aug_cfg.staging = PhaseStaging::Retrieval;
    aug_cfg.augment_database = true;
    let mut plain_cfg = aug_cfg.clone();
    plain_cfg.augment_database = false;

    let augmented = run_experiment(&aug_cfg, "augmented")?;
    let plain = run_experiment(&plain_cfg, "plain")?;
    write_summary(&cfg.output_dir, &[&augmented, &plain])?;
    Ok(DbaugAblation { augmented, plain })
}

pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn svg_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.into()
    }
}

/// Self-contained SVG line plot. No external tooling: the output files
/// must be inspectable anywhere the benchmark runs.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[PlotSeries]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const ML: f64 = 62.0;
    const MR: f64 = 16.0;
    const MT: f64 = 34.0;
    const MB: f64 = 46.0;
    const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

    let finite_points: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x0, mut x1) = finite_points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (mut y0, mut y1) = finite_points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
        (y0, y1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let sy = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        (ML + W - MR) / 2.0,
        svg_escape(title)
    );

    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let px = sx(fx);
        let py = sy(fy);
        let _ = writeln!(
            out,
            "<line x1=\"{px:.1}\" y1=\"{:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>",
            sy(y0),
            sy(y1)
        );
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" stroke=\"#ddd\"/>",
            sx(x0),
            sx(x1)
        );
        let _ = writeln!(
            out,
            "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            H - MB + 16.0,
            fmt_tick(fx)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            ML - 6.0,
            py + 4.0,
            fmt_tick(fy)
        );
    }
    let _ = writeln!(
        out,
        "<line x1=\"{ML}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        H - MB,
        W - MR,
        H - MB
    );
    let _ = writeln!(out, "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{:.1}\" stroke=\"black\"/>", H - MB);
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        (ML + W - MR) / 2.0,
        H - 10.0,
        svg_escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        svg_escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        if pts.len() == 1 {
            let xy: Vec<&str> = pts[0].split(',').collect();
            let _ = writeln!(
                out,
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>",
                xy[0], xy[1]
            );
        } else if !pts.is_empty() {
            let _ = writeln!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                pts.join(" ")
            );
        }
        let ly = MT + 14.0 * i as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"3\" fill=\"{color}\"/>",
            W - MR - 150.0,
            ly - 3.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{ly:.1}\">{}</text>",
            W - MR - 136.0,
            svg_escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}
