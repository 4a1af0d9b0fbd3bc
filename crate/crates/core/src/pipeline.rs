//! A full texturing run: the anchor views, one round of fine-tuning on them,
//! then the scheduled remaining views. Also its config file and report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::atlas::{
    coverage_stats, export_textured, project, render_textured, unpainted_faces, CoverageStats, TexelMap, TextureAtlas,
};
use crate::codec::{composite, depth_condition, encode};
use crate::denoise::{AnalyticGaussian, Conditioning, DenoiseError, Denoiser, Prompt, RemoteDenoiser, ToyArch, ToyDenoiser};
use crate::eval::{eval_consistency, EvalConfig};
use crate::finetune::{finetune_loop, Anchor, FinetuneConfig, FinetuneError, Optimizer};
use crate::geometry::{load_mesh, primitives, rasterize, viewpoint_to_camera, GeometryError, Mesh, Viewpoint, DEFAULT_FOV_DEG};
use crate::image::{to_u8, ImageIoError};
use crate::latent::Latent;
use crate::regions::{classify_regions, FactorError, RegionCounts, RegionMasks};
use crate::sched::{resample_loop, NoiseSchedule, ResampleConfig, SchedError, ScheduleKind};
use crate::synthetic::{pretrain, striped_dataset, StripeDistribution};
use crate::viewsched::{masks_coverage_ratio, ScheduleError, ScheduledView, SchedulerConfig, ViewScheduler};

pub const RUN_SCHEMA: &str = "textailor-run/1";
pub const REPORT_SCHEMA: &str = "textailor-report/1";

/// Anchor latents and their conditioning, in the output directory.
pub const ANCHORS_FILE: &str = "anchors.json";

/// Gray behind the mesh in every generated view.
pub const BACKGROUND: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("config file {path}: {msg}")]
    ConfigFile { path: String, msg: String },
    #[error(transparent)]
    Mesh(#[from] GeometryError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("backend: {0}")]
    Backend(#[from] DenoiseError),
    #[error("view {view} (az {azimuth:.1}, el {elevation:.1}): {source}")]
    View {
        view: usize,
        azimuth: f64,
        elevation: f64,
        #[source]
        source: SchedError,
    },
    #[error("view {view} (az {azimuth:.1}, el {elevation:.1}) sees nothing painted after the insertion limit")]
    ZeroCoverage { view: usize, azimuth: f64, elevation: f64 },
    #[error("fine-tuning: {0}")]
    Finetune(#[from] FinetuneError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticBackend {
    /// Target color in `[0,1]`.
    pub color: [f64; 3],
    pub sigma0: f64,
}

impl Default for AnalyticBackend {
    fn default() -> Self {
        Self {
            color: [0.2, 0.8, 0.2],
            sigma0: 1e-3,
        }
    }
}

/// Pretraining of the toy network on striped renders of an icosphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub samples: usize,
    pub data: StripeDistribution,
    /// Optimizer settings; `lambda` is ignored.
    pub train: FinetuneConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            samples: 1024,
            data: StripeDistribution::default(),
            train: FinetuneConfig {
                lambda: 0.0,
                steps: 20000,
                lr: 1e-3,
                optimizer: Optimizer::Adam,
                clip_norm: 100.0,
                seed: 1,
                ..FinetuneConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyBackend {
    /// Weights file; pretrained in-process when absent.
    pub weights: Option<PathBuf>,
    pub pretrain: PretrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteBackend {
    pub endpoint: String,
    pub guidance: Option<f64>,
}

impl Default for RemoteBackend {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8765".into(),
            guidance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Analytic(AnalyticBackend),
    Toy(ToyBackend),
    Remote(RemoteBackend),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Analytic(AnalyticBackend::default())
    }
}

impl BackendConfig {
    pub fn name(&self) -> &'static str {
        match self {
            BackendConfig::Analytic(_) => "analytic",
            BackendConfig::Toy(_) => "toy",
            BackendConfig::Remote(_) => "remote",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema: String,
    /// OBJ path, or `builtin:icosphere`, `builtin:uvsphere`, `builtin:cube`.
    pub mesh: String,
    /// Radius the mesh is scaled to after centering.
    pub mesh_radius: f64,
    pub prompt: String,
    pub backend: BackendConfig,
    pub schedule: ScheduleKind,
    pub total_steps: usize,
    pub resample: ResampleConfig,
    pub finetune: FinetuneConfig,
    pub finetune_enabled: bool,
    pub scheduler: SchedulerConfig,
    /// Leading predefined views painted before fine-tuning, without
    /// insertions.
    pub anchor_views: usize,
    pub image_size: usize,
    pub latent_factor: usize,
    pub atlas_size: usize,
    pub update_margin: f64,
    pub eval: EvalConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: RUN_SCHEMA.into(),
            mesh: "builtin:icosphere".into(),
            mesh_radius: 0.35,
            prompt: "a ball".into(),
            backend: BackendConfig::default(),
            schedule: ScheduleKind::Linear,
            total_steps: 1000,
            resample: ResampleConfig::default(),
            finetune: FinetuneConfig::default(),
            finetune_enabled: true,
            scheduler: SchedulerConfig::default(),
            anchor_views: 5,
            image_size: 64,
            latent_factor: 4,
            atlas_size: 256,
            update_margin: crate::regions::DEFAULT_UPDATE_MARGIN,
            eval: EvalConfig::default(),
            seed: 0,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| PipelineError::ConfigFile {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.schema != RUN_SCHEMA {
            return bad(format!("schema {:?}, expected {RUN_SCHEMA:?}", self.schema));
        }
        if !(self.mesh_radius > 0.0 && self.mesh_radius.is_finite()) {
            return bad(format!("mesh_radius {} must be positive", self.mesh_radius));
        }
        if self.resample.steps == 0 || self.resample.steps > self.total_steps {
            return bad(format!(
                "sampling steps {} must be in 1..={}",
                self.resample.steps, self.total_steps
            ));
        }
        if self.latent_factor == 0 || self.image_size == 0 || self.image_size % self.latent_factor != 0 {
            return bad(format!(
                "image size {} must be a positive multiple of the latent factor {}",
                self.image_size, self.latent_factor
            ));
        }
        if !self.atlas_size.is_power_of_two() {
            return bad(format!("atlas size {} is not a power of two", self.atlas_size));
        }
        if self.anchor_views > self.scheduler.predefined.len() {
            return bad(format!(
                "{} anchor views but only {} predefined views",
                self.anchor_views,
                self.scheduler.predefined.len()
            ));
        }
        self.scheduler.validate()?;
        self.finetune.validate()?;
        Ok(())
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule, PipelineError> {
        NoiseSchedule::new(self.total_steps, self.schedule)
            .and_then(|s| s.with_sampling_steps(self.resample.steps))
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    fn latent_shape(&self) -> [usize; 3] {
        let s = self.image_size / self.latent_factor;
        [3, s, s]
    }
}

/// Mesh as loaded (exported unchanged) and the copy used for rendering.
pub fn load_run_mesh(name: &str, radius: f64) -> Result<(Mesh, Mesh), PipelineError> {
    let original = match name {
        "builtin:icosphere" => primitives::icosphere(2),
        "builtin:uvsphere" => primitives::uv_sphere(32, 16),
        "builtin:cube" => primitives::cube(0.5),
        s if s.starts_with("builtin:") => return Err(PipelineError::Config(format!("unknown builtin mesh {s:?}"))),
        path => load_mesh(path)?,
    };
    let mut work = original.clone();
    work.normalize_to_unit_sphere();
    Ok((original, work.scaled(radius)))
}

/// A constructed backend. The toy network is owned so fine-tuning can
/// update it in place.
pub enum Backend {
    Analytic(AnalyticGaussian),
    Toy(Box<ToyDenoiser>),
    Remote(RemoteDenoiser),
}

impl Backend {
    pub fn from_config(cfg: &RunConfig, sched: &NoiseSchedule) -> Result<Self, PipelineError> {
        match &cfg.backend {
            BackendConfig::Analytic(a) => {
                let [c, h, w] = cfg.latent_shape();
                let mut mu = Latent::zeros([c, h, w]);
                for k in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            mu.set(k, y, x, 2.0 * a.color[k] - 1.0);
                        }
                    }
                }
                Ok(Backend::Analytic(AnalyticGaussian::new(sched.clone(), mu, a.sigma0)?))
            }
            BackendConfig::Toy(t) => {
                let net = match &t.weights {
                    Some(p) => {
                        let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                        ToyDenoiser::from_json(&text)?
                    }
                    None => pretrain_toy(cfg, sched, &t.pretrain)?,
                };
                if net.total_steps() != sched.total_steps() || net.schedule() != sched.kind() {
                    return Err(PipelineError::Config(format!(
                        "toy weights trained for {:?}/{} but the run uses {:?}/{}",
                        net.schedule(),
                        net.total_steps(),
                        sched.kind(),
                        sched.total_steps()
                    )));
                }
                Ok(Backend::Toy(Box::new(net)))
            }
            BackendConfig::Remote(r) => {
                let remote = RemoteDenoiser::new(&r.endpoint)?.with_guidance(r.guidance);
                remote.health()?;
                Ok(Backend::Remote(remote))
            }
        }
    }

    fn denoiser(&self) -> &dyn Denoiser {
        match self {
            Backend::Analytic(a) => a,
            Backend::Toy(t) => t.as_ref(),
            Backend::Remote(r) => r,
        }
    }
}

/// Pretrains the toy network on striped renders at the run's resolution.
pub fn pretrain_toy(cfg: &RunConfig, sched: &NoiseSchedule, p: &PretrainConfig) -> Result<ToyDenoiser, PipelineError> {
    let mesh = primitives::icosphere(2).scaled(cfg.mesh_radius);
    let prompt = Prompt::from_text(&cfg.prompt);
    let data = striped_dataset(&mesh, p.samples, cfg.image_size, cfg.latent_factor, &p.data, &prompt, p.train.seed);
    let (net, _) = pretrain(ToyArch::default(), sched, &data, &p.train)?;
    Ok(net)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub index: usize,
    pub viewpoint: Viewpoint,
    pub inserted: bool,
    pub predefined_index: usize,
    pub anchor: bool,
    pub p: Option<f64>,
    pub p_first: Option<f64>,
    pub depth_limited: bool,
    pub regions: RegionCounts,
    pub unknown_cells: usize,
    pub texels_written: usize,
    pub texels_filled: usize,
    pub seed: u64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub performed: bool,
    pub note: String,
    pub anchors: usize,
    pub summary: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub version: String,
    pub backend: String,
    pub views: Vec<ViewRecord>,
    pub finetune: FinetuneRecord,
    pub coverage: CoverageStats,
    pub uncovered_faces: Vec<usize>,
    pub consistency: f64,
    pub config: RunConfig,
    pub elapsed_ms: f64,
}

impl RunReport {
    /// Copy with every timing field zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.elapsed_ms = 0.0;
        r.views.iter_mut().for_each(|v| v.elapsed_ms = 0.0);
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub struct RunOutput {
    pub report: RunReport,
    pub atlas: TextureAtlas,
    /// The mesh as rendered (centered and scaled).
    pub mesh: Mesh,
}

/// Per-view sampler seed.
pub fn view_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Painter<'a> {
    cfg: &'a RunConfig,
    mesh: &'a Mesh,
    texels: TexelMap,
    atlas: TextureAtlas,
    sched: NoiseSchedule,
    prompt: Prompt,
    views_dir: Option<PathBuf>,
    records: Vec<ViewRecord>,
    anchors: Vec<Anchor>,
}

impl<'a> Painter<'a> {
    fn new(
        cfg: &'a RunConfig,
        mesh: &'a Mesh,
        sched: NoiseSchedule,
        views_dir: Option<PathBuf>,
    ) -> Result<Self, PipelineError> {
        Ok(Self {
            cfg,
            mesh,
            texels: TexelMap::build(mesh, cfg.atlas_size),
            atlas: TextureAtlas::new(cfg.atlas_size).map_err(PipelineError::Config)?,
            sched,
            prompt: Prompt::from_text(&cfg.prompt),
            views_dir,
            records: Vec::new(),
            anchors: Vec::new(),
        })
    }

    fn camera(&self, v: &Viewpoint) -> crate::geometry::Camera {
        viewpoint_to_camera(v, (self.cfg.image_size, self.cfg.image_size), DEFAULT_FOV_DEG)
    }

    fn masks_at(&self, v: &Viewpoint) -> Result<RegionMasks, PipelineError> {
        let cam = self.camera(v);
        let buf = rasterize(self.mesh, &cam);
        Ok(classify_regions(
            self.mesh,
            &buf,
            &self.atlas,
            &cam,
            self.cfg.update_margin,
            self.cfg.latent_factor,
        )?)
    }

    /// Paints one view. Without a denoiser the unknown cells are filled with
    /// the background gray, which exercises the same geometry.
    fn paint(&mut self, den: Option<&dyn Denoiser>, sv: ScheduledView, anchor: bool) -> Result<(), PipelineError> {
        let start = Instant::now();
        let index = self.records.len();
        let v = sv.viewpoint;
        let view_err = |source| PipelineError::View {
            view: index,
            azimuth: v.azimuth,
            elevation: v.elevation,
            source,
        };
        if sv.depth_limited && sv.p == Some(0.0) {
            return Err(PipelineError::ZeroCoverage {
                view: index,
                azimuth: v.azimuth,
                elevation: v.elevation,
            });
        }
        let f = self.cfg.latent_factor;
        let cam = self.camera(&v);
        let buf = rasterize(self.mesh, &cam);
        let masks = classify_regions(self.mesh, &buf, &self.atlas, &cam, self.cfg.update_margin, f)?;
        let rendered = render_textured(self.mesh, &self.atlas, &buf, [to_u8(BACKGROUND); 3]);
        let cond = Conditioning {
            prompt: self.prompt.clone(),
            depth: depth_condition(&buf, f),
        };
        let seed = view_seed(self.cfg.seed, index);
        let known = encode(&rendered, f);
        let z0 = match den {
            Some(den) => resample_loop(
                den,
                &known,
                &masks.latent_mask,
                &cond,
                &self.sched,
                &self.cfg.resample,
                seed,
            )
            .map_err(view_err)?,
            None => Latent::filled(known.shape(), 2.0 * BACKGROUND - 1.0),
        };
        let image = composite(&rendered, &z0, &masks.latent_mask, f);
        let stats = project(&mut self.atlas, self.mesh, &self.texels, &image, &buf, &masks, &cam);
        if let Some(dir) = &self.views_dir {
            image.save_png(dir.join(format!("{index:02}.png")))?;
            masks.debug_image().save_png(dir.join(format!("{index:02}_regions.png")))?;
        }
        if anchor {
            self.anchors.push(Anchor {
                z0: encode(&image, f),
                cond,
            });
        }
        self.records.push(ViewRecord {
            index,
            viewpoint: v,
            inserted: sv.inserted,
            predefined_index: sv.predefined_index,
            anchor,
            p: sv.p,
            p_first: sv.p_first,
            depth_limited: sv.depth_limited,
            regions: masks.counts(),
            unknown_cells: masks.latent_mask.count_unknown(),
            texels_written: stats.scattered,
            texels_filled: stats.filled,
            seed,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        log::info!(
            "view {index:2} az {:6.1} el {:6.1}{} p={} new={} written={}",
            v.azimuth,
            v.elevation,
            if sv.inserted { " (inserted)" } else { "" },
            sv.p.map_or("-".into(), |p| format!("{p:.3}")),
            masks.counts().new,
            stats.scattered + stats.filled
        );
        Ok(())
    }
}

/// The three phases over `painter`; returns what fine-tuning did. Without
/// a backend this is a dry run.
fn paint_all(painter: &mut Painter, mut backend: Option<&mut Backend>) -> Result<FinetuneRecord, PipelineError> {
    // Anchors in order, never interrupted by insertions.
    let cfg = painter.cfg;
    let predefined = &cfg.scheduler.predefined;
    for (i, v) in predefined.iter().take(cfg.anchor_views).enumerate() {
        let p = (i > 0).then(|| painter.masks_at(v).map(|m| masks_coverage_ratio(&m))).transpose()?;
        let sv = ScheduledView {
            viewpoint: *v,
            inserted: false,
            predefined_index: i,
            p,
            p_first: p,
            depth_limited: false,
        };
        painter.paint(backend.as_deref().map(Backend::denoiser), sv, true)?;
    }

    let finetune = match (backend.as_deref_mut(), cfg.finetune_enabled) {
        (_, false) => FinetuneRecord {
            performed: false,
            note: "disabled".into(),
            anchors: painter.anchors.len(),
            summary: None,
        },
        (Some(Backend::Toy(net)), true) if !painter.anchors.is_empty() => {
            let log = finetune_loop(net.as_mut(), &painter.anchors, &painter.sched, &cfg.finetune)?;
            if let Some(out) = &cfg.out {
                let p = out.join("training.csv");
                log.write_csv(&p).map_err(io_err(&p))?;
            }
            FinetuneRecord {
                performed: true,
                note: "once, after the anchor views".into(),
                anchors: painter.anchors.len(),
                summary: Some(log.summary(50)),
            }
        }
        (b, true) => {
            let note = match b {
                Some(Backend::Toy(_)) => "no anchor views".to_string(),
                Some(_) => format!("skipped: {} backend is not trainable", cfg.backend.name()),
                None => "skipped: dry run".to_string(),
            };
            log::info!("fine-tuning {note}");
            FinetuneRecord {
                performed: false,
                note,
                anchors: painter.anchors.len(),
                summary: None,
            }
        }
    };

    let rest = SchedulerConfig {
        predefined: predefined[cfg.anchor_views..].to_vec(),
        ..cfg.scheduler.clone()
    };
    if !rest.predefined.is_empty() {
        let prev = painter.records.last().map(|r| r.viewpoint);
        let mut sched_views = ViewScheduler::resume_after(rest, prev)?;
        while let Some(mut sv) = sched_views.next_view(|v| painter.masks_at(v))? {
            sv.predefined_index += cfg.anchor_views;
            painter.paint(backend.as_deref().map(Backend::denoiser), sv, false)?;
        }
    }
    Ok(finetune)
}

/// The view sequence a run with `cfg` would paint, computed without a
/// backend. Coverage depends only on geometry, so the viewpoints, insertions
/// and `p` values match the real run.
pub fn plan_views(cfg: &RunConfig) -> Result<Vec<ViewRecord>, PipelineError> {
    cfg.validate()?;
    let (_, mesh) = load_run_mesh(&cfg.mesh, cfg.mesh_radius)?;
    let mut painter = Painter::new(cfg, &mesh, cfg.noise_schedule()?, None)?;
    paint_all(&mut painter, None)?;
    Ok(painter.records)
}

/// Reads the anchor latents a run wrote to its output directory.
pub fn load_anchors(path: impl AsRef<Path>) -> Result<Vec<Anchor>, PipelineError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::ConfigFile {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Loads the mesh and backend named by `cfg` and runs the pipeline.
pub fn run_texturing(cfg: &RunConfig) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let sched = cfg.noise_schedule()?;
    let backend = Backend::from_config(cfg, &sched)?;
    run_with_backend(cfg, backend)
}

/// Runs the pipeline with an already constructed backend.
pub fn run_with_backend(cfg: &RunConfig, mut backend: Backend) -> Result<RunOutput, PipelineError> {
    let start = Instant::now();
    cfg.validate()?;
    let sched = cfg.noise_schedule()?;
    let (original, mesh) = load_run_mesh(&cfg.mesh, cfg.mesh_radius)?;
    let views_dir = match &cfg.out {
        Some(out) => {
            let d = out.join("views");
            std::fs::create_dir_all(&d).map_err(io_err(&d))?;
            Some(d)
        }
        None => None,
    };
    let mut painter = Painter::new(cfg, &mesh, sched, views_dir)?;
    let finetune = paint_all(&mut painter, Some(&mut backend))?;
    if let Some(out) = &cfg.out {
        let p = out.join(ANCHORS_FILE);
        let text = serde_json::to_string(&painter.anchors).expect("anchors serialize");
        std::fs::write(&p, text).map_err(io_err(&p))?;
    }

    let atlas = painter.atlas;
    let coverage = coverage_stats(&atlas, &mesh, &painter.texels);
    let uncovered = if coverage.painted_texel_fraction < 0.99 {
        let faces = unpainted_faces(&atlas, &painter.texels, mesh.faces.len());
        log::warn!(
            "atlas coverage {:.3}; {} faces have unpainted texels",
            coverage.painted_texel_fraction,
            faces.len()
        );
        faces
    } else {
        Vec::new()
    };
    let consistency = eval_consistency(&mesh, &atlas, &cfg.eval);
    let report = RunReport {
        schema: REPORT_SCHEMA.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        backend: cfg.backend.name().into(),
        views: painter.records,
        finetune,
        coverage,
        uncovered_faces: uncovered,
        consistency,
        config: cfg.clone(),
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    if let Some(out) = &cfg.out {
        export_textured(out, &original, &atlas)?;
        let p = out.join("report.json");
        std::fs::write(&p, report.to_json()).map_err(io_err(&p))?;
    }
    Ok(RunOutput { report, atlas, mesh })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> RunConfig {
        RunConfig {
            resample: ResampleConfig { repeats: 1, steps: 10 },
            eval: EvalConfig {
                n_per_hemisphere: 6,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn config_round_trips_and_fills_defaults() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial: RunConfig =
            serde_json::from_str(r#"{"seed": 9, "backend": {"kind": "toy"}, "resample": {"repeats": 0}}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.resample.steps, 30);
        assert_eq!(partial.backend, BackendConfig::Toy(ToyBackend::default()));
        partial.validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let cases = [
            RunConfig { schema: "other/1".into(), ..quick() },
            RunConfig { image_size: 62, ..quick() },
            RunConfig { atlas_size: 100, ..quick() },
            RunConfig { anchor_views: 40, ..quick() },
            RunConfig { resample: ResampleConfig { repeats: 3, steps: 0 }, ..quick() },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn view_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..100).map(|i| view_seed(7, i)).collect();
        assert_eq!(s.len(), 100);
        assert_ne!(view_seed(7, 0), view_seed(8, 0));
    }

    #[test]
    fn analytic_run_paints_target_color() {
        let out = run_texturing(&quick()).unwrap();
        let r = &out.report;
        assert_eq!(r.views.iter().filter(|v| v.anchor).count(), 5);
        assert!(!r.finetune.performed);
        let target = [0.2, 0.8, 0.2].map(to_u8);
        for t in 0..out.atlas.size() * out.atlas.size() {
            if out.atlas.is_painted(t) {
                let c = out.atlas.texel(t);
                for k in 0..3 {
                    assert!((c[k] as i32 - target[k] as i32).abs() <= 2, "texel {t}: {c:?}");
                }
            }
        }
        assert!(r.consistency < 0.01, "{}", r.consistency);
        assert!(r.coverage.painted_texel_fraction >= 0.99, "{:?}", r.coverage);
    }

    #[test]
    fn dry_run_plans_the_same_views() {
        let cfg = quick();
        let run = run_texturing(&cfg).unwrap().report.without_timing().views;
        let mut plan = plan_views(&cfg).unwrap();
        plan.iter_mut().for_each(|v| v.elapsed_ms = 0.0);
        assert_eq!(plan, run);
        // Every predefined view exactly once, in order.
        let pre: Vec<usize> = plan.iter().filter(|v| !v.inserted).map(|v| v.predefined_index).collect();
        assert_eq!(pre, (0..cfg.scheduler.predefined.len()).collect::<Vec<_>>());
        for (v, want) in plan.iter().filter(|v| !v.inserted).zip(&cfg.scheduler.predefined) {
            assert_eq!(&v.viewpoint, want);
        }
    }
}
