use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use textailor::atlas::{render_textured, TextureAtlas};
use textailor::denoise::ToyDenoiser;
use textailor::eval::eval_consistency;
use textailor::finetune::{finetune_loop, mean_preserve, param_distance};
use textailor::geometry::{rasterize, viewpoint_to_camera, Viewpoint, DEFAULT_FOV_DEG};
use textailor::image::to_u8;
use textailor::pipeline::{
    load_anchors, load_run_mesh, plan_views, pretrain_toy, run_texturing, AnalyticBackend, BackendConfig,
    RemoteBackend, RunConfig, RunReport, ToyBackend, ANCHORS_FILE, BACKGROUND,
};

#[derive(Debug, Parser)]
#[command(name = "textailor", version, about = "Paint an untextured mesh view by view with a diffusion denoiser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Texture a mesh: anchor views, fine-tuning, scheduled views.
    Run(RunArgs),
    /// Render an atlas onto the mesh from the run's views or given ones.
    Render(RenderArgs),
    /// Print the view-consistency score of an atlas.
    Eval(EvalArgs),
    /// Fine-tune toy weights on a run's anchor latents.
    Finetune(FinetuneArgs),
    /// Print the view sequence a run would paint, without texturing.
    Schedule(ScheduleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendKind {
    Analytic,
    Toy,
    Remote,
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Debug, Args)]
struct Overrides {
    /// JSON run config ("textailor-run/1").
    #[arg(long)]
    config: Option<PathBuf>,
    /// OBJ path or builtin:icosphere / builtin:uvsphere / builtin:cube.
    #[arg(long)]
    mesh: Option<String>,
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Endpoint of the remote backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Toy weights file.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Resampling repetitions per step.
    #[arg(long, value_name = "R")]
    resample: Option<usize>,
    /// Preservation weight of fine-tuning.
    #[arg(long)]
    lambda: Option<f64>,
    /// Coverage threshold below which a view is inserted.
    #[arg(long)]
    beta: Option<f64>,
    /// Interpolation weight of inserted views.
    #[arg(long)]
    gamma: Option<f64>,
    /// Sampling steps.
    #[arg(long, value_name = "S")]
    steps: Option<usize>,
}

impl Overrides {
    /// Config file (or `fallback`), then the flags.
    fn resolve(&self, fallback: Option<RunConfig>) -> Result<RunConfig, String> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(|e| e.to_string())?,
            None => fallback.unwrap_or_default(),
        };
        if let Some(m) = &self.mesh {
            cfg.mesh = m.clone();
        }
        if let Some(p) = &self.prompt {
            cfg.prompt = p.clone();
        }
        if let Some(kind) = self.backend {
            let same = matches!(
                (kind, &cfg.backend),
                (BackendKind::Analytic, BackendConfig::Analytic(_))
                    | (BackendKind::Toy, BackendConfig::Toy(_))
                    | (BackendKind::Remote, BackendConfig::Remote(_))
            );
            if !same {
                cfg.backend = match kind {
                    BackendKind::Analytic => BackendConfig::Analytic(AnalyticBackend::default()),
                    BackendKind::Toy => BackendConfig::Toy(ToyBackend::default()),
                    BackendKind::Remote => BackendConfig::Remote(RemoteBackend::default()),
                };
            }
        }
        match (&mut cfg.backend, &self.endpoint) {
            (BackendConfig::Remote(r), Some(e)) => r.endpoint = e.clone(),
            (_, Some(_)) => return Err("--endpoint needs the remote backend".into()),
            _ => {}
        }
        match (&mut cfg.backend, &self.weights) {
            (BackendConfig::Toy(t), Some(w)) => t.weights = Some(w.clone()),
            (_, Some(_)) => return Err("--weights needs the toy backend".into()),
            _ => {}
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.resample {
            cfg.resample.repeats = r;
        }
        if let Some(s) = self.steps {
            cfg.resample.steps = s;
        }
        if let Some(l) = self.lambda {
            cfg.finetune.lambda = l;
        }
        if let Some(b) = self.beta {
            cfg.scheduler.beta = b;
        }
        if let Some(g) = self.gamma {
            cfg.scheduler.gamma = g;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    o: Overrides,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[command(flatten)]
    o: Overrides,
    /// Output directory of an earlier run; supplies config and atlas.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    atlas: Option<PathBuf>,
    /// A view as AZ,EL in degrees (repeatable); default the predefined views.
    #[arg(long = "view", value_name = "AZ,EL", value_parser = parse_view)]
    views: Vec<(f64, f64)>,
    /// Image side in pixels; default the run's image size.
    #[arg(long)]
    size: Option<usize>,
    /// Where the renders go.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    o: Overrides,
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    atlas: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[command(flatten)]
    o: Overrides,
    /// Output directory of an earlier run; supplies config and anchors.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Anchor latents written by a run.
    #[arg(long)]
    anchors: Option<PathBuf>,
    /// Where weights.json and training.csv go.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[command(flatten)]
    o: Overrides,
    /// Print the plan as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn parse_view(s: &str) -> Result<(f64, f64), String> {
    let (a, e) = s.split_once(',').ok_or("expected AZ,EL")?;
    let a = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let e = e.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((a, e))
}

/// Config echoed in an earlier run's report.
fn run_config(dir: Option<&Path>) -> Result<Option<RunConfig>, String> {
    let Some(dir) = dir else { return Ok(None) };
    let p = dir.join("report.json");
    let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?;
    Ok(Some(report.config))
}

fn atlas_path(run: Option<&Path>, atlas: Option<&PathBuf>) -> Result<PathBuf, String> {
    match (atlas, run) {
        (Some(a), _) => Ok(a.clone()),
        (None, Some(r)) => Ok(r.join("atlas.png")),
        (None, None) => Err("give --atlas or --run".into()),
    }
}

fn cmd_run(a: RunArgs) -> Result<(), String> {
    let mut cfg = a.o.resolve(None)?;
    cfg.out = Some(a.out.or(cfg.out.take()).unwrap_or_else(|| PathBuf::from("out")));
    let out = run_texturing(&cfg).map_err(|e| e.to_string())?;
    let r = &out.report;
    println!(
        "painted {} views ({} inserted), coverage {:.4}, consistency {:.6}",
        r.views.len(),
        r.views.iter().filter(|v| v.inserted).count(),
        r.coverage.painted_texel_fraction,
        r.consistency
    );
    if !r.uncovered_faces.is_empty() {
        eprintln!("warning: {} faces have unpainted texels", r.uncovered_faces.len());
    }
    println!("wrote {}", cfg.out.as_ref().expect("set above").display());
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<(), String> {
    let cfg = a.o.resolve(run_config(a.run.as_deref())?)?;
    let (_, mesh) = load_run_mesh(&cfg.mesh, cfg.mesh_radius).map_err(|e| e.to_string())?;
    let atlas = TextureAtlas::load_png(atlas_path(a.run.as_deref(), a.atlas.as_ref())?).map_err(|e| e.to_string())?;
    let views = if a.views.is_empty() {
        cfg.scheduler.predefined.clone()
    } else {
        let r = cfg.scheduler.predefined.first().map_or(1.0, |v| v.radius);
        a.views
            .iter()
            .map(|&(az, el)| Viewpoint::new(az, el, r).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?
    };
    let size = a.size.unwrap_or(cfg.image_size);
    std::fs::create_dir_all(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    for (i, v) in views.iter().enumerate() {
        let cam = viewpoint_to_camera(v, (size, size), DEFAULT_FOV_DEG);
        let buf = rasterize(&mesh, &cam);
        let img = render_textured(&mesh, &atlas, &buf, [to_u8(BACKGROUND); 3]);
        let p = a.out.join(format!("{i:02}.png"));
        img.save_png(&p).map_err(|e| e.to_string())?;
        println!("{} az {:.1} el {:.1}", p.display(), v.azimuth, v.elevation);
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), String> {
    let cfg = a.o.resolve(run_config(a.run.as_deref())?)?;
    let (_, mesh) = load_run_mesh(&cfg.mesh, cfg.mesh_radius).map_err(|e| e.to_string())?;
    let atlas = TextureAtlas::load_png(atlas_path(a.run.as_deref(), a.atlas.as_ref())?).map_err(|e| e.to_string())?;
    println!("{:.6}", eval_consistency(&mesh, &atlas, &cfg.eval));
    Ok(())
}

fn cmd_finetune(a: FinetuneArgs) -> Result<(), String> {
    let mut fallback = run_config(a.run.as_deref())?;
    if let Some(c) = fallback.as_mut() {
        // A finished run's backend may be anything; fine-tuning needs the toy.
        if !matches!(c.backend, BackendConfig::Toy(_)) {
            c.backend = BackendConfig::Toy(ToyBackend::default());
        }
    }
    let cfg = a.o.resolve(fallback)?;
    let BackendConfig::Toy(toy) = &cfg.backend else {
        return Err("fine-tuning needs the toy backend".into());
    };
    let anchors_path = match (&a.anchors, &a.run) {
        (Some(p), _) => p.clone(),
        (None, Some(r)) => r.join(ANCHORS_FILE),
        (None, None) => return Err("give --anchors or --run".into()),
    };
    let anchors = load_anchors(&anchors_path).map_err(|e| e.to_string())?;
    if anchors.is_empty() {
        return Err(format!("{}: no anchors", anchors_path.display()));
    }
    let sched = cfg.noise_schedule().map_err(|e| e.to_string())?;
    let mut net = match &toy.weights {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            ToyDenoiser::from_json(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => {
            log::info!("no --weights; pretraining the toy network");
            pretrain_toy(&cfg, &sched, &toy.pretrain).map_err(|e| e.to_string())?
        }
    };
    let frozen = net.clone();
    let log = finetune_loop(&mut net, &anchors, &sched, &cfg.finetune).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    let w = a.out.join("weights.json");
    std::fs::write(&w, net.to_json()).map_err(|e| format!("{}: {e}", w.display()))?;
    let csv = a.out.join("training.csv");
    log.write_csv(&csv).map_err(|e| format!("{}: {e}", csv.display()))?;
    let preserve = mean_preserve(&net, &frozen, &anchors, &sched, 256, cfg.finetune.seed ^ 0xe7a1)
        .map_err(|e| e.to_string())?;
    let summary = serde_json::json!({
        "anchors": anchors.len(),
        "lambda": cfg.finetune.lambda,
        "drift": param_distance(net.params(), frozen.params()),
        "loss_preserve": preserve,
        "log": log.summary(50),
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn cmd_schedule(a: ScheduleArgs) -> Result<(), String> {
    let cfg = a.o.resolve(None)?;
    let plan = plan_views(&cfg).map_err(|e| e.to_string())?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&plan).expect("plan serializes"));
        return Ok(());
    }
    println!("  #  kind        pre     az     el      p  p_first  new");
    for v in &plan {
        let kind = match (v.anchor, v.inserted) {
            (true, _) => "anchor",
            (false, true) => "inserted",
            (false, false) => "predefined",
        };
        let p = |x: Option<f64>| x.map_or("     -".into(), |x| format!("{x:6.3}"));
        println!(
            "{:3}  {:10} {:4} {:6.1} {:6.1} {} {}{} {:5}",
            v.index,
            kind,
            v.predefined_index,
            v.viewpoint.azimuth,
            v.viewpoint.elevation,
            p(v.p),
            p(v.p_first),
            if v.depth_limited { "*" } else { " " },
            v.regions.new,
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Schedule(a) => cmd_schedule(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
