use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use textailor::denoise::ToyDenoiser;
use textailor::sched::{NoiseSchedule, ScheduleKind};
use textailor_server::{serve, AppState, Model, ServerConfig, DEFAULT_MAX_ELEMENTS};
use tokio::net::TcpListener;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendKind {
    Echo,
    Analytic,
    Toy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Schedule {
    Linear,
    Cosine,
}

/// Serve a local denoise backend over the textailor HTTP protocol.
#[derive(Debug, Parser)]
#[command(name = "textailor-serve", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8765")]
    addr: SocketAddr,
    #[arg(long, value_enum, default_value = "analytic")]
    backend: BackendKind,
    /// Toy weights file (required for --backend toy).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Flat target color of the analytic backend, as r,g,b in [0,1].
    #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0.2,0.8,0.2")]
    color: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    sigma0: f64,
    #[arg(long, value_enum, default_value = "linear")]
    schedule: Schedule,
    #[arg(long, default_value_t = 1000)]
    total_steps: usize,
    /// Largest accepted C*h*w.
    #[arg(long, default_value_t = DEFAULT_MAX_ELEMENTS)]
    max_elements: usize,
}

fn load(args: &Args) -> Result<Model, String> {
    match args.backend {
        BackendKind::Echo => Ok(Model::echo()),
        BackendKind::Analytic => {
            let kind = match args.schedule {
                Schedule::Linear => ScheduleKind::Linear,
                Schedule::Cosine => ScheduleKind::Cosine,
            };
            let sched = NoiseSchedule::new(args.total_steps, kind).map_err(|e| e.to_string())?;
            let color = [args.color[0], args.color[1], args.color[2]];
            Model::analytic(sched, color, args.sigma0).map_err(|e| e.to_string())
        }
        BackendKind::Toy => {
            let path = args.weights.as_ref().ok_or("--backend toy needs --weights")?;
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let net = ToyDenoiser::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            Ok(Model::toy(net))
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let cfg = ServerConfig {
        max_elements: args.max_elements,
        fault: None,
    };
    let state = AppState::loading(cfg);
    let listener = match TcpListener::bind(args.addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {}: {e}", args.addr);
            return ExitCode::FAILURE;
        }
    };
    log::info!("listening on http://{}", args.addr);

    // Answer 503 while the weights load.
    let loader = {
        let state = state.clone();
        tokio::task::spawn_blocking(move || load(&args).map(|m| state.install(m)))
    };
    let server = tokio::spawn(serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    }));
    match loader.await {
        Ok(Ok(())) => log::info!("model ready"),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
        Err(e) => {
            eprintln!("error: loader failed: {e}");
            return ExitCode::FAILURE;
        }
    }
    match server.await {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
