use std::path::PathBuf;
use std::process::ExitCode;

use asbuilt_core::geometry::{PixelPoint, Vec3};
use asbuilt_core::spatial::KeyframeId;
use asbuilt_core::synthetic::FacadeSpec;
use asbuilt_pipeline::commands;
use asbuilt_pipeline::error::{PipelineError, Result};
use asbuilt_pipeline::fixture;
use asbuilt_pipeline::formats;
use asbuilt_pipeline::project::{Overrides, Project, RegistrationClicks};
use asbuilt_pipeline::service::{self, AppState};
use clap::{Parser, Subcommand};
use serde::Serialize;

/// Register a SLAM keyframe map to a CAD model, then query, measure and
/// texture it.
#[derive(Debug, Parser)]
#[command(name = "asbuilt", version)]
struct Cli {
    /// Project directory.
    #[arg(long, global = true, default_value = ".")]
    project: PathBuf,
    /// Seed for randomized stages; overrides the project configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file overlaid onto the project configuration.
    #[arg(long, global = true, env = "ASBUILT_CONFIG")]
    config: Option<PathBuf>,
    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic facade project into --project.
    Fixture {
        #[arg(long, default_value_t = 3)]
        rows: usize,
        #[arg(long, default_value_t = 5)]
        cols: usize,
    },
    /// Register the first keyframe from four model/image click pairs.
    Register {
        /// JSON file with `model`, `image` and optional keyframe ids.
        #[arg(long)]
        clicks: PathBuf,
        #[arg(long)]
        first: Option<KeyframeId>,
        #[arg(long)]
        second: Option<KeyframeId>,
    },
    /// Move the map into the model frame.
    Align,
    /// Extract planes from the aligned map.
    FitPlanes,
    /// Find the keyframe for a click on the model.
    Query {
        /// Ray origin as x,y,z.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        origin: Vec3,
        /// Ray direction as x,y,z.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        direction: Vec3,
    },
    /// Distance between two pixels of a keyframe, in meters.
    Measure {
        #[arg(long)]
        keyframe: KeyframeId,
        /// First pixel as u,v.
        #[arg(long, value_parser = parse_pixel, allow_hyphen_values = true)]
        p1: PixelPoint,
        /// Second pixel as u,v.
        #[arg(long, value_parser = parse_pixel, allow_hyphen_values = true)]
        p2: PixelPoint,
    },
    /// Build the textured model under textures/.
    Texture,
    /// Statistics for a measurement CSV (raw records or sample summaries).
    Eval {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn parse_floats<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts.try_into().map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    parse_floats::<3>(s).map(Vec3::from)
}

fn parse_pixel(s: &str) -> std::result::Result<PixelPoint, String> {
    parse_floats::<2>(s).map(|[u, v]| PixelPoint::new(u, v))
}

fn emit<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    match out {
        Some(path) => formats::write_json(path, value),
        None => {
            use std::io::Write;
            let text = serde_json::to_string_pretty(value).expect("results serialize");
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(PipelineError::Io { path: PathBuf::from("<stdout>"), message: e.to_string() })
                }
                _ => Ok(()),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides { config_file: cli.config.clone(), seed: cli.seed };
    let load = || Project::load(&cli.project, &overrides);
    match cli.command {
        Command::Fixture { rows, cols } => {
            let spec = FacadeSpec { window_rows: rows, window_cols: cols, ..Default::default() };
            let spec = FacadeSpec { seed: cli.seed.unwrap_or(spec.seed), ..spec };
            emit(&cli.out, &fixture::write_fixture(&cli.project, spec)?)
        }
        Command::Register { clicks, first, second } => {
            let mut c: RegistrationClicks = formats::read_json(&clicks)?;
            c.first_keyframe = first.or(c.first_keyframe);
            c.second_keyframe = second.or(c.second_keyframe);
            emit(&cli.out, &commands::register(&mut load()?, &c)?)
        }
        Command::Align => emit(&cli.out, &commands::align(&mut load()?)?),
        Command::FitPlanes => emit(&cli.out, &commands::fit_planes(&mut load()?)?),
        Command::Query { origin, direction } => {
            let db = load()?.database()?;
            emit(&cli.out, &commands::query(&db, origin, direction)?)
        }
        Command::Measure { keyframe, p1, p2 } => emit(&cli.out, &commands::measure(&load()?, keyframe, p1, p2)?),
        Command::Texture => emit(&cli.out, &commands::texture(&mut load()?)?),
        Command::Eval { csv, alpha } => {
            // eval needs no project, but honours its configured alpha when present
            let alpha = match alpha {
                Some(a) => a,
                None => load().map(|p| p.config.alpha).unwrap_or(0.01),
            };
            emit(&cli.out, &commands::eval(&formats::read_eval_csv(&csv)?, alpha)?)
        }
        Command::Serve { addr } => {
            let state = AppState::new(&cli.project, overrides)?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| PipelineError::Io { path: PathBuf::new(), message: e.to_string() })?;
            runtime
                .block_on(async {
                    let listener = tokio::net::TcpListener::bind(&addr).await?;
                    eprintln!("listening on http://{}", listener.local_addr()?);
                    service::serve(listener, state).await
                })
                .map_err(|e| PipelineError::Io { path: PathBuf::from(addr), message: e.to_string() })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.body()).expect("error bodies serialize"));
            ExitCode::FAILURE
        }
    }
}
