use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use covergraph_cli::commands::{self, Cut, Method, Protocol, RunArgs, ScoresArg};
use covergraph_cli::config::{ConfigFile, Overrides, Settings};
use covergraph_core::workspace::ScoreColumn;
use covergraph_core::{CollapseMode, Linkage, Workspace};

#[derive(Parser)]
#[command(name = "covergraph", version, about = "Ensemble cover-version identification")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Workspace directory [default: ./workspace]
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// TOML file with engine settings; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    logistic_midpoint: Option<f64>,
    #[arg(long, global = true)]
    logistic_scale: Option<f64>,
    /// Penalty per intermediate track in the graph collapse
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true, value_parser = parse_linkage)]
    linkage: Option<Linkage>,
    #[arg(long, global = true, value_parser = parse_mode)]
    collapse_mode: Option<CollapseMode>,
    #[arg(long, global = true)]
    max_sweeps: Option<usize>,
    /// Seed for synthetic works
    #[arg(long, global = true)]
    seed: Option<u64>,
}

fn parse_linkage(s: &str) -> Result<Linkage, String> {
    s.parse().map_err(|e: covergraph_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<CollapseMode, String> {
    s.parse().map_err(|e: covergraph_core::Error| e.to_string())
}

fn parse_column(s: &str) -> Result<ScoreColumn, String> {
    s.parse().map_err(|e: covergraph_core::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline for one work into the workspace
    Run {
        /// Work manifest (JSON)
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Score CSV path, `synth`, or `features`
        #[arg(long, default_value = "synth")]
        scores: ScoresArg,
        /// Feature directory for `--scores features` [default: <manifest dir>/features]
        #[arg(long)]
        features_dir: Option<PathBuf>,
    },
    /// Write ranking/classification reports for every labeled work
    Evaluate {
        #[arg(long, value_enum, default_value = "both")]
        protocol: Protocol,
        #[arg(long, value_enum, default_value = "both")]
        method: Method,
    },
    /// Error counts at every candidate threshold, as CSV
    Sweep {
        work_id: String,
        #[arg(long, default_value = "ensemble", value_parser = parse_column)]
        column: ScoreColumn,
    },
    /// Traced path from the reference to a track
    Path { work_id: String, track_id: String },
    /// Flat clusters at a dendrogram height or an ensemble score
    Clusters {
        work_id: String,
        /// Cut height in distance units
        #[arg(long, conflicts_with = "score", required_unless_present = "score")]
        threshold: Option<f64>,
        /// Cut on the ensemble score scale (0-100)
        #[arg(long)]
        score: Option<f64>,
    },
    /// Serve the workspace over HTTP
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Write a synthetic labeled work (manifest + scores) to a directory
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        positive_fraction: Option<f64>,
        #[arg(long)]
        work_id: Option<String>,
    },
}

fn settings(global: &GlobalArgs) -> Result<Settings> {
    let file = match &global.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let overrides = Overrides {
        workspace: global.workspace.clone(),
        logistic_midpoint: global.logistic_midpoint,
        logistic_scale: global.logistic_scale,
        eta: global.eta,
        linkage: global.linkage,
        collapse_mode: global.collapse_mode,
        max_sweeps: global.max_sweeps,
        seed: global.seed,
    };
    Settings::resolve(file, &overrides)
}

fn execute(cli: Cli) -> Result<Option<String>> {
    let mut settings = settings(&cli.global)?;
    Ok(Some(match cli.command {
        Command::Run {
            manifest,
            scores,
            features_dir,
        } => commands::run(
            &settings,
            &RunArgs {
                manifest,
                scores,
                features_dir,
            },
        )?,
        Command::Evaluate { protocol, method } => commands::evaluate(&settings, protocol, method)?,
        Command::Sweep { work_id, column } => commands::sweep(&settings, &work_id, column)?,
        Command::Path { work_id, track_id } => commands::path(&settings, &work_id, &track_id)?,
        Command::Clusters {
            work_id,
            threshold,
            score,
        } => {
            let cut = match (threshold, score) {
                (Some(h), _) => Cut::Height(h),
                (None, Some(s)) => Cut::Score(s),
                (None, None) => unreachable!("clap requires one"),
            };
            commands::clusters(&settings, &work_id, cut)?
        }
        Command::Serve { bind } => {
            let ws = Workspace::open_existing(&settings.workspace)?;
            tokio::runtime::Runtime::new()?.block_on(covergraph_cli::server::serve(ws, bind))?;
            return Ok(None);
        }
        Command::Synth {
            out,
            n,
            positive_fraction,
            work_id,
        } => {
            if let Some(n) = n {
                settings.synthetic.n_candidates = n;
            }
            if let Some(f) = positive_fraction {
                settings.synthetic.positive_fraction = f;
            }
            if work_id.is_some() {
                settings.synthetic.work_id = work_id;
            }
            settings.synthetic.validate()?;
            commands::synth(&settings, &out)?
        }
    }))
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(out) => {
            if let Some(text) = out {
                print!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
