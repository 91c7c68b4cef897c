//! `drapefit` command-line driver.

mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drapefit::config::RunConfig;
use drapefit::{Error, ErrorCategory};

#[derive(Parser, Debug)]
#[command(name = "drapefit", version, about = "Cusick drape simulation and material inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "drapefit-out")]
    out: PathBuf,
    /// Worker threads (overrides the config).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the disk mesh.
    Meshgen,
    /// Drape one material and render its silhouette.
    Simulate,
    /// Fit a HOMO, HETER or BDP model to observed silhouettes.
    Train,
    /// Draw materials from a posterior and simulate each.
    Sample,
    /// Compare predicted and observed silhouettes or meshes.
    Eval,
    /// KL table and mixture likelihoods of fitted posteriors.
    Posterior,
    /// Compare the adjoint gradient with finite differences.
    Gradcheck,
    /// Generate a synthetic dataset with known materials.
    Synth,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Meshgen => "meshgen",
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Eval => "eval",
            Command::Posterior => "posterior",
            Command::Gradcheck => "gradcheck",
            Command::Synth => "synth",
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::default().default_filter_or("info");
    env_logger::Builder::from_env(env)
        .format(|buf, record| {
            let line = serde_json::json!({
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .init();
}

fn load_config(cli: &Cli) -> drapefit::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
            RunConfig::from_json_str("{}", &cwd)?
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> drapefit::Result<()> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    commands::write_json(&out.join("config.json"), &cfg)?;
    let threads = cfg.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let name = cli.command.name();
    log::info!("{name}: writing to {}", out.display());
    let summary = pool.install(|| match cli.command {
        Command::Meshgen => commands::meshgen(&cfg, out),
        Command::Simulate => commands::simulate(&cfg, out),
        Command::Train => commands::train(&cfg, out),
        Command::Sample => commands::sample(&cfg, out),
        Command::Eval => commands::eval(&cfg, out),
        Command::Posterior => commands::posterior(&cfg, out),
        Command::Gradcheck => commands::gradcheck(&cfg, out),
        Command::Synth => commands::synth(&cfg, out),
    })?;
    let mut doc = serde_json::json!({ "command": name, "status": "ok" });
    doc.as_object_mut()
        .expect("object")
        .extend(summary.as_object().cloned().unwrap_or_default());
    commands::write_json(&out.join("summary.json"), &doc)
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Io => 3,
        ErrorCategory::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{}: {e}", cli.command.name());
            let code = exit_code(&e);
            let doc = serde_json::json!({
                "command": cli.command.name(),
                "status": "error",
                "category": format!("{:?}", e.category()).to_lowercase(),
                "error": e.to_string(),
                "exit_code": code,
            });
            if cli.out.is_dir() {
                let _ = commands::write_json(&cli.out.join("summary.json"), &doc);
            }
            ExitCode::from(code)
        }
    }
}
