use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ctan_cli::config::RunConfig;
use ctan_cli::{ablation, commands, exit_code};

#[derive(Parser)]
#[command(name = "ctan", version, about = "Channel-temporal attention for adversarial video domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output location, overriding the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Artifacts {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Clip directory; defaults to `clips/` beside the manifest.
    #[arg(long)]
    clips: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark's manifests and clips.
    SynthData(Common),
    /// Two-stage training; writes metrics.csv and one checkpoint per stage.
    Train {
        #[command(flatten)]
        common: Common,
        /// Skip the adversarial stage.
        #[arg(long)]
        source_only: bool,
    },
    /// Accuracy of a checkpoint on a manifest.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifacts: Artifacts,
    },
    /// Finite-difference check of every differentiable op.
    Gradcheck,
    /// Source-only, DANN and the four block orderings over the configured seeds.
    Ablate(Common),
    /// Write one row of (embedding, label, domain) per clip.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifacts: Artifacts,
    },
    /// Print a commented default config.
    InitConfig {
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::SynthData(c) => {
            let cfg = resolve(&c)?;
            commands::synth_data(&cfg, &cfg.output_dir, &mut out)?;
        }
        Command::Train { common, source_only } => {
            let cfg = resolve(&common)?;
            commands::train(&cfg, source_only, &mut out)?;
        }
        Command::Eval { common, artifacts: a } => {
            let cfg = resolve(&common)?;
            commands::eval(&cfg, &a.checkpoint, &a.manifest, a.clips.as_deref(), &mut out)?;
        }
        Command::Gradcheck => {
            commands::gradcheck(&mut out)?;
        }
        Command::Ablate(c) => {
            let cfg = resolve(&c)?;
            ablation::ablate(&cfg, &cfg.output_dir, &mut out)?;
        }
        Command::ExportEmbeddings { common, artifacts: a } => {
            let cfg = resolve(&common)?;
            let dest = match &common.out {
                Some(p) => p.clone(),
                None => cfg.output_dir.join("embeddings.csv"),
            };
            if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            let n = commands::export_embeddings(&cfg, &a.checkpoint, &a.manifest, a.clips.as_deref(), &dest)?;
            writeln!(out, "wrote {n} rows to {}", dest.display())?;
        }
        Command::InitConfig { out: dest } => {
            let text = RunConfig::default().to_text(true)?;
            match dest {
                Some(p) => write_file(&p, &text)?,
                None => out.write_all(text.as_bytes())?,
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
