//! `vftk` command line: simulate, train, denoise, analyze, report.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vftk::config::{PipelineTag, RunConfig};
use vftk::error::VfError;
use vftk::neural::Variant;
use vftk::pipeline;
use vftk::progression::Method;
use vftk::report;

#[derive(Parser)]
#[command(name = "vftk", about = "Visual-field simulation, denoising, and progression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Eyes per setting override.
    #[arg(long)]
    eyes: Option<usize>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured settings and write cohort files.
    Simulate(Common),
    /// Train a denoising network on the pooled simulated corpus.
    Train {
        #[command(flatten)]
        common: Common,
        /// Network variant: mae, mae+p, vae, vae+p (or "all").
        #[arg(long, default_value = "all")]
        variant: String,
        /// Epoch budget override.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write denoised copies of the cohort files for one variant.
    Denoise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: String,
    },
    /// Run the progressive harness and write verdict files.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Pipeline: raw, mae, mae+p, vae, vae+p (or "all").
        #[arg(long, default_value = "all")]
        pipeline: String,
        /// Method: plr, md, gri (or "all").
        #[arg(long, default_value = "all")]
        method: String,
    },
    /// Build report tables and Kaplan-Meier plots from verdict files.
    Report(Common),
    /// Run the whole pipeline: simulate, train, analyze, report.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, VfError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(eyes) = common.eyes {
        config.simulate.eyes = eyes;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn parse_variants(s: &str) -> Result<Vec<Variant>, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Variant::ALL.to_vec());
    }
    Variant::parse(s)
        .map(|v| vec![v])
        .ok_or_else(|| format!("unknown variant '{s}' (expected mae, mae+p, vae, vae+p, all)"))
}

fn parse_pipelines(s: &str) -> Result<Vec<PipelineTag>, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(PipelineTag::ALL.to_vec());
    }
    PipelineTag::parse(s)
        .map(|t| vec![t])
        .ok_or_else(|| format!("unknown pipeline '{s}' (expected raw, mae, mae+p, vae, vae+p, all)"))
}

fn parse_methods(s: &str) -> Result<Vec<Method>, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.to_vec());
    }
    Method::parse(s)
        .map(|m| vec![m])
        .ok_or_else(|| format!("unknown method '{s}' (expected plr, md, gri, all)"))
}

fn cmd_simulate(config: &RunConfig) -> Result<(), VfError> {
    let paths = pipeline::run_simulate(config)?;
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_train(config: &RunConfig, variants: &[Variant]) -> Result<(), VfError> {
    for &variant in variants {
        let outcome = pipeline::run_train(config, variant)?;
        println!(
            "trained {variant}: best epoch {} val_loss {:.6e} ({} epochs run)",
            outcome.checkpoint.epoch,
            outcome.checkpoint.val_loss,
            outcome.log.len()
        );
    }
    Ok(())
}

fn cmd_analyze(
    config: &RunConfig,
    pipelines: &[PipelineTag],
    methods: &[Method],
) -> Result<(), VfError> {
    for &tag in pipelines {
        for &method in methods {
            let path = pipeline::run_analyze(config, tag, method)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_report(config: &RunConfig) -> Result<(), VfError> {
    for path in report::run_report(config)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), MainError> {
    match cli.command {
        Command::Simulate(common) => {
            let config = load_config(&common)?;
            cmd_simulate(&config)?;
        }
        Command::Train { common, variant, epochs } => {
            let mut config = load_config(&common)?;
            if let Some(e) = epochs {
                config.train.max_epochs = e;
            }
            let variants = parse_variants(&variant).map_err(MainError::Usage)?;
            cmd_train(&config, &variants)?;
        }
        Command::Denoise { common, variant } => {
            let config = load_config(&common)?;
            let variants = parse_variants(&variant).map_err(MainError::Usage)?;
            for &v in &variants {
                for path in pipeline::run_denoise(&config, v)? {
                    println!("wrote {}", path.display());
                }
            }
        }
        Command::Analyze { common, pipeline: p, method } => {
            let config = load_config(&common)?;
            let pipelines = parse_pipelines(&p).map_err(MainError::Usage)?;
            let methods = parse_methods(&method).map_err(MainError::Usage)?;
            cmd_analyze(&config, &pipelines, &methods)?;
        }
        Command::Report(common) => {
            let config = load_config(&common)?;
            cmd_report(&config)?;
        }
        Command::Run { common, epochs } => {
            let mut config = load_config(&common)?;
            if let Some(e) = epochs {
                config.train.max_epochs = e;
            }
            cmd_simulate(&config)?;
            cmd_train(&config, &Variant::ALL)?;
            cmd_analyze(&config, &PipelineTag::ALL, &Method::ALL)?;
            cmd_report(&config)?;
        }
    }
    Ok(())
}

enum MainError {
    Usage(String),
    Data(VfError),
}

impl From<VfError> for MainError {
    fn from(e: VfError) -> Self {
        MainError::Data(e)
    }
}

fn main() -> ExitCode {
    // clap's own parse failures (unknown flags, missing values) exit
    // with the usage code.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(MainError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(MainError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
