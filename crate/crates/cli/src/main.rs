use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use modinv_core::harness::{
    gradient_diagnostic, load_config, metrics_from_dir, run_ablation, run_experiment, verify, AblationPreset,
    RunConfig,
};
use modinv_core::losses::LossKind;

#[derive(Parser)]
#[command(name = "modinv", version, about = "Model inversion attacks on the toy benchmark")]
struct Cli {
    /// Run configuration (TOML). Without it the built-in defaults are used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the attack, evaluate it and write all artifacts.
    Attack,
    /// Run one attack per preset and write a comparison table.
    Ablate {
        /// Comma separated preset names; all presets when omitted.
        #[arg(long, value_delimiter = ',')]
        presets: Vec<String>,
    },
    /// Record score and gradient-norm curves for both losses.
    Diagnose,
    /// Recompute the metric report from a run directory's feature files.
    Metrics,
    /// Check every file hash listed in a run directory's manifest.
    Verify,
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::new(0),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(o) = &cli.out {
        c.output.directory = o.clone();
    }
    c.validate()?;
    Ok(c)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = config(cli)?;
    let dir = cfg.output.directory.clone();
    match &cli.command {
        Command::Attack => {
            let outcome = run_experiment(&cfg)?;
            print!("{}", outcome.report.to_csv());
            eprintln!("artifacts written to {}", dir.display());
        }
        Command::Ablate { presets } => {
            let presets = if presets.is_empty() {
                AblationPreset::ALL.to_vec()
            } else {
                presets.iter().map(|p| p.parse()).collect::<Result<Vec<AblationPreset>, _>>()?
            };
            let table = run_ablation(&cfg, &presets)?;
            let csv = table.to_csv();
            print!("{csv}");
            let path = write(&dir, "ablation.csv", &csv)?;
            eprintln!("table written to {}", path.display());
        }
        Command::Diagnose => {
            let curves = gradient_diagnostic(&cfg)?;
            let path = write(&dir, "gradients.csv", &curves.to_csv())?;
            for c in &curves.curves {
                let name = match c.loss {
                    LossKind::Poincare => "poincare",
                    LossKind::CrossEntropy => "cross_entropy",
                };
                let high = c
                    .high_score_grad_norm
                    .map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{name}: final mean score {:.4}, mean normalized gradient norm at score > 0.9: {high}",
                    c.mean_target_score.last().copied().unwrap_or(f64::NAN)
                );
            }
            eprintln!("curves written to {}", path.display());
        }
        Command::Metrics => {
            let report = metrics_from_dir(&dir, &cfg.metrics)?;
            print!("{}", report.to_csv());
        }
        Command::Verify => {
            let report = verify(&dir)?;
            for p in &report.problems {
                println!("FAIL {p}");
            }
            if !report.complete {
                println!("FAIL manifest marks the run as incomplete");
            }
            println!("{} files checked", report.checked);
            if !report.ok() {
                return Ok(ExitCode::FAILURE);
            }
            if report.checked == 0 {
                bail!("manifest lists no files");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            // Core errors already embed their cause in the message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
