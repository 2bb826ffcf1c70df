//! Thin command-line front end over the library's run module.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eqcs::run::{self, RunConfig, RunError};

#[derive(Parser)]
#[command(name = "eqcs", about = "Train rotation-aware generative priors and recover signals from compressed measurements")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the global seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (falls back to config, then $EQCS_OUT_DIR).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel trials (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Override the model kind (eq, eq-diag-cov, mlp, conv, aug, cond).
    #[arg(long, global = true)]
    model: Option<String>,
    /// Override the recovery scheme (plain, coordinate, joint, conditional).
    #[arg(long, global = true)]
    scheme: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured model and write a checkpoint plus loss trace.
    Train,
    /// Run one recovery problem against a trained checkpoint.
    Recover {
        /// Checkpoint path; defaults to `<out>/<model>.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Benchmark the checkpoint roster under both rotation scenarios.
    Benchmark,
    /// Run the self-contained theory verification suite.
    Verify,
    /// Summarize the artifacts in the output directory.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig, RunError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(model) = &cli.model {
        cfg.model.kind = model.clone();
    }
    if let Some(scheme) = &cli.scheme {
        cfg.recover.scheme = scheme.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    let cfg = load_config(cli)?;
    cfg.model_spec()?;
    run::parse_scheme(&cfg.recover.scheme)?;
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .map_err(|e| RunError::Config(format!("worker pool: {e}")))?;
    }
    let out = cfg.out_dir(cli.out.as_deref());
    match &cli.command {
        Command::Train => {
            let ckpt = run::cmd_train(&cfg, &out)?;
            println!("wrote {}", ckpt.display());
        }
        Command::Recover { checkpoint } => {
            let ckpt = checkpoint
                .clone()
                .unwrap_or_else(|| out.join(format!("{}.ckpt", cfg.model.kind)));
            let record = run::cmd_recover(&cfg, &ckpt, &out)?;
            println!("wrote {}", record.display());
        }
        Command::Benchmark => {
            let rows = run::cmd_benchmark(&cfg, &out)?;
            println!("wrote {} ({} rows)", out.join("benchmark.tsv").display(), rows.len());
        }
        Command::Verify => {
            let report = run::cmd_verify(&cfg, &out)?;
            println!(
                "verification passed: audits {}/{}, gamma_hat {:.4}",
                report.audits_passed, report.audit_trials, report.gamma_hat
            );
        }
        Command::Report => {
            let text = run::cmd_report(&out)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
