use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvgrpo::config::{ExperimentKind, RunConfig};
use mvgrpo::error::Error;
use mvgrpo::experiments::{self, metrics_row, Outcome, CONFIG_FILE, METRICS_HEADER};
use mvgrpo::grpo::VerifierMode;

/// Train and probe a multi-view editor policy against geometric verifiers.
///
/// Exit codes: 0 success, 1 configuration error, 2 runtime error,
/// 3 a recorded acceptance threshold failed.
#[derive(Debug, Parser)]
#[command(name = "mvgrpo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the policy under one verifier mode.
    Train(Args),
    /// Confidence as consistent views are replaced one by one.
    Decay(Args),
    /// Score a trained checkpoint (defaults to the run's own config.toml).
    Eval(Args),
    /// Dump views, depths and confidence maps.
    Render(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mode: Option<VerifierMode>,
    #[arg(long)]
    threads: Option<usize>,
}

fn load(kind: ExperimentKind, args: &Args) -> Result<RunConfig, Error> {
    let path = match (&args.config, kind, &args.out) {
        (Some(p), _, _) => p.clone(),
        (None, ExperimentKind::Eval, Some(out)) => out.join(CONFIG_FILE),
        _ => return Err(Error::Config(format!("{} needs --config", kind.as_str()))),
    };
    let mut cfg = RunConfig::load(&path)?;
    cfg.kind = kind;
    if let Some(s) = args.seed {
        cfg.trainer.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    if let Some(m) = args.mode {
        cfg.trainer.verifier_mode = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(o: &Outcome) {
    for t in &o.thresholds {
        let tag = if t.passed { "PASS" } else { "FAIL" };
        println!("{tag} {}: {} {} {}", t.name, t.value, t.op, t.limit);
    }
    println!("wrote {}", o.out_dir.display());
}

fn run(cli: Cli) -> Result<bool, Error> {
    let (kind, args) = match &cli.command {
        Command::Train(a) => (ExperimentKind::Train, a),
        Command::Decay(a) => (ExperimentKind::Decay, a),
        Command::Eval(a) => (ExperimentKind::Eval, a),
        Command::Render(a) => (ExperimentKind::Render, a),
    };
    let cfg = load(kind, args)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match kind {
        ExperimentKind::Train => {
            let t = experiments::cmd_train(&cfg)?;
            report(&t.outcome);
            Ok(t.outcome.passed())
        }
        ExperimentKind::Decay => {
            let o = experiments::cmd_decay(&cfg)?;
            report(&o);
            Ok(o.passed())
        }
        ExperimentKind::Eval => {
            let m = experiments::cmd_eval(&cfg)?;
            println!("{METRICS_HEADER}\n{}", metrics_row(&m));
            Ok(true)
        }
        ExperimentKind::Render => {
            report(&experiments::cmd_render(&cfg)?);
            Ok(true)
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
