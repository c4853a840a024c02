use affclt::config::ExperimentConfig;
use affclt::runner::{self, EstimateKind, RunOutput, EXIT_ERROR, EXIT_OK};
use affclt::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Parser, Debug)]
#[command(
    name = "affclt",
    version,
    about = "Affinity-set CLT diagnostics for dependent triangular arrays"
)]
struct Cli {
    /// Experiment config, TOML or JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "AFFCLT_THREADS")]
    threads: Option<usize>,
    /// Overrides the output directory in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Checks the three covariance-sum conditions on an n grid.
    Diagnose,
    /// Monte Carlo normality of the whitened sum.
    Normality,
    /// Applied estimators.
    Estimate {
        #[arg(value_enum)]
        kind: Kind,
    },
    /// Writes raw sample arrays.
    Gen,
    /// Prints the tool description and, with --config, the effective config.
    Info,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Ht,
    Qhat,
    Socio,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    tool_version: &'a str,
    config_hash: &'a str,
    command: &'a str,
    started_unix: f64,
    finished_unix: f64,
    threads: usize,
    exit_code: i32,
    files: Vec<String>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<i32> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    if let Command::Info = cli.command {
        let cfg = cli.config.as_ref().map(|_| load(cli)).transpose()?;
        print!("{}", runner::info(cfg.as_ref())?);
        return Ok(EXIT_OK);
    }
    let cfg = load(cli)?;
    let started = now();
    let (name, out) = match cli.command {
        Command::Diagnose => ("diagnose", runner::run_diagnose(&cfg)?),
        Command::Normality => ("normality", runner::run_normality_cfg(&cfg)?),
        Command::Estimate { kind } => {
            let k = match kind {
                Kind::Ht => EstimateKind::Ht,
                Kind::Qhat => EstimateKind::QHat,
                Kind::Socio => EstimateKind::Socio,
            };
            ("estimate", runner::run_estimate(&cfg, k)?)
        }
        Command::Gen => ("gen", runner::run_gen(&cfg)?),
        Command::Info => unreachable!(),
    };
    write(&cfg, name, out, started)
}

fn write(cfg: &ExperimentConfig, name: &str, mut out: RunOutput, started: f64) -> Result<i32> {
    let hash = cfg.hash()?;
    let files: Vec<String> = out.files.names().iter().map(|p| p.display().to_string()).collect();
    let meta = RunMeta {
        tool_version: affclt::VERSION,
        config_hash: &hash,
        command: name,
        started_unix: started,
        finished_unix: now(),
        threads: rayon::current_num_threads(),
        exit_code: out.exit_code,
        files,
    };
    out.files.add("run_meta.json", serde_json::to_vec_pretty(&meta)?);
    let dir: &Path = &cfg.output.dir;
    out.files.commit(dir)?;
    eprintln!("{}", out.summary);
    eprintln!("wrote {} files to {}", out.files.names().len(), dir.display());
    Ok(out.exit_code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
