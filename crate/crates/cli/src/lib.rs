//! Command-line pipeline: `synth`, `train`, `sample`, `evaluate` and
//! `validate`, driven by a JSON run configuration with flag overrides.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use windsr_core::metrics::Aggregate;
use windsr_core::{Error, Result};

use crate::config::RunConfig;
use crate::manifest::Manifest;

/// Exit status for bad input, configuration or data.
pub const EXIT_INPUT: i32 = 2;
/// Exit status for numerical failure (divergence, singular schedule).
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "windsr",
    version,
    about = "Ensemble diffusion downscaling of gridded wind speed"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON run configuration; flags and `--section.field value` overrides
    /// are applied on top.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for synthesis, training and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Ensemble members per window.
    #[arg(long, global = true)]
    pub members: Option<usize>,
    /// Reverse diffusion steps.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also write every ensemble member as its own store.
    #[arg(long, global = true)]
    pub keep_members: bool,
    /// Fresh-noise scale per reverse step (0 keeps sampling deterministic).
    #[arg(long, global = true)]
    pub stochastic_sigma: Option<f64>,
    #[arg(long, global = true)]
    pub aggregate: Option<Aggregate>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired low/high-resolution dataset.
    Synth,
    /// Train the configured predictor.
    Train,
    /// Downscale a low-resolution store with a checkpoint.
    Sample,
    /// Score predictions and the bilinear baseline against the truth.
    Evaluate,
    /// Score gridded products against station observations.
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Evaluate => "evaluate",
            Command::Validate => "validate",
        }
    }
}

const FLAGS: &[&str] = &[
    "config",
    "seed",
    "epochs",
    "members",
    "steps",
    "threads",
    "out",
    "keep-members",
    "stochastic-sigma",
    "aggregate",
    "help",
    "version",
];

/// `(dotted.key, value)` pairs from the command line.
pub type Overrides = Vec<(String, String)>;

/// Splits `--a.b value` / `--a.b=value` overrides from the arguments clap
/// understands. A dotted flag with no value sets `true`.
pub fn split_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Overrides)> {
    let mut plain = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(arg) = it.next() {
        let s = arg.to_string_lossy().into_owned();
        let Some(body) = s.strip_prefix("--") else {
            plain.push(arg);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if !key.contains('.') || FLAGS.contains(&key.as_str()) {
            plain.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => match it.peek() {
                Some(next) if !next.to_string_lossy().starts_with("--") => {
                    it.next().unwrap().to_string_lossy().into_owned()
                }
                _ => "true".to_string(),
            },
        };
        if key.split('.').any(str::is_empty) {
            return Err(Error::Config(format!("malformed override --{key}")));
        }
        overrides.push((key, value));
    }
    Ok((plain, overrides))
}

impl Cli {
    /// Builds the effective configuration: file (or defaults), then dotted
    /// overrides, then the named flags.
    pub fn resolve(&self, overrides: &[(String, String)]) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let mut cfg = base.with_overrides(overrides)?;
        if let Some(s) = self.seed {
            cfg.synth.seed = s;
            cfg.train.seed = s;
            cfg.sampling.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(m) = self.members {
            cfg.sampling.members = m;
        }
        if let Some(s) = self.steps {
            cfg.sampling.steps = s;
            cfg.train.steps = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if let Some(o) = &self.out {
            cfg.paths.out = Some(o.clone());
        }
        if self.keep_members {
            cfg.sampling.keep_members = true;
        }
        if let Some(s) = self.stochastic_sigma {
            cfg.sampling.eta = s;
        }
        if let Some(a) = self.aggregate {
            cfg.metrics.aggregate = a;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs one command and writes its manifest.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<Manifest> {
    if let Some(t) = cfg.threads {
        windsr_core::exec::init_threads(t);
    }
    let files = match command {
        Command::Synth => commands::cmd_synth(cfg)?,
        Command::Train => commands::cmd_train(cfg)?,
        Command::Sample => commands::cmd_sample(cfg)?,
        Command::Evaluate => commands::cmd_evaluate(cfg)?,
        Command::Validate => commands::cmd_validate(cfg)?,
    };
    let out = cfg.out_dir();
    let manifest = Manifest::build(command.name(), &out, &files)?;
    manifest.write(&out)?;
    Ok(manifest)
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

/// Full entry point over raw arguments (including the program name).
pub fn run(args: Vec<OsString>) -> i32 {
    let (plain, overrides) = match split_overrides(args) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let cli = match Cli::try_parse_from(plain) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = cli
        .resolve(&overrides)
        .and_then(|cfg| execute(cli.command, &cfg));
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
