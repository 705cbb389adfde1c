use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use evguard_core::attacker::PolicyKind;
use evguard_core::config::Config;
use evguard_core::ids::IdsNet;
use evguard_core::pipeline::{Pipeline, RunLock};
use evguard_core::sim::{self, SLOTS_PER_DAY};

#[derive(Parser)]
#[command(name = "evguard", version, about = "False SoC reporting attacks and their detection")]
struct Cli {
    /// TOML config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, default_value = "runs/default")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct PolicyArg {
    /// Attacker architecture; defaults to `attacker.policy` from the config.
    #[arg(long)]
    policy: Option<PolicyKind>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate benign and held-out benign trace datasets.
    GenData,
    /// Train an attacker policy on the benign traces.
    TrainAttacker(PolicyArg),
    /// Replay benign traces under a trained attacker.
    GenAttacks(PolicyArg),
    /// Oversample with ADASYN and write the train/test split.
    Balance(PolicyArg),
    /// Train the detector on the balanced train split.
    TrainIds(PolicyArg),
    /// Write metrics.csv, attacker_eval.csv and plots.
    Evaluate {
        /// Evaluate one source instead of every configured one.
        #[arg(long)]
        policy: Option<PolicyKind>,
    },
    /// Stealth-weight and learning-rate sweeps.
    Sweep,
    /// Every stage in order.
    RunAll {
        /// Build datasets from one source instead of every configured one.
        #[arg(long)]
        policy: Option<PolicyKind>,
    },
    /// Label a feature CSV with a trained detector.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the charging coordinator on one slot's request batch.
    Schedule {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainAttacker(_) => "train-attacker",
            Command::GenAttacks(_) => "gen-attacks",
            Command::Balance(_) => "balance",
            Command::TrainIds(_) => "train-ids",
            Command::Evaluate { .. } => "evaluate",
            Command::Sweep => "sweep",
            Command::RunAll { .. } => "run-all",
            Command::Classify { .. } => "classify",
            Command::Schedule { .. } => "schedule",
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn classify(model: &Path, input: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let net = IdsNet::load(model).with_context(|| format!("loading {}", model.display()))?;
    let mut rdr = csv::Reader::from_path(input).with_context(|| format!("reading {}", input.display()))?;
    let mut wtr = csv::Writer::from_writer(output(out)?);
    wtr.write_record(["row_id", "label", "probability"])?;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // a trailing label column is ignored
        if rec.len() != SLOTS_PER_DAY && rec.len() != SLOTS_PER_DAY + 1 {
            bail!("row {i}: expected {SLOTS_PER_DAY} features, got {}", rec.len());
        }
        let features = rec
            .iter()
            .take(SLOTS_PER_DAY)
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("row {i}"))?;
        let (label, p) = net.classify(&features)?;
        wtr.write_record([i.to_string(), label.as_index().to_string(), format!("{p:.6}")])?;
    }
    wtr.flush()?;
    Ok(())
}

fn schedule(cfg: &Config, input: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let file = File::open(input).with_context(|| format!("reading {}", input.display()))?;
    let requests = sim::read_requests(BufReader::new(file))?;
    let alloc = sim::schedule(&requests, &cfg.station)?;
    sim::write_allocation(output(out)?, &alloc)?;
    Ok(())
}

fn run_stage(cli: &Cli, cfg: Config) -> anyhow::Result<()> {
    let default_kind = cfg.attacker.policy;
    let sources = cfg.attack_data.sources.clone();
    let pipeline = Pipeline::new(cfg, &cli.out_dir)?;
    let _lock = RunLock::acquire(&cli.out_dir)?;
    let kind = |p: &PolicyArg| p.policy.unwrap_or(default_kind);
    match &cli.command {
        Command::GenData => pipeline.gen_data()?,
        Command::TrainAttacker(p) => pipeline.train_attacker(kind(p))?,
        Command::GenAttacks(p) => pipeline.gen_attacks(kind(p))?,
        Command::Balance(p) => pipeline.balance(kind(p))?,
        Command::TrainIds(p) => pipeline.train_ids(kind(p))?,
        Command::Evaluate { policy } => match policy {
            Some(k) => pipeline.evaluate(&[*k])?,
            None => pipeline.evaluate(&sources)?,
        },
        Command::Sweep => pipeline.sweep()?,
        Command::RunAll { policy } => {
            match policy {
                Some(k) => pipeline.run_all(&[*k])?,
                None => pipeline.run_all(&sources)?,
            };
            return Ok(());
        }
        Command::Classify { .. } | Command::Schedule { .. } => unreachable!("handled before locking"),
    }
    pipeline.write_manifest()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: config: {e:#}");
            return ExitCode::from(2);
        }
    };
    let stage = cli.command.name();
    let result = match &cli.command {
        Command::Classify { model, input, output } => classify(model, input, output.as_deref()),
        Command::Schedule { input, output } => schedule(&cfg, input, output.as_deref()),
        _ => run_stage(&cli, cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: stage {stage} failed: {e:#}");
            ExitCode::from(3)
        }
    }
}
