use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use aoi_relay::dqn::{self, DqnPolicy};
use aoi_relay::harness::{self, ExperimentSpec, RunOptions, TrainSpec};
use aoi_relay::oracle::{self, DEFAULT_NODE_BUDGET};
use aoi_relay::schedulers::{DeterministicPolicy, Maf, MafMad, PolicyName, RoundRobin};
use aoi_relay::ScenarioConfig;

#[derive(Parser)]
#[command(name = "aoi-relay", version, about = "AoI scheduling experiments for UAV-relayed IoT networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Base seed for replications (overrides the experiment file)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of replications (overrides the experiment file)
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Output file (`train`: output directory); stdout when omitted
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for all cores
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Write 0 in the seconds column so reruns are byte-identical
    #[arg(long, global = true)]
    no_timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML spec
    Run { spec: PathBuf },
    /// Run a built-in preset
    Preset {
        name: String,
        /// Comma-separated policy list replacing the preset's
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<PolicyName>>,
    },
    /// Train a DQN scheduler; writes dqn.ckpt and learning_curve.csv
    Train { config: PathBuf },
    /// Exact optimal cost and heuristic gaps on a tiny scenario
    Oracle {
        scenario: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
        budget: u64,
    },
    /// Ranked pairwise comparison of result CSVs
    Compare {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run_spec(cli: &Cli, mut spec: ExperimentSpec) -> Result<()> {
    if let Some(s) = cli.seed {
        spec.base_seed = s;
    }
    if let Some(n) = cli.runs {
        spec.n_runs = n;
    }
    let opts = RunOptions {
        jobs: cli.jobs,
        timing: !cli.no_timing,
    };
    let rows = harness::run_experiment(&spec, opts)?;
    let out = cli.out.clone().or(spec.output.clone());
    harness::write_rows(&rows, output(out.as_deref())?)?;
    Ok(())
}

fn train(cli: &Cli, path: &Path) -> Result<()> {
    let mut spec = TrainSpec::from_path(path)?;
    if let Some(s) = cli.seed {
        spec.dqn.seed = s;
    }
    let env = harness::environment(&spec.scenario()?);
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let out = dqn::train(env.clone(), spec.dqn.clone())?;
    out.save(dir.join("dqn.ckpt"))?;
    dqn::write_curve(&out.curve, BufWriter::new(File::create(dir.join("learning_curve.csv"))?))?;
    let mut policy: DqnPolicy = out.policy;
    let runs = cli.runs.unwrap_or(1000);
    let (eq10, per_slot) = dqn::evaluate(&env, &mut policy, runs, cli.seed.unwrap_or(0))?;
    println!(
        "{}",
        json!({"scenario": env.scenario.fingerprint(), "episodes": spec.dqn.episodes, "eval_runs": runs,
               "eval_avg_aoi_eq10": eq10, "eval_avg_aoi_per_slot": per_slot})
    );
    Ok(())
}

fn oracle_cmd(cli: &Cli, path: &Path, budget: u64) -> Result<()> {
    let cfg = ScenarioConfig::from_path(path)?;
    let env = harness::environment(&cfg);
    let opt = oracle::optimal_cost(&env, budget)?;
    let policies: [(PolicyName, &dyn DeterministicPolicy); 3] = [
        (PolicyName::MafMad, &MafMad),
        (PolicyName::Maf, &Maf),
        (PolicyName::Rr, &RoundRobin::default()),
    ];
    let mut w = csv::Writer::from_writer(output(cli.out.as_deref())?);
    w.write_record(["scenario", "policy", "optimal_cost", "policy_cost", "gap"])?;
    for (name, p) in policies {
        let v = oracle::evaluate_policy_exact(&env, p, budget)?;
        w.write_record([
            cfg.fingerprint(),
            name.to_string(),
            opt.cost.to_string(),
            v.cost.to_string(),
            (v.cost - opt.cost).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn compare(cli: &Cli, files: &[PathBuf]) -> Result<()> {
    let mut rows = Vec::new();
    for f in files {
        let file = File::open(f).with_context(|| format!("opening {}", f.display()))?;
        rows.extend(harness::read_rows(file)?);
    }
    let report = harness::compare_report(&rows)?;
    harness::write_report(&report, output(cli.out.as_deref())?)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { spec } => run_spec(cli, ExperimentSpec::from_path(spec)?),
        Command::Preset { name, policies } => {
            let mut spec = harness::preset(name)?;
            if let Some(p) = policies {
                if p.is_empty() {
                    bail!("empty policy list");
                }
                spec.policies = p.clone();
            }
            run_spec(cli, spec)
        }
        Command::Train { config } => train(cli, config),
        Command::Oracle { scenario, budget } => oracle_cmd(cli, scenario, *budget),
        Command::Compare { csv } => compare(cli, csv),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind().to_string(), "causes": [e.to_string().trim()]}));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            eprintln!("{}", json!({"error": e.to_string(), "causes": chain}));
            ExitCode::FAILURE
        }
    }
}
