use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use autodfl::chain::gas::CALIBRATION_ENV;
use autodfl::fl::BehaviorKind;
use autodfl::harness::{
    gas_table, throughput_sweep, GasRow, HarnessError, Scenario, Simulation, TrainerSpec,
};
use autodfl::reputation::{evaluate, EvalRecord};
use autodfl::store::{BlobStore, Cid};

#[derive(Parser)]
#[command(name = "autodfl", version, about = "Reputation-aware federated learning on a rollup-backed ledger")]
struct Cli {
    /// Gas calibration CSV; the built-in table is used when unset.
    #[arg(long, global = true, env = CALIBRATION_ENV)]
    gas_calibration: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario end to end and print a summary.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Write metrics CSV/JSON, the final state and the blob store here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay every calibrated workload through the rollup pricing.
    GasTable {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        json: bool,
    },
    /// Achieved throughput and latency per send rate.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
    },
    /// Reputation tools.
    Rep {
        #[command(subcommand)]
        command: RepCommand,
    },
    /// Inspect on-chain records after running a scenario.
    Inspect {
        #[command(subcommand)]
        command: InspectCommand,
    },
    /// Oracle network tools.
    Don {
        #[command(subcommand)]
        command: DonCommand,
    },
    /// Blob store tools.
    Store {
        #[command(subcommand)]
        command: StoreCommand,
    },
}

#[derive(Subcommand)]
enum RepCommand {
    /// Score one JSON record read from a file or stdin.
    Eval { record: Option<PathBuf> },
}

#[derive(Subcommand)]
enum InspectCommand {
    Task {
        id: u64,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

#[derive(Subcommand)]
enum DonCommand {
    /// Evaluation reports, quorum and aggregation of one round.
    Inspect {
        task: u64,
        round: u32,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

#[derive(Subcommand)]
enum StoreCommand {
    Cat {
        cid: String,
        /// Store directory written by `run --out`.
        #[arg(long, default_value = "out/store")]
        dir: PathBuf,
        /// Write raw bytes instead of hex.
        #[arg(long)]
        raw: bool,
    },
}

#[derive(Args, Clone, Default)]
struct ScenarioArgs {
    /// Scenario JSON; defaults apply to every missing field.
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of tasks.
    #[arg(long)]
    tasks: Option<u32>,
    /// Feature dimension of every task's dataset.
    #[arg(long)]
    task_dim: Option<usize>,
    /// Trainers per task; extra good trainers are added when needed.
    #[arg(long)]
    trainers: Option<u32>,
    #[arg(long)]
    rounds: Option<u32>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario, Failure> {
        let mut s = match &self.scenario {
            Some(path) => Scenario::load(path).map_err(|e| Failure::Config(e.to_string()))?,
            None => Scenario::default(),
        };
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(n) = self.tasks {
            let mut first = s.tasks.first().cloned().unwrap_or_default();
            first.repeat = n;
            s.tasks = vec![first];
        }
        for t in &mut s.tasks {
            if let Some(d) = self.task_dim {
                t.dataset.dim = d;
            }
            if let Some(k) = self.trainers {
                t.trainers = k;
            }
            if let Some(r) = self.rounds {
                t.rounds = r;
            }
        }
        let wanted = s.tasks.iter().map(|t| t.trainers as usize).max().unwrap_or(0);
        let mut i = 2;
        while s.trainers.len() < wanted {
            s.trainers.push(TrainerSpec::new(&format!("good{i}"), BehaviorKind::Good));
            i += 1;
        }
        s.validate().map_err(|e| Failure::Config(e.to_string()))?;
        Ok(s)
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::Gas(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn simulate(args: &ScenarioArgs) -> Result<Simulation, Failure> {
    let mut sim = Simulation::new(args.load()?)?;
    sim.run_all()?;
    Ok(sim)
}

fn run(args: &ScenarioArgs, out: Option<&Path>) -> Result<(), Failure> {
    let sim = simulate(args)?;
    let frame = sim.frame();
    if let Some(dir) = out {
        frame.export(dir)?;
        std::fs::write(dir.join("scenario.json"), sim.scenario.to_json())?;
        let audit = serde_json::to_string_pretty(&sim.audit).map_err(|e| Failure::Runtime(e.to_string()))?;
        std::fs::write(dir.join("audit.json"), audit)?;
        sim.store
            .persist_to(dir.join("store"))
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    print_json(&json!({
        "tasks": sim.tasks_done(),
        "final_reputation": frame.final_reputations(),
        "rewards": frame.rewards,
        "gas_total": frame.gas_total(),
        "state_hash": hex::encode(sim.driver.committed().state_hash()),
        "digest": frame.digest(),
    }))
}

fn print_gas(rows: &[GasRow]) {
    println!(
        "{:<24} {:>5} {:>7} {:>10} {:>10} {:>10} {:>10} {:>12} {:>6}",
        "function", "calls", "batches", "commit", "verify", "execute", "total", "l1", "ratio"
    );
    for r in rows {
        println!(
            "{:<24} {:>5} {:>7} {:>10} {:>10} {:>10} {:>10} {:>12} {:>6.1}",
            r.function,
            r.calls,
            r.batches,
            r.commit,
            r.verify,
            r.execute,
            r.total,
            r.l1_equivalent,
            r.l1_equivalent as f64 / r.total.max(1) as f64
        );
    }
}

fn rep_eval(path: Option<&Path>) -> Result<(), Failure> {
    let mut text = String::new();
    match path {
        Some(p) => {
            text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
        }
        None => {
            std::io::stdin().read_to_string(&mut text)?;
        }
    }
    let record: EvalRecord = serde_json::from_str(&text).map_err(|e| Failure::Config(e.to_string()))?;
    let result = evaluate(&record).map_err(|e| Failure::Config(e.to_string()))?;
    print_json(&result)
}

fn inspect_task(id: u64, args: &ScenarioArgs) -> Result<(), Failure> {
    let sim = simulate(args)?;
    let state = sim.driver.committed();
    let task = state
        .task(id)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let trainers: Vec<_> = task
        .trainers
        .iter()
        .map(|t| {
            json!({
                "account": t.to_hex(),
                "label": sim.participants.label_of(t),
                "round_scores": state.round_scores(id, t),
                "final_score": state.final_score(id, t),
                "reputation_update": state.pending_rep.get(&(id, *t)),
                "reputation_now": state.reputation_of(t),
            })
        })
        .collect();
    print_json(&json!({
        "task": task,
        "trainers": trainers,
        "payouts": state.payouts.get(&id),
    }))
}

fn don_inspect(task: u64, round: u32, args: &ScenarioArgs) -> Result<(), Failure> {
    let sim = simulate(args)?;
    let audit = sim
        .round_audit(task, round)
        .ok_or_else(|| Failure::Runtime(format!("no round {round} of task {task} in this scenario")))?;
    print_json(audit)
}

fn store_cat(cid: &str, dir: &Path, raw: bool) -> Result<(), Failure> {
    let cid: Cid = cid.parse().map_err(|e: autodfl::store::StoreError| Failure::Config(e.to_string()))?;
    let store = BlobStore::open(dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    let bytes = store.get(&cid).map_err(|e| Failure::Runtime(e.to_string()))?;
    if raw {
        std::io::stdout().write_all(&bytes)?;
    } else {
        println!("{}", hex::encode(&bytes));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    if let Some(path) = &cli.gas_calibration {
        // the core reads the calibration path from the environment
        std::env::set_var(CALIBRATION_ENV, path);
    }
    match cli.command {
        Command::Run { scenario, out } => run(&scenario, out.as_deref()),
        Command::GasTable { scenario, json } => {
            let rows = gas_table(&scenario.load()?)?;
            if json {
                print_json(&rows)
            } else {
                print_gas(&rows);
                Ok(())
            }
        }
        Command::Sweep { scenario, rates } => {
            let s = scenario.load()?;
            let rates = rates.unwrap_or_else(|| s.throughput.send_rates.clone());
            if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                return Err(Failure::Config("send rates must be positive".into()));
            }
            println!("{:<5} {:<18} {:>10} {:>10} {:>10}", "layer", "function", "send_rate", "tps", "latency_s");
            for r in throughput_sweep(&s, &rates) {
                println!(
                    "{:<5} {:<18} {:>10.1} {:>10.1} {:>10.3}",
                    r.layer, r.function, r.send_rate, r.tps, r.latency_s
                );
            }
            Ok(())
        }
        Command::Rep {
            command: RepCommand::Eval { record },
        } => rep_eval(record.as_deref()),
        Command::Inspect {
            command: InspectCommand::Task { id, scenario },
        } => inspect_task(id, &scenario),
        Command::Don {
            command: DonCommand::Inspect { task, round, scenario },
        } => don_inspect(task, round, &scenario),
        Command::Store {
            command: StoreCommand::Cat { cid, dir, raw },
        } => store_cat(&cid, &dir, raw),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
