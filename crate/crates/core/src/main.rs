use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use opsplit::bench::{self, ExperimentConfig, OracleOptions};
use opsplit::hwsim::Residence;
use opsplit::model::{gen_trace, preset_state, TraceKind};
use opsplit::partitioner::{dp_partition, CostModel, Objective, TrueCost};
use opsplit::profiler::{self, gen_dataset, Dataset, ProfilerModel, TrainConfig};
use opsplit::runtime::{run_baseline, Scheme};
use opsplit::Error;

const EXIT_CHECK: u8 = 1;
const EXIT_ARGS: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_TRAIN: u8 = 4;

#[derive(Parser)]
#[command(name = "opsplit", version, about = "Energy-aware CPU/GPU operator partitioning on a simulated SoC")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// JSON experiment config; flags given here override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Device spec JSON path or `builtin:soc_default`.
    #[arg(long, global = true)]
    spec: Option<String>,
    /// Operator graph JSON path or `builtin:yolo_like`.
    #[arg(long, global = true)]
    graph: Option<String>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a labelled profiling dataset as CSV.
    GenData {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        /// Output file; defaults to <out-dir>/dataset.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train both regressors and the GRU corrector.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output file; defaults to <out-dir>/profiler.json.
        #[arg(long)]
        model_out: Option<PathBuf>,
        /// Fresh samples used for the held-out MAPE report.
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
        holdout: u64,
        #[arg(long, default_value_t = 99)]
        holdout_seed: u64,
    },
    /// Plan one frame at a preset's base state and print the plan JSON.
    Plan {
        /// Trained profiler; omit with --true-cost.
        #[arg(long, required_unless_present = "true_cost")]
        model: Option<PathBuf>,
        #[arg(long, default_value = "high")]
        preset: String,
        #[arg(long, value_enum, default_value_t = ObjectiveArg::MinEnergy)]
        objective: ObjectiveArg,
        /// Plan against the noise-free simulator instead of the profiler.
        #[arg(long)]
        true_cost: bool,
    },
    /// Run one scheme over a trace and write per-frame results.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "high")]
        preset: String,
        #[arg(long, default_value = "AdaOper")]
        scheme: Scheme,
        #[arg(long)]
        trace: Option<TraceKind>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        frames: Option<u64>,
    },
    /// Run every scheme on every preset with paired seeds.
    Compare {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trace: Option<TraceKind>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        frames: Option<u64>,
    },
    /// Check the DP against exhaustive search and the simulator golden values.
    OracleCheck {
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
        min_ops: u64,
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
        max_ops: u64,
        /// Harness sensitivity fixture: plan with transfer costs zeroed.
        #[arg(long, hide = true)]
        zero_comm_fixture: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    MinEnergy,
    MinLatency,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        Self { code, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Parse(_) | Error::Validation { .. } => EXIT_IO,
            Error::InvalidArgument(_) | Error::UnknownPreset(_) => EXIT_ARGS,
            _ => EXIT_CHECK,
        };
        Self::new(code, e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            eprintln!("\n{}", Cli::command().render_usage());
            return ExitCode::from(EXIT_ARGS);
        }
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn config(g: &Global) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(s) = &g.spec {
        cfg.spec = s.clone();
    }
    if let Some(s) = &g.graph {
        cfg.graph = s.clone();
    }
    if let Some(d) = &g.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CmdResult {
    let mut cfg = config(&cli.global)?;
    match cli.cmd {
        Cmd::GenData { n, out } => {
            let spec = cfg.load_spec()?;
            let data = gen_dataset(&spec, n as usize, cfg.seed)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.join("dataset.csv"));
            data.write_csv(&out)?;
            println!("wrote {} rows to {}", data.len(), out.display());
        }
        Cmd::Train {
            data,
            model_out,
            holdout,
            holdout_seed,
        } => train(&cfg, &data, model_out, holdout as usize, holdout_seed)?,
        Cmd::Plan {
            model,
            preset,
            objective,
            true_cost,
        } => {
            let graph = cfg.load_graph()?;
            let spec = cfg.load_spec()?;
            let state = preset_state(&preset)?;
            let budget = cfg.budget(&graph, &spec, &preset)?;
            let dp = cfg.dp_config(budget).with_objective(match objective {
                ObjectiveArg::MinEnergy => Objective::MinEnergy,
                ObjectiveArg::MinLatency => Objective::MinLatency,
            });
            let loaded = match &model {
                Some(p) if !true_cost => Some(ProfilerModel::load(p)?),
                _ => None,
            };
            let truth = TrueCost { spec: &spec };
            let profiled = loaded.as_ref().map(|m| m.cost_model(&spec));
            let cost: &dyn CostModel = match &profiled {
                Some(c) => c,
                None => &truth,
            };
            let plan = dp_partition(&graph, 0, Residence::OnCpu, 0.0, cost, &state, &dp)?;
            let json = plan.to_json_string() + "\n";
            let out = cfg.out_dir.join(format!("plan_{preset}.json"));
            bench::write_atomic(&out, json.as_bytes())?;
            print!("{json}");
            eprintln!("budget {budget:.6} s; wrote {}", out.display());
        }
        Cmd::Simulate {
            model,
            preset,
            scheme,
            trace,
            frames,
        } => {
            if let Some(t) = trace {
                cfg.trace = t;
            }
            if let Some(f) = frames {
                cfg.frames = f as usize;
            }
            let graph = cfg.load_graph()?;
            let spec = cfg.load_spec()?;
            let profiler = ProfilerModel::load(&model)?;
            let budget = cfg.budget(&graph, &spec, &preset)?;
            let trace = gen_trace(cfg.trace, &preset_state(&preset)?, cfg.frames, cfg.seed, &spec)?;
            let s = run_baseline(
                &graph,
                &spec,
                &trace,
                scheme,
                &profiler,
                &cfg.policy(budget),
                &cfg.dp_config(budget),
                cfg.seed,
            )?;
            let mut csv = String::from(bench::CSV_HEADER);
            csv.push('\n');
            bench::csv_rows(scheme, &s, &mut csv);
            let out = cfg.out_dir.join(format!("simulate_{preset}_{scheme}.csv"));
            bench::write_atomic(&out, csv.as_bytes())?;
            println!(
                "{scheme} on {preset}: mean latency {:.6} s, mean energy {:.6} J, {} replans, {}/{} frames within {budget:.6} s, MAPE {:.2}%",
                s.mean_latency_s,
                s.mean_energy_j,
                s.replan_count,
                s.reports.iter().filter(|r| r.met_budget).count(),
                s.reports.len(),
                s.mape_pct
            );
            println!("wrote {}", out.display());
        }
        Cmd::Compare { model, trace, frames } => {
            if let Some(t) = trace {
                cfg.trace = t;
            }
            if let Some(f) = frames {
                cfg.frames = f as usize;
            }
            let profiler = ProfilerModel::load(&model)?;
            let outcome = bench::compare(&cfg, &profiler)?;
            let written = bench::write_compare_outputs(&cfg.out_dir, &outcome)?;
            print!("{}", bench::format_summary(&outcome.summary));
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        Cmd::OracleCheck {
            seeds,
            min_ops,
            max_ops,
            zero_comm_fixture,
        } => {
            if min_ops > max_ops {
                return Err(Failure::new(EXIT_ARGS, "--min-ops must not exceed --max-ops"));
            }
            let spec = cfg.load_spec()?;
            let opts = OracleOptions {
                min_ops: min_ops as usize,
                max_ops: max_ops as usize,
                seeds,
                base_seed: cfg.seed,
                zero_comm_dp: zero_comm_fixture,
            };
            let report = bench::oracle_check(&spec, &opts)?;
            for c in report.cases.iter().filter(|c| !c.passed()) {
                println!("FAIL {}", c.describe());
                for f in &c.failures {
                    println!("    {f}");
                }
            }
            if let Some(g) = &report.golden_failure {
                println!("FAIL {g}");
            } else {
                println!("golden values match");
            }
            println!("{} of {} cases passed", report.passed(), report.cases.len());
            if !report.all_passed() {
                return Err(Failure::new(EXIT_CHECK, "oracle check failed"));
            }
            println!("{} cases passed", report.cases.len());
        }
    }
    Ok(())
}

fn train(
    cfg: &ExperimentConfig,
    data: &Path,
    model_out: Option<PathBuf>,
    holdout: usize,
    holdout_seed: u64,
) -> CmdResult {
    let graph = cfg.load_graph()?;
    let spec = cfg.load_spec()?;
    let dataset = Dataset::read_csv(data)?;
    let tcfg = TrainConfig {
        seed: cfg.seed,
        budget_factor: cfg.budget_factor,
        ..TrainConfig::default()
    };
    let (model, summary) = profiler::train_profiler(&dataset, &graph, &spec, &tcfg)
        .map_err(|e| Failure::new(EXIT_TRAIN, format!("training failed: {e}")))?;
    let test = gen_dataset(&spec, holdout, holdout_seed)?;
    let lat = profiler::mape_pct(&model.gbdt_latency, &test.features, &test.log_latency);
    let energy = profiler::mape_pct(&model.gbdt_energy, &test.features, &test.log_energy);
    let out = model_out.unwrap_or_else(|| cfg.out_dir.join("profiler.json"));
    model.save(&out)?;
    if let Some(last) = summary.gru_report.epoch_mse.last() {
        println!("gru final epoch mse {last:.6}");
    }
    println!("held-out MAPE ({holdout} samples): latency {lat:.2}%, energy {energy:.2}%");
    println!("wrote {}", out.display());
    Ok(())
}
