//! DP-versus-exhaustive-search verification on random small chains, plus the
//! simulator golden-value check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::Result;
use crate::hwsim::{self, CostSample, PartitionDecision, Residence};
use crate::model::{
    preset_state, synth_yolo_like, DeviceSpec, DeviceState, OpKind, Operator, OperatorGraph,
    TensorSpec,
};
use crate::partitioner::{
    brute_force_partition, dp_partition, refold, CostModel, DpConfig, Objective, TrueCost,
};

pub const ORACLE_GRID: [f64; 3] = [0.25, 0.5, 0.75];
/// Bucket width as a fraction of the budget.
pub const ORACLE_BUCKETS: f64 = 400.0;
pub const GOLDEN_REL_TOL: f64 = 1e-9;

const GOLDEN_JSON: &str = include_str!("../../golden/hwsim_yolo_gpuonly.json");

#[derive(Clone, Debug, PartialEq)]
pub struct OracleOptions {
    pub min_ops: usize,
    pub max_ops: usize,
    pub seeds: u64,
    pub base_seed: u64,
    /// Test fixture: the DP plans with transfers priced at zero while every
    /// check still uses the true cost. A correct harness must flag it.
    pub zero_comm_dp: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            min_ops: 3,
            max_ops: 8,
            seeds: 20,
            base_seed: 0,
            zero_comm_dp: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleCase {
    pub n: usize,
    pub seed: u64,
    pub budget_s: f64,
    pub bucket_width_s: f64,
    pub dp_latency_s: f64,
    pub dp_energy_j: f64,
    pub oracle_latency_s: f64,
    pub oracle_energy_j: f64,
    pub oracle_feasible: bool,
    /// Empty when the case passed.
    pub failures: Vec<String>,
}

impl OracleCase {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn describe(&self) -> String {
        format!(
            "n={} seed={}: budget {:.6e} s; dp {:.9e} s / {:.9e} J; oracle {:.9e} s / {:.9e} J{}",
            self.n,
            self.seed,
            self.budget_s,
            self.dp_latency_s,
            self.dp_energy_j,
            self.oracle_latency_s,
            self.oracle_energy_j,
            if self.oracle_feasible { "" } else { " (infeasible)" }
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OracleReport {
    pub cases: Vec<OracleCase>,
    /// Golden-value mismatch, if any.
    pub golden_failure: Option<String>,
}

impl OracleReport {
    pub fn passed(&self) -> usize {
        self.cases.iter().filter(|c| c.passed()).count()
    }

    pub fn all_passed(&self) -> bool {
        self.golden_failure.is_none() && self.cases.iter().all(OracleCase::passed)
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// A random chain of `n` operators and a random device state. Roughly one
/// operator in five is indivisible.
pub fn random_instance(n: usize, seed: u64, spec: &DeviceSpec) -> Result<(OperatorGraph, DeviceState)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((n as u64) << 32));
    let mut bytes = log_uniform(&mut rng, 1e4, 1e7) as u64;
    let ops = (0..n)
        .map(|id| {
            let kind = OpKind::ALL[rng.random_range(0..OpKind::ALL.len())];
            let out = log_uniform(&mut rng, 1e4, 1e7) as u64;
            let op = Operator {
                id,
                kind,
                flops: log_uniform(&mut rng, 1e6, 2e9),
                input: TensorSpec::new(bytes),
                output: TensorSpec::new(out),
                divisible: rng.random_bool(0.8),
            };
            bytes = out;
            op
        })
        .collect();
    let graph = OperatorGraph::new(format!("chain{n}_{seed}"), ops)?;
    let state = DeviceState {
        cpu_freq: rng.random_range(0.4..=1.0) * spec.cpu.f_max,
        gpu_freq: rng.random_range(0.4..=1.0) * spec.gpu.f_max,
        cpu_util: rng.random_range(0.0..0.9),
        gpu_util: rng.random_range(0.0..0.9),
    };
    Ok((graph, state))
}

struct ZeroComm<'a> {
    spec: &'a DeviceSpec,
}

impl CostModel for ZeroComm<'_> {
    fn cost(
        &self,
        op: &Operator,
        d: PartitionDecision,
        _prev: Residence,
        state: &DeviceState,
    ) -> Result<CostSample> {
        hwsim::compute_cost(op, d, self.spec, state)
    }
}

/// One DP-vs-oracle case. The budget is placed between the fastest plan's
/// latency and the unconstrained min-energy plan's latency so it binds.
pub fn oracle_case(n: usize, seed: u64, spec: &DeviceSpec, zero_comm_dp: bool) -> Result<OracleCase> {
    let (graph, state) = random_instance(n, seed, spec)?;
    let truth = TrueCost { spec };
    let probe = DpConfig::new(1e9).with_grid(&ORACLE_GRID);
    let fastest = brute_force_partition(
        &graph,
        Residence::OnCpu,
        &truth,
        &state,
        &probe.clone().with_objective(Objective::MinLatency),
    )?;
    let greedy = brute_force_partition(&graph, Residence::OnCpu, &truth, &state, &probe)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ n as u64);
    let lo = fastest.predicted_latency_s;
    let hi = greedy.predicted_latency_s.max(lo * 1.05);
    let budget = lo + rng.random_range(0.05..1.0) * (hi - lo);
    let cfg = DpConfig::new(budget)
        .with_grid(&ORACLE_GRID)
        .with_bucket_width(budget / ORACLE_BUCKETS);
    let w = cfg.bucket_width_s;

    let oracle = brute_force_partition(&graph, Residence::OnCpu, &truth, &state, &cfg)?;
    let dp = if zero_comm_dp {
        dp_partition(&graph, 0, Residence::OnCpu, 0.0, &ZeroComm { spec }, &state, &cfg)?
    } else {
        dp_partition(&graph, 0, Residence::OnCpu, 0.0, &truth, &state, &cfg)?
    };
    let actual = refold(&graph, 0, Residence::OnCpu, &dp.decisions, &truth, &state)?;

    let mut failures = Vec::new();
    if actual.latency_s != dp.predicted_latency_s || actual.energy_j != dp.predicted_energy_j {
        failures.push(format!(
            "plan totals {:.9e} s / {:.9e} J differ from true refold {:.9e} s / {:.9e} J",
            dp.predicted_latency_s, dp.predicted_energy_j, actual.latency_s, actual.energy_j
        ));
    }
    let slack = n as f64 * w;
    if dp.feasible && actual.latency_s > budget + slack {
        failures.push(format!(
            "latency {:.9e} s exceeds budget + n*w = {:.9e} s",
            actual.latency_s,
            budget + slack
        ));
    }
    let interior = oracle.feasible && oracle.predicted_latency_s <= budget - slack;
    if interior {
        if !dp.feasible {
            failures.push("dp reported infeasible although the oracle is interior-feasible".into());
        }
        if actual.energy_j > oracle.predicted_energy_j {
            failures.push(format!(
                "energy {:.9e} J exceeds oracle {:.9e} J",
                actual.energy_j, oracle.predicted_energy_j
            ));
        }
    }
    Ok(OracleCase {
        n,
        seed,
        budget_s: budget,
        bucket_width_s: w,
        dp_latency_s: actual.latency_s,
        dp_energy_j: actual.energy_j,
        oracle_latency_s: oracle.predicted_latency_s,
        oracle_energy_j: oracle.predicted_energy_j,
        oracle_feasible: oracle.feasible,
        failures,
    })
}

#[derive(Deserialize)]
struct Golden {
    latency_s: f64,
    energy_j: f64,
}

/// All-GPU yolo_like under "moderate", noise-free, against the values frozen
/// by the independent script. Returns a description of any mismatch.
pub fn golden_check(spec: &DeviceSpec) -> Result<Option<String>> {
    let golden: Golden = serde_json::from_str(GOLDEN_JSON).expect("bundled golden file parses");
    let graph = synth_yolo_like();
    let state = preset_state("moderate")?;
    let plan = vec![PartitionDecision::GpuOnly; graph.len()];
    let got = refold(&graph, 0, Residence::OnCpu, &plan, &TrueCost { spec }, &state)?;
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let (dl, de) = (rel(got.latency_s, golden.latency_s), rel(got.energy_j, golden.energy_j));
    Ok((dl > GOLDEN_REL_TOL || de > GOLDEN_REL_TOL).then(|| {
        format!(
            "golden mismatch: latency {:.16e} vs {:.16e} (rel {dl:.2e}), energy {:.16e} vs {:.16e} (rel {de:.2e})",
            got.latency_s, golden.latency_s, got.energy_j, golden.energy_j
        )
    }))
}

/// The full suite: `(max_ops - min_ops + 1) * seeds` cases plus the golden
/// check. The golden values are tied to the bundled device spec, so the
/// golden check always uses it; `spec` drives the random cases.
pub fn oracle_check(spec: &DeviceSpec, opts: &OracleOptions) -> Result<OracleReport> {
    let mut cases = Vec::new();
    for n in opts.min_ops..=opts.max_ops {
        for s in 0..opts.seeds {
            cases.push(oracle_case(n, opts.base_seed + s, spec, opts.zero_comm_dp)?);
        }
    }
    Ok(OracleReport {
        cases,
        golden_failure: golden_check(&DeviceSpec::soc_default())?,
    })
}
