//! Analytic ground-truth SoC: roofline compute time, cubic DVFS power,
//! proportional-bytes transfer cost and log-normal measurement noise.

use std::ops::{Add, AddAssign};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeviceSpec, DeviceState, Operator, OperatorGraph, ProcessorSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DecisionRepr", into = "DecisionRepr")]
pub enum PartitionDecision {
    CpuOnly,
    GpuOnly,
    /// Fraction of the work placed on the GPU, strictly inside (0, 1).
    CoExec(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    CpuOnly,
    GpuOnly,
    CoExec,
}

#[derive(Serialize, Deserialize)]
struct DecisionRepr {
    mode: Mode,
    gpu_fraction: f64,
}

impl TryFrom<DecisionRepr> for PartitionDecision {
    type Error = Error;

    fn try_from(r: DecisionRepr) -> Result<Self> {
        match r.mode {
            Mode::CpuOnly => Ok(PartitionDecision::CpuOnly),
            Mode::GpuOnly => Ok(PartitionDecision::GpuOnly),
            Mode::CoExec => PartitionDecision::co_exec(r.gpu_fraction),
        }
    }
}

impl From<PartitionDecision> for DecisionRepr {
    fn from(d: PartitionDecision) -> Self {
        DecisionRepr {
            mode: d.mode(),
            gpu_fraction: d.gpu_fraction(),
        }
    }
}

impl PartitionDecision {
    pub fn co_exec(gpu_fraction: f64) -> Result<Self> {
        if gpu_fraction > 0.0 && gpu_fraction < 1.0 {
            Ok(PartitionDecision::CoExec(gpu_fraction))
        } else {
            Err(Error::InvalidArgument(format!(
                "co-execution gpu_fraction {gpu_fraction} not in (0, 1)"
            )))
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            PartitionDecision::CpuOnly => Mode::CpuOnly,
            PartitionDecision::GpuOnly => Mode::GpuOnly,
            PartitionDecision::CoExec(_) => Mode::CoExec,
        }
    }

    pub fn gpu_fraction(self) -> f64 {
        match self {
            PartitionDecision::CpuOnly => 0.0,
            PartitionDecision::GpuOnly => 1.0,
            PartitionDecision::CoExec(r) => r,
        }
    }

    /// Where the operator's input has to live before it can run, which is
    /// also where its output ends up.
    pub fn residence(self) -> Residence {
        match self {
            PartitionDecision::CpuOnly => Residence::OnCpu,
            PartitionDecision::GpuOnly => Residence::OnGpu,
            PartitionDecision::CoExec(r) => Residence::Split(r),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Residence {
    OnCpu,
    OnGpu,
    Split(f64),
}

impl Residence {
    pub fn gpu_share(self) -> f64 {
        match self {
            Residence::OnCpu => 0.0,
            Residence::OnGpu => 1.0,
            Residence::Split(q) => q,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostSample {
    pub latency_s: f64,
    pub energy_j: f64,
}

impl CostSample {
    pub const ZERO: CostSample = CostSample {
        latency_s: 0.0,
        energy_j: 0.0,
    };

    pub fn new(latency_s: f64, energy_j: f64) -> Self {
        Self {
            latency_s,
            energy_j,
        }
    }
}

impl Add for CostSample {
    type Output = CostSample;

    fn add(self, rhs: CostSample) -> CostSample {
        CostSample::new(self.latency_s + rhs.latency_s, self.energy_j + rhs.energy_j)
    }
}

impl AddAssign for CostSample {
    fn add_assign(&mut self, rhs: CostSample) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for CostSample {
    fn sum<I: Iterator<Item = CostSample>>(iter: I) -> CostSample {
        iter.fold(CostSample::ZERO, Add::add)
    }
}

/// Share of a tensor that must cross the bus to go from `prev` to `need`.
pub fn moved_fraction(prev: Residence, need: Residence) -> f64 {
    (need.gpu_share() - prev.gpu_share()).abs()
}

pub fn comm_cost(prev: Residence, need: Residence, bytes: u64, spec: &DeviceSpec) -> CostSample {
    let m = moved_fraction(prev, need);
    if m == 0.0 {
        return CostSample::ZERO;
    }
    let latency = m * bytes as f64 / spec.bus_bw + spec.sync_overhead_s;
    CostSample::new(latency, spec.p_bus * latency)
}

fn busy_time(p: &ProcessorSpec, share: f64, op: &Operator, freq: f64, util: f64) -> f64 {
    if share == 0.0 {
        return 0.0;
    }
    let compute = share * op.flops / p.throughput(freq, util);
    let memory = share * op.traffic_bytes() / p.mem_bw;
    compute.max(memory)
}

/// Cost of running `op` under `d` with its input already in place.
pub fn compute_cost(
    op: &Operator,
    d: PartitionDecision,
    spec: &DeviceSpec,
    state: &DeviceState,
) -> Result<CostSample> {
    if matches!(d, PartitionDecision::CoExec(_)) && !op.divisible {
        return Err(Error::IndivisibleOperator { op: op.id });
    }
    let r = d.gpu_fraction();
    let t_cpu = busy_time(&spec.cpu, 1.0 - r, op, state.cpu_freq, state.cpu_util);
    let t_gpu = busy_time(&spec.gpu, r, op, state.gpu_freq, state.gpu_util);
    let latency = match d {
        PartitionDecision::CoExec(_) => t_cpu.max(t_gpu) + spec.sync_overhead_s,
        _ => t_cpu.max(t_gpu),
    };
    let energy = spec.cpu.power(state.cpu_freq) * t_cpu
        + spec.gpu.power(state.gpu_freq) * t_gpu
        + spec.p_idle * latency;
    Ok(CostSample::new(latency, energy))
}

/// Noise-free cost of `op` including moving its input from `prev`, plus the
/// residence of its output.
pub fn true_cost(
    op: &Operator,
    d: PartitionDecision,
    prev: Residence,
    spec: &DeviceSpec,
    state: &DeviceState,
) -> Result<(CostSample, Residence)> {
    let need = d.residence();
    let compute = compute_cost(op, d, spec, state)?;
    Ok((comm_cost(prev, need, op.input.bytes, spec) + compute, need))
}

/// Seeded normal source that counts its draws, so paired runs can prove
/// they consumed identical streams.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    draws: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            draws: 0,
        }
    }

    /// Independent stream `stream` under `seed`; used to give every frame
    /// its own noise regardless of how earlier frames were consumed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, draws: 0 }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.draws += 1;
        StandardNormal.sample(&mut self.rng)
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }
}

/// Applies multiplicative log-normal noise to each field. Always consumes
/// exactly two draws, even when `noise_sigma` is zero.
pub fn observe(cost: CostSample, spec: &DeviceSpec, rng: &mut NoiseSource) -> CostSample {
    let e_lat = rng.standard_normal();
    let e_energy = rng.standard_normal();
    let s = spec.noise_sigma;
    CostSample::new(
        cost.latency_s * (s * e_lat).exp(),
        cost.energy_j * (s * e_energy).exp(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub op_id: usize,
    pub decision: PartitionDecision,
    pub predicted: CostSample,
    pub observed: CostSample,
    pub state: DeviceState,
}

/// Runs one operator on the simulated device. `predicted` is filled with the
/// noise-free cost; callers with a learned model overwrite it.
pub fn execute_op(
    op: &Operator,
    d: PartitionDecision,
    prev: Residence,
    spec: &DeviceSpec,
    state: &DeviceState,
    rng: &mut NoiseSource,
) -> Result<(ExecutionRecord, Residence)> {
    let (cost, res) = true_cost(op, d, prev, spec, state)?;
    let rec = ExecutionRecord {
        op_id: op.id,
        decision: d,
        predicted: cost,
        observed: observe(cost, spec, rng),
        state: *state,
    };
    Ok((rec, res))
}

/// Executes a whole plan starting from host memory.
pub fn execute_plan(
    graph: &OperatorGraph,
    plan: &[PartitionDecision],
    spec: &DeviceSpec,
    state: &DeviceState,
    rng: &mut NoiseSource,
) -> Result<(Vec<ExecutionRecord>, CostSample)> {
    if plan.len() != graph.len() {
        return Err(Error::InvalidArgument(format!(
            "plan has {} decisions for {} operators",
            plan.len(),
            graph.len()
        )));
    }
    let mut res = Residence::OnCpu;
    let mut records = Vec::with_capacity(plan.len());
    for (op, &d) in graph.ops.iter().zip(plan) {
        let (rec, next) = execute_op(op, d, res, spec, state, rng)?;
        res = next;
        records.push(rec);
    }
    let totals = records.iter().map(|r| r.observed).sum();
    Ok((records, totals))
}

/// Every decision for an operator over a co-execution ratio grid, in the
/// canonical order: CpuOnly, GpuOnly, CoExec by ascending ratio.
pub fn decision_grid(op: &Operator, grid: &[f64]) -> Vec<PartitionDecision> {
    let mut out = vec![PartitionDecision::CpuOnly, PartitionDecision::GpuOnly];
    if op.divisible {
        out.extend(grid.iter().map(|&r| PartitionDecision::CoExec(r)));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conflict {
    pub op_id: usize,
    pub fastest: PartitionDecision,
    pub cheapest: PartitionDecision,
}

/// Operators whose latency-minimizing decision differs from their
/// energy-minimizing one, with inputs already resident (no transfer cost).
pub fn latency_energy_conflicts(
    graph: &OperatorGraph,
    spec: &DeviceSpec,
    state: &DeviceState,
    grid: &[f64],
) -> Result<Vec<Conflict>> {
    let mut out = Vec::new();
    for op in &graph.ops {
        let mut fastest = (f64::INFINITY, PartitionDecision::CpuOnly);
        let mut cheapest = (f64::INFINITY, PartitionDecision::CpuOnly);
        for d in decision_grid(op, grid) {
            let c = compute_cost(op, d, spec, state)?;
            if c.latency_s < fastest.0 {
                fastest = (c.latency_s, d);
            }
            if c.energy_j < cheapest.0 {
                cheapest = (c.energy_j, d);
            }
        }
        if fastest.1 != cheapest.1 {
            out.push(Conflict {
                op_id: op.id,
                fastest: fastest.1,
                cheapest: cheapest.1,
            });
        }
    }
    Ok(out)
}
