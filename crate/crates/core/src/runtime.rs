//! Closed-loop execution: plan a frame, run it on the simulator, feed the
//! observations back, and re-plan the rest of the frame when observed energy
//! drifts away from what the plan expected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwsim::{self, CostSample, ExecutionRecord, NoiseSource, PartitionDecision, Residence};
use crate::model::{DeviceSpec, DeviceState, Operator, OperatorGraph, WorkloadTrace};
use crate::partitioner::{self, CostModel, DpConfig, TrueCost};
use crate::profiler::ProfilerModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplanScope {
    MidFrame,
    FrameBoundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationPolicy {
    pub energy_dev_threshold: f64,
    pub min_ops_between_replans: usize,
    pub latency_budget_s: f64,
    pub replan_scope: ReplanScope,
    /// When false, observations never reach the profiler and its correction
    /// stays at (1, 1).
    pub apply_corrections: bool,
}

impl AdaptationPolicy {
    pub fn new(latency_budget_s: f64) -> Self {
        Self {
            energy_dev_threshold: 0.15,
            min_ops_between_replans: 3,
            latency_budget_s,
            replan_scope: ReplanScope::MidFrame,
            apply_corrections: true,
        }
    }

    pub fn without_replanning(mut self) -> Self {
        self.energy_dev_threshold = f64::INFINITY;
        self
    }

    pub fn without_corrections(mut self) -> Self {
        self.apply_corrections = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.energy_dev_threshold > 0.0) {
            return Err(Error::InvalidArgument("energy deviation threshold must be > 0".into()));
        }
        if !(self.latency_budget_s > 0.0) {
            return Err(Error::InvalidArgument("latency budget must be > 0".into()));
        }
        if self.min_ops_between_replans == 0 {
            return Err(Error::InvalidArgument("min_ops_between_replans must be >= 1".into()));
        }
        Ok(())
    }
}

/// A cost model the runtime can plan with and feed observations to.
pub trait SessionModel {
    /// Forget everything learned in a previous session.
    fn reset(&mut self);
    /// Called right before each (re)plan.
    fn begin_plan(&mut self);
    fn planning_cost<'a>(&'a self, spec: &'a DeviceSpec) -> Box<dyn CostModel + 'a>;
    fn ingest(&mut self, rec: &ExecutionRecord, prev_state: &DeviceState, spec: &DeviceSpec) -> Result<()>;
}

impl SessionModel for ProfilerModel {
    fn reset(&mut self) {
        self.reset_session();
    }

    fn begin_plan(&mut self) {
        ProfilerModel::begin_plan(self);
    }

    fn planning_cost<'a>(&'a self, spec: &'a DeviceSpec) -> Box<dyn CostModel + 'a> {
        Box::new(self.cost_model(spec))
    }

    fn ingest(&mut self, rec: &ExecutionRecord, prev_state: &DeviceState, spec: &DeviceSpec) -> Result<()> {
        self.ingest_observation(rec, prev_state, spec)
    }
}

/// Perfect knowledge: plans with the noise-free simulator, learns nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct Oracle;

impl SessionModel for Oracle {
    fn reset(&mut self) {}

    fn begin_plan(&mut self) {}

    fn planning_cost<'a>(&'a self, spec: &'a DeviceSpec) -> Box<dyn CostModel + 'a> {
        Box::new(TrueCost { spec })
    }

    fn ingest(&mut self, _: &ExecutionRecord, _: &DeviceState, _: &DeviceSpec) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame_idx: usize,
    pub records: Vec<ExecutionRecord>,
    pub totals: CostSample,
    pub replans: usize,
    /// Which plan (0 = the frame's initial one) each record came from.
    pub plan_versions: Vec<usize>,
    pub met_budget: bool,
    /// Whether the frame's initial plan was predicted to fit the budget.
    pub plan_feasible: bool,
    /// Noise draws consumed; equal across schemes by construction.
    pub noise_draws: u64,
}

impl FrameReport {
    pub fn mape_pct(&self) -> f64 {
        mape_pct(self.records.iter())
    }
}

/// `100 * (exp(mean |log(obs / pred)|) - 1)` over latency and energy.
pub fn mape_pct<'a>(records: impl Iterator<Item = &'a ExecutionRecord>) -> f64 {
    100.0 * (mean_abs_log_error(records).exp() - 1.0)
}

/// Mean of `|log(obs / pred)|` over both latency and energy of every record.
pub fn mean_abs_log_error<'a>(records: impl Iterator<Item = &'a ExecutionRecord>) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for r in records {
        total += (r.observed.latency_s / r.predicted.latency_s).ln().abs();
        total += (r.observed.energy_j / r.predicted.energy_j).ln().abs();
        n += 2;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub reports: Vec<FrameReport>,
    pub total_latency_s: f64,
    pub total_energy_j: f64,
    pub mean_latency_s: f64,
    pub mean_energy_j: f64,
    pub replan_count: usize,
    pub mape_pct: f64,
}

impl SessionSummary {
    pub fn from_reports(reports: Vec<FrameReport>) -> Self {
        let frames = reports.len().max(1) as f64;
        let total_latency_s: f64 = reports.iter().map(|r| r.totals.latency_s).sum();
        let total_energy_j: f64 = reports.iter().map(|r| r.totals.energy_j).sum();
        let replan_count = reports.iter().map(|r| r.replans).sum();
        let mape = mape_pct(reports.iter().flat_map(|r| r.records.iter()));
        Self {
            total_latency_s,
            total_energy_j,
            mean_latency_s: total_latency_s / frames,
            mean_energy_j: total_energy_j / frames,
            replan_count,
            mape_pct: mape,
            reports,
        }
    }
}

fn frame_ctx(frame: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Frame {
        frame,
        source: Box::new(e),
    }
}

fn check_inputs(graph: &OperatorGraph, trace: &WorkloadTrace, spec: &DeviceSpec) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::InvalidArgument("trace has no frames".into()));
    }
    graph.validate()?;
    for s in &trace.states {
        s.validate(spec)?;
    }
    Ok(())
}

/// Runs `op` on the simulator, recording `predicted` as what the planner
/// expected for it.
fn run_op(
    op: &Operator,
    d: PartitionDecision,
    prev: Residence,
    predicted: CostSample,
    spec: &DeviceSpec,
    state: &DeviceState,
    rng: &mut NoiseSource,
) -> Result<(ExecutionRecord, Residence)> {
    let (mut rec, next) = hwsim::execute_op(op, d, prev, spec, state, rng)?;
    rec.predicted = predicted;
    Ok((rec, next))
}

/// The adaptive loop: per-frame min-energy plan, execution with noise,
/// energy-deviation-triggered re-planning of the remaining operators, and
/// observation feedback into `model`.
///
/// The deviation is measured over the operators run since the current plan
/// was made, so a re-plan starts from a clean slate. Frame `t` draws its
/// noise from stream `t` of `seed`.
pub fn run_session<M: SessionModel + ?Sized>(
    graph: &OperatorGraph,
    spec: &DeviceSpec,
    trace: &WorkloadTrace,
    model: &mut M,
    policy: &AdaptationPolicy,
    cfg: &DpConfig,
    seed: u64,
) -> Result<SessionSummary> {
    check_inputs(graph, trace, spec)?;
    policy.validate()?;
    let mut cfg = cfg.clone();
    cfg.latency_budget_s = policy.latency_budget_s;
    cfg.validate()?;
    model.reset();

    let n = graph.len();
    let mut last_ingested = trace.states[0];
    let mut reports = Vec::with_capacity(trace.len());
    for (t, state) in trace.states.iter().enumerate() {
        let ctx = frame_ctx(t);
        let mut rng = NoiseSource::with_stream(seed, t as u64);
        model.begin_plan();
        let plan = partitioner::dp_partition(
            graph,
            0,
            Residence::OnCpu,
            0.0,
            model.planning_cost(spec).as_ref(),
            state,
            &cfg,
        )
        .map_err(&ctx)?;
        let plan_feasible = plan.feasible;
        let mut decisions = plan.decisions;

        let mut records: Vec<ExecutionRecord> = Vec::with_capacity(n);
        let mut versions = Vec::with_capacity(n);
        let mut version = 0;
        let mut pending = 0; // records not yet ingested, at the tail of `records`
        let mut res = Residence::OnCpu;
        let mut elapsed = 0.0;
        let (mut obs_e, mut pred_e, mut since_plan) = (0.0, 0.0, 0usize);

        for k in 0..n {
            let op = &graph.ops[k];
            let d = decisions[k];
            let predicted = model.planning_cost(spec).cost(op, d, res, state).map_err(&ctx)?;
            let (rec, next) = run_op(op, d, res, predicted, spec, state, &mut rng).map_err(&ctx)?;
            res = next;
            elapsed += rec.observed.latency_s;
            obs_e += rec.observed.energy_j;
            pred_e += rec.predicted.energy_j;
            since_plan += 1;
            records.push(rec);
            versions.push(version);
            pending += 1;

            let deviation = (obs_e - pred_e).abs() / pred_e;
            let trigger = policy.replan_scope == ReplanScope::MidFrame
                && k + 1 < n
                && since_plan >= policy.min_ops_between_replans
                && deviation > policy.energy_dev_threshold;
            if trigger {
                if policy.apply_corrections {
                    for rec in &records[records.len() - pending..] {
                        model.ingest(rec, &last_ingested, spec).map_err(&ctx)?;
                        last_ingested = rec.state;
                    }
                }
                pending = 0;
                model.begin_plan();
                let tail = partitioner::dp_partition(
                    graph,
                    k + 1,
                    res,
                    elapsed,
                    model.planning_cost(spec).as_ref(),
                    state,
                    &cfg,
                )
                .map_err(&ctx)?;
                decisions.truncate(k + 1);
                decisions.extend(tail.decisions);
                version += 1;
                obs_e = 0.0;
                pred_e = 0.0;
                since_plan = 0;
            }
        }
        if policy.apply_corrections {
            for rec in &records[records.len() - pending..] {
                model.ingest(rec, &last_ingested, spec).map_err(&ctx)?;
                last_ingested = rec.state;
            }
        }

        let totals: CostSample = records.iter().map(|r| r.observed).sum();
        reports.push(FrameReport {
            frame_idx: t,
            met_budget: totals.latency_s <= policy.latency_budget_s,
            totals,
            replans: version,
            plan_versions: versions,
            records,
            plan_feasible,
            noise_draws: rng.draws(),
        });
    }
    Ok(SessionSummary::from_reports(reports))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    GpuOnly,
    LatencyMin,
    AdaOper,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::GpuOnly, Scheme::LatencyMin, Scheme::AdaOper];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::GpuOnly => "GpuOnly",
            Scheme::LatencyMin => "LatencyMin",
            Scheme::AdaOper => "AdaOper",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme `{s}`")))
    }
}

/// Runs one of the compared schemes. The two non-adaptive schemes plan every
/// frame from the uncorrected profiler and never feed observations back;
/// `AdaOper` is [`run_session`] on a private copy of the profiler. All three
/// use the same per-frame noise streams.
#[allow(clippy::too_many_arguments)]
pub fn run_baseline(
    graph: &OperatorGraph,
    spec: &DeviceSpec,
    trace: &WorkloadTrace,
    scheme: Scheme,
    profiler: &ProfilerModel,
    policy: &AdaptationPolicy,
    cfg: &DpConfig,
    seed: u64,
) -> Result<SessionSummary> {
    if scheme == Scheme::AdaOper {
        let mut p = profiler.clone();
        return run_session(graph, spec, trace, &mut p, policy, cfg, seed);
    }
    check_inputs(graph, trace, spec)?;
    policy.validate()?;
    let mut cfg = cfg.clone();
    cfg.latency_budget_s = policy.latency_budget_s;
    cfg.validate()?;
    let mut p = profiler.clone();
    p.reset_session();
    let cost = p.cost_model(spec);

    let mut reports = Vec::with_capacity(trace.len());
    for (t, state) in trace.states.iter().enumerate() {
        let ctx = frame_ctx(t);
        let (decisions, plan_feasible) = match scheme {
            Scheme::GpuOnly => (vec![PartitionDecision::GpuOnly; graph.len()], true),
            _ => {
                let plan = partitioner::latency_min_partition(graph, Residence::OnCpu, &cost, state, &cfg)
                    .map_err(&ctx)?;
                (plan.decisions, plan.feasible)
            }
        };
        let mut rng = NoiseSource::with_stream(seed, t as u64);
        let mut res = Residence::OnCpu;
        let mut records = Vec::with_capacity(graph.len());
        for (op, &d) in graph.ops.iter().zip(&decisions) {
            let predicted = cost.cost(op, d, res, state).map_err(&ctx)?;
            let (rec, next) = run_op(op, d, res, predicted, spec, state, &mut rng).map_err(&ctx)?;
            res = next;
            records.push(rec);
        }
        let totals: CostSample = records.iter().map(|r| r.observed).sum();
        reports.push(FrameReport {
            frame_idx: t,
            met_budget: totals.latency_s <= policy.latency_budget_s,
            totals,
            replans: 0,
            plan_versions: vec![0; records.len()],
            records,
            plan_feasible,
            noise_draws: rng.draws(),
        });
    }
    Ok(SessionSummary::from_reports(reports))
}
