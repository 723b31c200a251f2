//! Per-operator CPU/GPU split planning.
//!
//! The main planner is a bottom-up dynamic program over the chain whose state
//! is (tensor residence, cumulative-latency bucket). Each table cell keeps the
//! cheapest label that reached it together with that label's exact latency, so
//! the bucketing only decides which labels compete and never distorts the
//! reported totals. Only the previous stage's table is alive while the next
//! one is built; per-stage backpointers are kept for reconstruction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwsim::{self, CostSample, PartitionDecision, Residence};
use crate::model::{DeviceSpec, DeviceState, Operator, OperatorGraph};

pub const DEFAULT_RATIO_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Default number of latency buckets across the budget.
pub const DEFAULT_BUCKETS: f64 = 100.0;

/// Brute force refuses instances with more decision sequences than this.
pub const BRUTE_FORCE_LIMIT: f64 = 2e7;

/// Cost of running one operator under a decision, including moving its input
/// from `prev`.
pub trait CostModel {
    fn cost(
        &self,
        op: &Operator,
        d: PartitionDecision,
        prev: Residence,
        state: &DeviceState,
    ) -> Result<CostSample>;
}

impl<F> CostModel for F
where
    F: Fn(&Operator, PartitionDecision, Residence, &DeviceState) -> Result<CostSample>,
{
    fn cost(
        &self,
        op: &Operator,
        d: PartitionDecision,
        prev: Residence,
        state: &DeviceState,
    ) -> Result<CostSample> {
        self(op, d, prev, state)
    }
}

/// The simulator's noise-free ground truth as a planning oracle.
#[derive(Clone, Debug)]
pub struct TrueCost<'a> {
    pub spec: &'a DeviceSpec,
}

impl CostModel for TrueCost<'_> {
    fn cost(
        &self,
        op: &Operator,
        d: PartitionDecision,
        prev: Residence,
        state: &DeviceState,
    ) -> Result<CostSample> {
        hwsim::true_cost(op, d, prev, self.spec, state).map(|(c, _)| c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    MinEnergy,
    MinLatency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub latency_budget_s: f64,
    pub bucket_width_s: f64,
    pub ratio_grid: Vec<f64>,
    pub objective: Objective,
}

impl DpConfig {
    /// Min-energy planning with the default grid and `budget / 100` buckets.
    pub fn new(latency_budget_s: f64) -> Self {
        Self {
            latency_budget_s,
            bucket_width_s: latency_budget_s / DEFAULT_BUCKETS,
            ratio_grid: DEFAULT_RATIO_GRID.to_vec(),
            objective: Objective::MinEnergy,
        }
    }

    pub fn with_grid(mut self, grid: &[f64]) -> Self {
        self.ratio_grid = grid.to_vec();
        self
    }

    pub fn with_bucket_width(mut self, w: f64) -> Self {
        self.bucket_width_s = w;
        self
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.latency_budget_s.is_finite() && self.latency_budget_s > 0.0) {
            return Err(Error::InvalidArgument("latency budget must be > 0".into()));
        }
        if !(self.bucket_width_s > 0.0 && self.bucket_width_s <= self.latency_budget_s) {
            return Err(Error::InvalidArgument(
                "bucket width must be in (0, latency budget]".into(),
            ));
        }
        if self.ratio_grid.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::InvalidArgument("ratio grid values must be in (0, 1)".into()));
        }
        if self.ratio_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("ratio grid must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Number of in-budget buckets; index `B` is the overflow bucket.
    pub fn buckets(&self) -> usize {
        (self.latency_budget_s / self.bucket_width_s).ceil().max(1.0) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub decisions: Vec<PartitionDecision>,
    pub predicted_latency_s: f64,
    pub predicted_energy_j: f64,
    pub feasible: bool,
}

impl PartitionPlan {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// The allowed decisions for `op`, in tie-break order.
pub fn candidate_decisions(op: &Operator, cfg: &DpConfig) -> Vec<PartitionDecision> {
    hwsim::decision_grid(op, &cfg.ratio_grid)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DpStats {
    /// Largest number of value-table cells allocated at any one time.
    pub peak_table_entries: usize,
    pub cost_evaluations: usize,
}

#[derive(Clone, Copy)]
struct Label {
    energy: f64,
    latency: f64,
}

#[derive(Clone, Copy)]
struct Back {
    decision: usize,
    prev: usize,
}

/// Finite residence set: OnCpu, OnGpu, then one Split per grid ratio.
struct Residences<'a> {
    grid: &'a [f64],
}

impl Residences<'_> {
    fn len(&self) -> usize {
        2 + self.grid.len()
    }

    fn get(&self, i: usize) -> Residence {
        match i {
            0 => Residence::OnCpu,
            1 => Residence::OnGpu,
            k => Residence::Split(self.grid[k - 2]),
        }
    }

    fn index_of(&self, d: PartitionDecision) -> usize {
        match d {
            PartitionDecision::CpuOnly => 0,
            PartitionDecision::GpuOnly => 1,
            PartitionDecision::CoExec(r) => {
                2 + self
                    .grid
                    .iter()
                    .position(|&g| g == r)
                    .expect("co-execution ratio comes from the grid")
            }
        }
    }
}

fn eval<C: CostModel + ?Sized>(
    cost: &C,
    op: &Operator,
    d: PartitionDecision,
    prev: Residence,
    state: &DeviceState,
) -> Result<CostSample> {
    cost.cost(op, d, prev, state)
        .map_err(|e| Error::CostCallback {
            op: op.id,
            source: Box::new(e),
        })
}

fn check_start(graph: &OperatorGraph, start: usize) -> Result<()> {
    if start >= graph.len() {
        return Err(Error::InvalidStartIndex {
            start,
            len: graph.len(),
        });
    }
    Ok(())
}

/// Plans ops `start..n` given that the input of op `start` sits at `init` and
/// `consumed_latency_s` of the frame budget is already spent.
///
/// Returns the cheapest plan whose total (consumed plus planned latency) fits
/// the budget; when nothing fits, the fastest plan marked infeasible. With
/// [`Objective::MinLatency`] the bucket machinery is bypassed and the plan
/// minimizes latency, breaking ties by energy.
#[allow(clippy::too_many_arguments)]
pub fn dp_partition<C: CostModel + ?Sized>(
    graph: &OperatorGraph,
    start: usize,
    init: Residence,
    consumed_latency_s: f64,
    cost: &C,
    state: &DeviceState,
    cfg: &DpConfig,
) -> Result<PartitionPlan> {
    dp_partition_with_stats(graph, start, init, consumed_latency_s, cost, state, cfg).map(|(p, _)| p)
}

#[allow(clippy::too_many_arguments)]
pub fn dp_partition_with_stats<C: CostModel + ?Sized>(
    graph: &OperatorGraph,
    start: usize,
    init: Residence,
    consumed_latency_s: f64,
    cost: &C,
    state: &DeviceState,
    cfg: &DpConfig,
) -> Result<(PartitionPlan, DpStats)> {
    check_start(graph, start)?;
    cfg.validate()?;
    if !(consumed_latency_s >= 0.0) {
        return Err(Error::InvalidArgument("consumed latency must be >= 0".into()));
    }
    let mut stats = DpStats::default();
    if cfg.objective == Objective::MinEnergy {
        if let Some(plan) =
            min_energy(graph, start, init, consumed_latency_s, cost, state, cfg, &mut stats)?
        {
            return Ok((plan, stats));
        }
    }
    let mut plan = min_latency(graph, start, init, cost, state, cfg, &mut stats)?;
    plan.feasible = consumed_latency_s + plan.predicted_latency_s <= cfg.latency_budget_s;
    if cfg.objective == Objective::MinEnergy {
        // min_energy already established that nothing fits
        plan.feasible = false;
    }
    Ok((plan, stats))
}

#[allow(clippy::too_many_arguments)]
fn min_energy<C: CostModel + ?Sized>(
    graph: &OperatorGraph,
    start: usize,
    init: Residence,
    consumed: f64,
    cost: &C,
    state: &DeviceState,
    cfg: &DpConfig,
    stats: &mut DpStats,
) -> Result<Option<PartitionPlan>> {
    let res = Residences {
        grid: &cfg.ratio_grid,
    };
    let nb = cfg.buckets() + 1;
    let overflow = nb - 1;
    let cells = res.len() * nb;
    let w = cfg.bucket_width_s;
    let bucket_of = |latency: f64| -> usize {
        let b = ((consumed + latency) / w).floor();
        if b >= overflow as f64 {
            overflow
        } else {
            b as usize
        }
    };

    let mut backs: Vec<Vec<Option<Back>>> = Vec::with_capacity(graph.len() - start);
    let mut prev_table: Vec<Option<Label>> = Vec::new();
    let mut prev_cells: Vec<usize> = Vec::new();

    for (stage, op) in graph.ops[start..].iter().enumerate() {
        let cands = candidate_decisions(op, cfg);
        let mut table: Vec<Option<Label>> = vec![None; cells];
        let mut back: Vec<Option<Back>> = vec![None; cells];
        stats.peak_table_entries = stats.peak_table_entries.max(prev_table.len() + table.len());

        // (prev cell, prev label, prev residence) triples feeding this stage
        let sources: Vec<(usize, Label, Residence)> = if stage == 0 {
            vec![(usize::MAX, Label { energy: 0.0, latency: 0.0 }, init)]
        } else {
            prev_cells
                .iter()
                .map(|&c| (c, prev_table[c].expect("live cell"), res.get(c / nb)))
                .collect()
        };

        // transition costs depend on the previous residence only
        let mut cost_cache: Vec<Option<Vec<CostSample>>> = vec![None; res.len() + 1];
        for &(cell, label, prev_res) in &sources {
            let key = if cell == usize::MAX { res.len() } else { cell / nb };
            if cost_cache[key].is_none() {
                let row = cands
                    .iter()
                    .map(|&d| eval(cost, op, d, prev_res, state))
                    .collect::<Result<Vec<_>>>()?;
                stats.cost_evaluations += row.len();
                cost_cache[key] = Some(row);
            }
            let row = cost_cache[key].as_ref().expect("filled above");
            for (k, (&d, c)) in cands.iter().zip(row).enumerate() {
                let next = Label {
                    energy: label.energy + c.energy_j,
                    latency: label.latency + c.latency_s,
                };
                let idx = res.index_of(d) * nb + bucket_of(next.latency);
                let better = match table[idx] {
                    None => true,
                    Some(cur) => next.energy < cur.energy,
                };
                if better {
                    table[idx] = Some(next);
                    back[idx] = Some(Back {
                        decision: k,
                        prev: cell,
                    });
                }
            }
        }

        prev_cells = (0..cells).filter(|&c| table[c].is_some()).collect();
        prev_table = table;
        backs.push(back);
    }

    let mut best: Option<(usize, Label)> = None;
    for &c in &prev_cells {
        let label = prev_table[c].expect("live cell");
        if c % nb == overflow || consumed + label.latency > cfg.latency_budget_s {
            continue;
        }
        if best.is_none_or(|(_, b)| label.energy < b.energy) {
            best = Some((c, label));
        }
    }
    let Some((mut cell, label)) = best else {
        return Ok(None);
    };

    let mut decisions = Vec::with_capacity(backs.len());
    for (stage, back) in backs.iter().enumerate().rev() {
        let b = back[cell].expect("reachable cell has a backpointer");
        let op = &graph.ops[start + stage];
        decisions.push(candidate_decisions(op, cfg)[b.decision]);
        cell = b.prev;
    }
    decisions.reverse();
    Ok(Some(PartitionPlan {
        decisions,
        predicted_latency_s: label.latency,
        predicted_energy_j: label.energy,
        feasible: true,
    }))
}

fn min_latency<C: CostModel + ?Sized>(
    graph: &OperatorGraph,
    start: usize,
    init: Residence,
    cost: &C,
    state: &DeviceState,
    cfg: &DpConfig,
    stats: &mut DpStats,
) -> Result<PartitionPlan> {
    let res = Residences {
        grid: &cfg.ratio_grid,
    };
    let better = |a: &Label, b: &Label| {
        a.latency < b.latency || (a.latency == b.latency && a.energy < b.energy)
    };
    let mut backs: Vec<Vec<Option<Back>>> = Vec::with_capacity(graph.len() - start);
    let mut prev: Vec<Option<Label>> = Vec::new();

    for (stage, op) in graph.ops[start..].iter().enumerate() {
        let cands = candidate_decisions(op, cfg);
        let mut table: Vec<Option<Label>> = vec![None; res.len()];
        let mut back: Vec<Option<Back>> = vec![None; res.len()];
        stats.peak_table_entries = stats.peak_table_entries.max(prev.len() + table.len());
        let sources: Vec<(usize, Label, Residence)> = if stage == 0 {
            vec![(usize::MAX, Label { energy: 0.0, latency: 0.0 }, init)]
        } else {
            (0..res.len())
                .filter_map(|i| prev[i].map(|l| (i, l, res.get(i))))
                .collect()
        };
        for (cell, label, prev_res) in sources {
            for (k, &d) in cands.iter().enumerate() {
                let c = eval(cost, op, d, prev_res, state)?;
                stats.cost_evaluations += 1;
                let next = Label {
                    energy: label.energy + c.energy_j,
                    latency: label.latency + c.latency_s,
                };
                let idx = res.index_of(d);
                if table[idx].is_none_or(|cur| better(&next, &cur)) {
                    table[idx] = Some(next);
                    back[idx] = Some(Back {
                        decision: k,
                        prev: cell,
                    });
                }
            }
        }
        prev = table;
        backs.push(back);
    }

    let (mut cell, label) = (0..res.len())
        .filter_map(|i| prev[i].map(|l| (i, l)))
        .reduce(|a, b| if better(&b.1, &a.1) { b } else { a })
        .expect("at least one decision per operator");
    let mut decisions = Vec::with_capacity(backs.len());
    for (stage, back) in backs.iter().enumerate().rev() {
        let b = back[cell].expect("reachable cell has a backpointer");
        decisions.push(candidate_decisions(&graph.ops[start + stage], cfg)[b.decision]);
        cell = b.prev;
    }
    decisions.reverse();
    Ok(PartitionPlan {
        decisions,
        predicted_latency_s: label.latency,
        predicted_energy_j: label.energy,
        feasible: label.latency <= cfg.latency_budget_s,
    })
}

/// Latency-first baseline: the same DP with [`Objective::MinLatency`].
pub fn latency_min_partition<C: CostModel + ?Sized>(
    graph: &OperatorGraph,
    init: Residence,
    cost: &C,
    state: &DeviceState,
    cfg: &DpConfig,
) -> Result<PartitionPlan> {
    let cfg = cfg.clone().with_objective(Objective::MinLatency);
    dp_partition(graph, 0, init, 0.0, cost, state, &cfg)
}

/// Sums the callback over `decisions` for ops `start..`, threading residence.
pub fn refold<C: CostModel + ?Sized>(
    graph: &OperatorGraph,
    start: usize,
    init: Residence,
    decisions: &[PartitionDecision],
    cost: &C,
    state: &DeviceState,
) -> Result<CostSample> {
    let mut prev = init;
    let mut total = CostSample::ZERO;
    for (op, &d) in graph.ops[start..].iter().zip(decisions) {
        total += eval(cost, op, d, prev, state)?;
        prev = d.residence();
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BruteForceStats {
    pub sequences: u64,
}

/// Exhaustive search over every decision sequence with exact residence
/// threading; the reference the DP is checked against.
pub fn brute_force_partition<C: CostModel + ?Sized>(
    graph: &OperatorGraph,
    init: Residence,
    cost: &C,
    state: &DeviceState,
    cfg: &DpConfig,
) -> Result<PartitionPlan> {
    brute_force_partition_with_stats(graph, init, cost, state, cfg).map(|(p, _)| p)
}

pub fn brute_force_partition_with_stats<C: CostModel + ?Sized>(
    graph: &OperatorGraph,
    init: Residence,
    cost: &C,
    state: &DeviceState,
    cfg: &DpConfig,
) -> Result<(PartitionPlan, BruteForceStats)> {
    cfg.validate()?;
    let cands: Vec<Vec<PartitionDecision>> =
        graph.ops.iter().map(|op| candidate_decisions(op, cfg)).collect();
    let size: f64 = cands.iter().map(|c| c.len() as f64).product();
    if size > BRUTE_FORCE_LIMIT {
        return Err(Error::SearchSpaceTooLarge {
            size,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    struct Search<'a, C: ?Sized> {
        graph: &'a OperatorGraph,
        cands: &'a [Vec<PartitionDecision>],
        cost: &'a C,
        state: &'a DeviceState,
        budget: f64,
        path: Vec<PartitionDecision>,
        best_feasible: Option<(Vec<PartitionDecision>, CostSample)>,
        fastest: Option<(Vec<PartitionDecision>, CostSample)>,
        sequences: u64,
    }

    impl<C: CostModel + ?Sized> Search<'_, C> {
        fn walk(&mut self, i: usize, prev: Residence, acc: CostSample) -> Result<()> {
            if i == self.graph.len() {
                self.sequences += 1;
                if acc.latency_s <= self.budget
                    && self
                        .best_feasible
                        .as_ref()
                        .is_none_or(|(_, b)| acc.energy_j < b.energy_j)
                {
                    self.best_feasible = Some((self.path.clone(), acc));
                }
                if self.fastest.as_ref().is_none_or(|(_, b)| {
                    acc.latency_s < b.latency_s
                        || (acc.latency_s == b.latency_s && acc.energy_j < b.energy_j)
                }) {
                    self.fastest = Some((self.path.clone(), acc));
                }
                return Ok(());
            }
            let op = &self.graph.ops[i];
            for k in 0..self.cands[i].len() {
                let d = self.cands[i][k];
                let c = eval(self.cost, op, d, prev, self.state)?;
                self.path.push(d);
                self.walk(i + 1, d.residence(), acc + c)?;
                self.path.pop();
            }
            Ok(())
        }
    }

    let mut s = Search {
        graph,
        cands: &cands,
        cost,
        state,
        budget: cfg.latency_budget_s,
        path: Vec::with_capacity(graph.len()),
        best_feasible: None,
        fastest: None,
        sequences: 0,
    };
    s.walk(0, init, CostSample::ZERO)?;
    let stats = BruteForceStats {
        sequences: s.sequences,
    };
    let budget = cfg.latency_budget_s;
    let (decisions, total, feasible) = match (cfg.objective, s.best_feasible, s.fastest) {
        (Objective::MinEnergy, Some((d, c)), _) => (d, c, true),
        (_, _, Some((d, c))) => {
            let ok = c.latency_s <= budget && cfg.objective == Objective::MinLatency;
            (d, c, ok)
        }
        (_, _, None) => unreachable!("every operator has at least two candidates"),
    };
    let plan = PartitionPlan {
        decisions,
        predicted_latency_s: total.latency_s,
        predicted_energy_j: total.energy_j,
        feasible,
    };
    Ok((plan, stats))
}
