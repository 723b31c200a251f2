//! Learned cost model: two GBDT regressors over log latency and log energy,
//! and a GRU that turns the stream of runtime residuals into shared
//! multiplicative corrections.

pub mod dataset;
pub mod features;
pub mod gbdt;
pub mod gru;

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwsim::{self, CostSample, ExecutionRecord, NoiseSource, PartitionDecision, Residence};
use crate::model::{
    gen_trace, preset_state, DeviceSpec, DeviceState, Operator, OperatorGraph, TraceKind,
};
use crate::partitioner::{self, CostModel, DpConfig};

pub use dataset::{gen_dataset, gen_samples, Dataset, Sample};
pub use features::{featurize, FeatureVector, FEATURE_DIM, FEATURE_NAMES};
pub use gbdt::{mape_pct, train_gbdt, GbdtHyper, GbdtModel, Target, TrainReport};
pub use gru::{train_gru, Episode, GruCorrector, GruHyper, GruParams, GruReport};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ProfilerModel {
    pub gbdt_latency: GbdtModel,
    pub gbdt_energy: GbdtModel,
    pub gru: GruCorrector,
    /// Multiplicative (latency, energy) factors applied to raw predictions.
    pub correction: (f64, f64),
    /// Correction in force when the predictions now being observed were made.
    plan_correction: (f64, f64),
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    gbdt_latency: GbdtModel,
    gbdt_energy: GbdtModel,
    gru: gru::GruFile,
}

impl ProfilerModel {
    pub fn new(gbdt_latency: GbdtModel, gbdt_energy: GbdtModel, gru: GruCorrector) -> Self {
        Self {
            gbdt_latency,
            gbdt_energy,
            gru,
            correction: (1.0, 1.0),
            plan_correction: (1.0, 1.0),
        }
    }

    /// Uncorrected GBDT estimate of the compute cost (input already resident).
    pub fn predict_raw(
        &self,
        op: &Operator,
        d: PartitionDecision,
        state: &DeviceState,
        spec: &DeviceSpec,
    ) -> CostSample {
        let f = featurize(op, d, state, spec);
        CostSample::new(
            self.gbdt_latency.predict(&f).exp(),
            self.gbdt_energy.predict(&f).exp(),
        )
    }

    pub fn predict(
        &self,
        op: &Operator,
        d: PartitionDecision,
        state: &DeviceState,
        spec: &DeviceSpec,
    ) -> CostSample {
        let raw = self.predict_raw(op, d, state, spec);
        CostSample::new(raw.latency_s * self.correction.0, raw.energy_j * self.correction.1)
    }

    /// Marks the current correction as the one future observations should be
    /// compared against. Call whenever a plan is (re)made.
    pub fn begin_plan(&mut self) {
        self.plan_correction = self.correction;
    }

    /// Starts a fresh session: zero hidden state, identity correction.
    pub fn reset_session(&mut self) {
        self.gru.reset();
        self.correction = (1.0, 1.0);
        self.plan_correction = (1.0, 1.0);
    }

    /// Feeds one observation to the GRU and refreshes the correction.
    ///
    /// The residual handed to the GRU is taken against the uncorrected
    /// prediction, so the network estimates the absolute correction rather
    /// than an increment on top of its own previous output.
    pub fn ingest_observation(
        &mut self,
        rec: &ExecutionRecord,
        prev_state: &DeviceState,
        spec: &DeviceSpec,
    ) -> Result<()> {
        let x = gru_input(rec, prev_state, self.plan_correction, spec)?;
        let out = self.gru.advance(&x);
        self.correction = (out[0].exp(), out[1].exp());
        Ok(())
    }

    /// Planning callback: corrected predictions for `state` plus analytic
    /// transfer cost.
    pub fn cost_model<'a>(&'a self, spec: &'a DeviceSpec) -> ProfiledCost<'a> {
        ProfiledCost {
            model: self,
            spec,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn to_json_string(&self) -> String {
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            gbdt_latency: self.gbdt_latency.clone(),
            gbdt_energy: self.gbdt_energy.clone(),
            gru: (&self.gru.params).into(),
        };
        let mut s = serde_json::to_string(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model format_version {}",
                file.format_version
            )));
        }
        let params = GruParams::try_from(file.gru)?;
        Ok(Self::new(file.gbdt_latency, file.gbdt_energy, GruCorrector::from_params(params)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::bench::write_atomic(path.as_ref(), self.to_json_string().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

/// GRU input for one observation: uncorrected log residuals and the device
/// state change since `prev_state`.
pub fn gru_input(
    rec: &ExecutionRecord,
    prev_state: &DeviceState,
    correction: (f64, f64),
    spec: &DeviceSpec,
) -> Result<[f64; gru::INPUT_DIM]> {
    let (p, o) = (rec.predicted, rec.observed);
    if !(p.latency_s > 0.0 && p.energy_j > 0.0 && o.latency_s > 0.0 && o.energy_j > 0.0) {
        return Err(Error::NonPositiveCost { op: rec.op_id });
    }
    Ok([
        (o.latency_s / p.latency_s).ln() + correction.0.ln(),
        (o.energy_j / p.energy_j).ln() + correction.1.ln(),
        (rec.state.cpu_freq - prev_state.cpu_freq) / spec.cpu.f_max,
        (rec.state.gpu_freq - prev_state.gpu_freq) / spec.gpu.f_max,
        rec.state.cpu_util - prev_state.cpu_util,
    ])
}

/// [`CostModel`] over a profiler snapshot. Compute predictions are memoized
/// per (operator, decision, state) since the planner asks for each one once
/// per previous residence.
pub struct ProfiledCost<'a> {
    model: &'a ProfilerModel,
    spec: &'a DeviceSpec,
    cache: RefCell<HashMap<(usize, u8, u64, [u64; 4]), CostSample>>,
}

impl CostModel for ProfiledCost<'_> {
    fn cost(
        &self,
        op: &Operator,
        d: PartitionDecision,
        prev: Residence,
        state: &DeviceState,
    ) -> Result<CostSample> {
        if matches!(d, PartitionDecision::CoExec(_)) && !op.divisible {
            return Err(Error::IndivisibleOperator { op: op.id });
        }
        let key = (
            op.id,
            d.mode() as u8,
            d.gpu_fraction().to_bits(),
            [
                state.cpu_freq.to_bits(),
                state.gpu_freq.to_bits(),
                state.cpu_util.to_bits(),
                state.gpu_util.to_bits(),
            ],
        );
        let compute = *self
            .cache
            .borrow_mut()
            .entry(key)
            .or_insert_with(|| self.model.predict(op, d, state, self.spec));
        Ok(hwsim::comm_cost(prev, d.residence(), op.input.bytes, self.spec) + compute)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub frames: usize,
    pub seeds_per_condition: usize,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            frames: 30,
            seeds_per_condition: 4,
            seed: 1000,
        }
    }
}

/// Noise-free latency of running every operator on the GPU, input starting
/// in host memory.
pub fn gpu_only_latency(graph: &OperatorGraph, spec: &DeviceSpec, state: &DeviceState) -> Result<f64> {
    let plan = vec![PartitionDecision::GpuOnly; graph.len()];
    let (_, totals) = hwsim::execute_plan(graph, &plan, &spec.without_noise(), state, &mut NoiseSource::new(0))?;
    Ok(totals.latency_s)
}

/// Residual sequences for GRU pretraining.
///
/// For every preset and trace kind (Drift, Step) the GBDT-only profiler plans
/// each frame with the min-energy DP and the plan runs on the noisy
/// simulator. Each step's input is built exactly as at runtime; its target is
/// the uncorrected log residual of the next observation.
pub fn gen_episodes(
    model: &ProfilerModel,
    graph: &OperatorGraph,
    spec: &DeviceSpec,
    budget_factor: f64,
    cfg: &EpisodeConfig,
) -> Result<Vec<Episode>> {
    let mut plain = model.clone();
    plain.gru = GruCorrector::default();
    plain.reset_session();
    let mut episodes = Vec::new();
    let mut k = 0u64;
    for preset in crate::model::PRESETS {
        let base = preset_state(preset)?;
        let budget = budget_factor * gpu_only_latency(graph, spec, &base)?;
        let dp = DpConfig::new(budget);
        for kind in [TraceKind::Drift, TraceKind::Step] {
            for _ in 0..cfg.seeds_per_condition {
                let seed = cfg.seed.wrapping_add(k);
                k += 1;
                let trace = gen_trace(kind, &base, cfg.frames, seed, spec)?;
                let mut inputs = Vec::new();
                let mut residuals = Vec::new();
                let mut prev_state = trace.states[0];
                for (t, state) in trace.states.iter().enumerate() {
                    let cost = plain.cost_model(spec);
                    let plan = partitioner::dp_partition(graph, 0, Residence::OnCpu, 0.0, &cost, state, &dp)?;
                    let mut rng = NoiseSource::with_stream(seed, t as u64);
                    let mut res = Residence::OnCpu;
                    for (op, &d) in graph.ops.iter().zip(&plan.decisions) {
                        let (mut rec, next) = hwsim::execute_op(op, d, res, spec, state, &mut rng)?;
                        rec.predicted = cost.cost(op, d, res, state)?;
                        res = next;
                        let x = gru_input(&rec, &prev_state, (1.0, 1.0), spec)?;
                        residuals.push([x[0], x[1]]);
                        inputs.push(x);
                        prev_state = *state;
                    }
                }
                inputs.pop();
                residuals.remove(0);
                episodes.push(Episode {
                    inputs,
                    targets: residuals,
                });
            }
        }
    }
    Ok(episodes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gbdt: GbdtHyper,
    pub gru: GruHyper,
    pub episodes: EpisodeConfig,
    /// Budget used while planning pretraining frames, as a multiple of the
    /// GPU-only latency.
    pub budget_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gbdt: GbdtHyper::default(),
            gru: GruHyper::default(),
            episodes: EpisodeConfig::default(),
            budget_factor: 1.25,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub latency_report: TrainReport,
    pub energy_report: TrainReport,
    pub gru_report: GruReport,
}

/// Trains both regressors on `data`, then pretrains the GRU on residual
/// episodes generated over `graph`.
pub fn train_profiler(
    data: &Dataset,
    graph: &OperatorGraph,
    spec: &DeviceSpec,
    cfg: &TrainConfig,
) -> Result<(ProfilerModel, TrainSummary)> {
    let (lat, latency_report) =
        train_gbdt(&data.features, &data.log_latency, Target::LogLatency, &cfg.gbdt, cfg.seed)?;
    let (energy, energy_report) = train_gbdt(
        &data.features,
        &data.log_energy,
        Target::LogEnergy,
        &cfg.gbdt,
        cfg.seed.wrapping_add(1),
    )?;
    let mut model = ProfilerModel::new(lat, energy, GruCorrector::default());
    let episodes = gen_episodes(&model, graph, spec, cfg.budget_factor, &cfg.episodes)?;
    let (gru, gru_report) = train_gru(&episodes, &cfg.gru, cfg.seed.wrapping_add(2))?;
    model.gru = gru;
    Ok((
        model,
        TrainSummary {
            latency_report,
            energy_report,
            gru_report,
        },
    ))
}
