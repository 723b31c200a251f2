//! Workload and device description: operator chains, processor specs,
//! device states and per-frame workload traces.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Background utilization is clamped here so `1 - util` never reaches zero.
pub const MAX_UTIL: f64 = 0.99;

/// Bus power while moving tensors between processors.
pub const DEFAULT_P_BUS: f64 = 0.8;

const SOC_DEFAULT_JSON: &str = include_str!("../data/soc_default.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Conv,
    DepthwiseConv,
    FullyConnected,
    Pool,
    Elementwise,
    Reorg,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::Conv,
        OpKind::DepthwiseConv,
        OpKind::FullyConnected,
        OpKind::Pool,
        OpKind::Elementwise,
        OpKind::Reorg,
    ];

    /// Slot in the one-hot kind encoding.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv => "Conv",
            OpKind::DepthwiseConv => "DepthwiseConv",
            OpKind::FullyConnected => "FullyConnected",
            OpKind::Pool => "Pool",
            OpKind::Elementwise => "Elementwise",
            OpKind::Reorg => "Reorg",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub bytes: u64,
}

impl TensorSpec {
    pub fn new(bytes: u64) -> Self {
        Self { bytes }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    pub id: usize,
    pub kind: OpKind,
    pub flops: f64,
    pub input: TensorSpec,
    pub output: TensorSpec,
    /// Whether the operator's work may be split across processors.
    pub divisible: bool,
}

impl Operator {
    pub fn validate(&self) -> Result<()> {
        if !self.flops.is_finite() {
            return Err(Error::validation(Some(self.id), "flops", "must be finite"));
        }
        if self.kind == OpKind::Reorg {
            if self.flops < 0.0 {
                return Err(Error::validation(Some(self.id), "flops", "must be >= 0"));
            }
        } else if self.flops <= 0.0 {
            return Err(Error::validation(Some(self.id), "flops", "must be > 0"));
        }
        Ok(())
    }

    /// Bytes touched by the operator (input plus output).
    pub fn traffic_bytes(&self) -> f64 {
        (self.input.bytes + self.output.bytes) as f64
    }
}

/// A linear chain of operators; op `i` consumes op `i - 1`'s output.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorGraph {
    pub name: String,
    pub ops: Vec<Operator>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    name: String,
    ops: Vec<OpRecord>,
}

#[derive(Serialize, Deserialize)]
struct OpRecord {
    id: usize,
    kind: OpKind,
    flops: f64,
    input_bytes: u64,
    output_bytes: u64,
    divisible: bool,
}

impl OperatorGraph {
    pub fn new(name: impl Into<String>, ops: Vec<Operator>) -> Result<Self> {
        let graph = Self {
            name: name.into(),
            ops,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn total_flops(&self) -> f64 {
        self.ops.iter().map(|op| op.flops).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ops.is_empty() {
            return Err(Error::validation(None, "ops", "graph has no operators"));
        }
        for (i, op) in self.ops.iter().enumerate() {
            if op.id != i {
                return Err(Error::validation(
                    Some(i),
                    "id",
                    format!("expected id {i}, found {}", op.id),
                ));
            }
            op.validate()?;
            if i > 0 && op.input.bytes != self.ops[i - 1].output.bytes {
                return Err(Error::validation(
                    Some(i),
                    "input_bytes",
                    format!(
                        "{} does not match previous output_bytes {}",
                        op.input.bytes,
                        self.ops[i - 1].output.bytes
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: GraphFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let ops = file
            .ops
            .into_iter()
            .map(|r| Operator {
                id: r.id,
                kind: r.kind,
                flops: r.flops,
                input: TensorSpec::new(r.input_bytes),
                output: TensorSpec::new(r.output_bytes),
                divisible: r.divisible,
            })
            .collect();
        Self::new(file.name, ops)
    }

    pub fn to_json_string(&self) -> String {
        let file = GraphFile {
            name: self.name.clone(),
            ops: self
                .ops
                .iter()
                .map(|op| OpRecord {
                    id: op.id,
                    kind: op.kind,
                    flops: op.flops,
                    input_bytes: op.input.bytes,
                    output_bytes: op.output.bytes,
                    divisible: op.divisible,
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("graph serializes");
        s.push('\n');
        s
    }
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<OperatorGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    OperatorGraph::from_json_str(&text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcessorKind {
    Cpu,
    Gpu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessorSpec {
    pub kind: ProcessorKind,
    /// Hz.
    pub f_max: f64,
    /// Aggregate over all cores / ALUs.
    pub flops_per_cycle: f64,
    /// bytes/s.
    pub mem_bw: f64,
    /// Active-state static power, W.
    pub p_static: f64,
    /// Dynamic power at `f_max`, W.
    pub k_dyn: f64,
}

impl ProcessorSpec {
    /// Flops/s available to a foreground operator.
    pub fn throughput(&self, freq: f64, util: f64) -> f64 {
        self.flops_per_cycle * freq * (1.0 - util)
    }

    /// Active power at `freq`: static plus cubic DVFS term.
    pub fn power(&self, freq: f64) -> f64 {
        let x = freq / self.f_max;
        self.p_static + self.k_dyn * x * x * x
    }

    fn validate(&self, name: &str) -> Result<()> {
        for (field, v) in [
            ("f_max", self.f_max),
            ("flops_per_cycle", self.flops_per_cycle),
            ("mem_bw", self.mem_bw),
            ("p_static", self.p_static),
            ("k_dyn", self.k_dyn),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(None, &format!("{name}.{field}"), "must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub cpu: ProcessorSpec,
    pub gpu: ProcessorSpec,
    /// CPU <-> GPU transfer bandwidth, bytes/s.
    pub bus_bw: f64,
    /// Fixed cost per cross-processor transfer or merge, s.
    pub sync_overhead_s: f64,
    /// Board baseline power, W.
    pub p_idle: f64,
    #[serde(default = "default_p_bus")]
    pub p_bus: f64,
    /// Log-normal observation noise scale.
    pub noise_sigma: f64,
}

fn default_p_bus() -> f64 {
    DEFAULT_P_BUS
}

impl DeviceSpec {
    pub fn soc_default() -> Self {
        Self::from_json_str(SOC_DEFAULT_JSON).expect("bundled soc_default.json is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: DeviceSpec =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.cpu.validate("cpu")?;
        self.gpu.validate("gpu")?;
        if !(self.bus_bw > 0.0) {
            return Err(Error::validation(None, "bus_bw", "must be > 0"));
        }
        for (field, v) in [
            ("sync_overhead_s", self.sync_overhead_s),
            ("p_idle", self.p_idle),
            ("p_bus", self.p_bus),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(None, field, "must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn without_noise(&self) -> Self {
        Self {
            noise_sigma: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub cpu_freq: f64,
    pub gpu_freq: f64,
    pub cpu_util: f64,
    pub gpu_util: f64,
}

impl DeviceState {
    pub fn validate(&self, spec: &DeviceSpec) -> Result<()> {
        if !(self.cpu_freq > 0.0 && self.cpu_freq <= spec.cpu.f_max) {
            return Err(Error::validation(None, "cpu_freq", "must be in (0, f_max]"));
        }
        if !(self.gpu_freq > 0.0 && self.gpu_freq <= spec.gpu.f_max) {
            return Err(Error::validation(None, "gpu_freq", "must be in (0, f_max]"));
        }
        for (field, u) in [("cpu_util", self.cpu_util), ("gpu_util", self.gpu_util)] {
            if !(0.0..=MAX_UTIL).contains(&u) {
                return Err(Error::validation(None, field, format!("must be in [0, {MAX_UTIL}]")));
            }
        }
        Ok(())
    }

    /// Pulls every field back inside the state invariants.
    pub fn clamped(self, spec: &DeviceSpec) -> Self {
        Self {
            cpu_freq: self.cpu_freq.clamp(f64::MIN_POSITIVE, spec.cpu.f_max),
            gpu_freq: self.gpu_freq.clamp(f64::MIN_POSITIVE, spec.gpu.f_max),
            cpu_util: self.cpu_util.clamp(0.0, MAX_UTIL),
            gpu_util: self.gpu_util.clamp(0.0, MAX_UTIL),
        }
    }
}

/// The two measured workload conditions. GPU utilizations are configuration
/// defaults; only CPU frequency, GPU frequency and CPU utilization were measured.
pub fn preset_state(name: &str) -> Result<DeviceState> {
    match name {
        "moderate" => Ok(DeviceState {
            cpu_freq: 1.49e9,
            gpu_freq: 4.99e8,
            cpu_util: 0.788,
            gpu_util: 0.10,
        }),
        "high" => Ok(DeviceState {
            cpu_freq: 0.88e9,
            gpu_freq: 4.27e8,
            cpu_util: 0.913,
            gpu_util: 0.30,
        }),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

pub const PRESETS: [&str; 2] = ["moderate", "high"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceKind {
    Stationary,
    Drift,
    Step,
}

impl std::str::FromStr for TraceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stationary" => Ok(TraceKind::Stationary),
            "drift" => Ok(TraceKind::Drift),
            "step" => Ok(TraceKind::Step),
            _ => Err(Error::InvalidArgument(format!("unknown trace kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTrace {
    pub kind: TraceKind,
    pub states: Vec<DeviceState>,
}

impl WorkloadTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Frame index where a `Step` trace switches regime.
    pub fn step_frame(frames: usize) -> usize {
        frames / 2
    }
}

const TRACE_NOISE: f64 = 0.02;

/// Per-frame device states around `base`.
///
/// Every field carries independent multiplicative `exp(0.02 * N(0,1))` jitter.
/// `Drift` additionally decays the CPU frequency linearly to 0.7x over the
/// trace; `Step` drops the CPU frequency to 0.6x and raises CPU utilization by
/// 0.1 from frame `frames / 2` on.
pub fn gen_trace(
    kind: TraceKind,
    base: &DeviceState,
    frames: usize,
    seed: u64,
    spec: &DeviceSpec,
) -> Result<WorkloadTrace> {
    if frames == 0 {
        return Err(Error::InvalidArgument("trace needs at least one frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = || {
        let e: f64 = StandardNormal.sample(&mut rng);
        (TRACE_NOISE * e).exp()
    };
    let states = (0..frames)
        .map(|t| {
            let mut b = *base;
            match kind {
                TraceKind::Stationary => {}
                TraceKind::Drift => {
                    let progress = if frames > 1 {
                        t as f64 / (frames - 1) as f64
                    } else {
                        0.0
                    };
                    b.cpu_freq *= 1.0 - 0.3 * progress;
                }
                TraceKind::Step => {
                    if t >= WorkloadTrace::step_frame(frames) {
                        b.cpu_freq *= 0.6;
                        b.cpu_util = (b.cpu_util + 0.1).min(MAX_UTIL);
                    }
                }
            }
            DeviceState {
                cpu_freq: b.cpu_freq * jitter(),
                gpu_freq: b.gpu_freq * jitter(),
                cpu_util: b.cpu_util * jitter(),
                gpu_util: b.gpu_util * jitter(),
            }
            .clamped(spec)
        })
        .collect();
    Ok(WorkloadTrace { kind, states })
}

/// Flops charged per input element by pooling and reorganization layers
/// (window reduction plus the fused normalization/activation).
const NONCONV_FLOPS_PER_ELEM: u64 = 16;
const YOLO_INPUT_HW: u64 = 608;
const YOLO_INPUT_C: u64 = 3;
const F32_BYTES: u64 = 4;

#[derive(Clone, Copy)]
enum Layer {
    /// kernel size, output channels; spatial size preserved
    Conv(u64, u64),
    /// stride; channels preserved
    Pool(u64),
    /// stride; space-to-depth, channels * stride^2
    Reorg(u64),
}

const YOLO_LIKE_LAYERS: [Layer; 31] = {
    use Layer::*;
    [
        Conv(3, 16),
        Pool(2),
        Conv(3, 32),
        Pool(2),
        Conv(3, 64),
        Conv(1, 64),
        Pool(2),
        Conv(3, 128),
        Conv(1, 128),
        Reorg(2),
        Conv(1, 512),
        Conv(1, 512),
        Pool(1),
        Conv(1, 512),
        Conv(1, 512),
        Pool(1),
        Conv(1, 512),
        Conv(1, 512),
        Pool(1),
        Conv(1, 512),
        Conv(1, 512),
        Pool(1),
        Conv(1, 512),
        Conv(1, 512),
        Pool(1),
        Conv(1, 512),
        Conv(1, 512),
        Pool(1),
        Conv(1, 512),
        Conv(1, 512),
        Conv(1, 512),
    ]
};

/// Deterministic 31-operator detector-style chain (608x608x3 f32 input).
pub fn synth_yolo_like() -> OperatorGraph {
    let (mut hw, mut c) = (YOLO_INPUT_HW, YOLO_INPUT_C);
    let mut ops = Vec::with_capacity(YOLO_LIKE_LAYERS.len());
    for (id, layer) in YOLO_LIKE_LAYERS.iter().enumerate() {
        let in_elems = hw * hw * c;
        let (kind, flops, out_hw, out_c, divisible) = match *layer {
            Layer::Conv(k, c_out) => {
                (OpKind::Conv, 2 * k * k * c * c_out * hw * hw, hw, c_out, true)
            }
            Layer::Pool(s) => (
                OpKind::Pool,
                NONCONV_FLOPS_PER_ELEM * in_elems,
                hw / s,
                c,
                true,
            ),
            Layer::Reorg(s) => (
                OpKind::Reorg,
                NONCONV_FLOPS_PER_ELEM * in_elems,
                hw / s,
                c * s * s,
                false,
            ),
        };
        ops.push(Operator {
            id,
            kind,
            flops: flops as f64,
            input: TensorSpec::new(in_elems * F32_BYTES),
            output: TensorSpec::new(out_hw * out_hw * out_c * F32_BYTES),
            divisible,
        });
        hw = out_hw;
        c = out_c;
    }
    OperatorGraph::new("yolo_like", ops).expect("generated chain is consistent")
}
