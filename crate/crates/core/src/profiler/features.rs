use crate::hwsim::PartitionDecision;
use crate::model::{DeviceSpec, DeviceState, OpKind, Operator};

/// 14 base fields plus 7 roofline-derived time proxies.
pub const FEATURE_DIM: usize = 21;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "log_flops",
    "log_input_bytes",
    "log_output_bytes",
    "kind_conv",
    "kind_depthwise_conv",
    "kind_fully_connected",
    "kind_pool",
    "kind_elementwise",
    "kind_reorg",
    "gpu_fraction",
    "cpu_freq_norm",
    "gpu_freq_norm",
    "cpu_util",
    "gpu_util",
    "cpu_compute_proxy",
    "gpu_compute_proxy",
    "cpu_memory_proxy",
    "gpu_memory_proxy",
    "cpu_time_proxy",
    "gpu_time_proxy",
    "bottleneck_time_proxy",
];

/// Floor for a zero work share inside the share-scaled logs.
const SHARE_FLOOR: f64 = 1e-3;

pub type FeatureVector = [f64; FEATURE_DIM];

/// Fixed-order encoding of one (operator, decision, state) triple.
///
/// The trailing proxies are log-seconds estimates built from the device's
/// nominal rates: each processor's share of the flops over its free
/// throughput, its share of the traffic over its memory bandwidth, the larger
/// of the two per processor, and the larger of those. They ignore transfer,
/// synchronization and power, which the trees still have to learn, but they
/// turn the roofline's max() kinks into single splits.
pub fn featurize(
    op: &Operator,
    d: PartitionDecision,
    state: &DeviceState,
    spec: &DeviceSpec,
) -> FeatureVector {
    let mut f = [0.0; FEATURE_DIM];
    let log_flops = (op.flops + 1.0).ln();
    f[0] = log_flops;
    f[1] = (op.input.bytes as f64 + 1.0).ln();
    f[2] = (op.output.bytes as f64 + 1.0).ln();
    f[3 + op.kind.index()] = 1.0;
    debug_assert_eq!(OpKind::ALL.len(), 6);
    let r = d.gpu_fraction();
    let cpu_freq = state.cpu_freq / spec.cpu.f_max;
    let gpu_freq = state.gpu_freq / spec.gpu.f_max;
    f[9] = r;
    f[10] = cpu_freq;
    f[11] = gpu_freq;
    f[12] = state.cpu_util;
    f[13] = state.gpu_util;

    let cpu_share = (1.0 - r).max(SHARE_FLOOR).ln();
    let gpu_share = r.max(SHARE_FLOOR).ln();
    let traffic = (op.traffic_bytes() + 1.0).ln();
    let cpu_rate = spec.cpu.throughput(state.cpu_freq, state.cpu_util).ln();
    let gpu_rate = spec.gpu.throughput(state.gpu_freq, state.gpu_util).ln();
    f[14] = log_flops - cpu_rate + cpu_share;
    f[15] = log_flops - gpu_rate + gpu_share;
    f[16] = traffic - spec.cpu.mem_bw.ln() + cpu_share;
    f[17] = traffic - spec.gpu.mem_bw.ln() + gpu_share;
    f[18] = f[14].max(f[16]);
    f[19] = f[15].max(f[17]);
    f[20] = f[18].max(f[19]);
    f
}
