use opsplit::hwsim::{
    comm_cost, compute_cost, decision_grid, execute_plan, latency_energy_conflicts, moved_fraction,
    observe, true_cost, CostSample, NoiseSource, PartitionDecision, Residence,
};
use opsplit::model::{preset_state, synth_yolo_like, DeviceSpec, DeviceState, OpKind, Operator, TensorSpec};
use opsplit::partitioner::DEFAULT_RATIO_GRID;
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Golden {
    latency_s: f64,
    energy_j: f64,
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn all_gpu_yolo_matches_golden_file() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/golden/hwsim_yolo_gpuonly.json");
    let golden: Golden = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let spec = DeviceSpec::soc_default().without_noise();
    let g = synth_yolo_like();
    let plan = vec![PartitionDecision::GpuOnly; g.len()];
    let state = preset_state("moderate").unwrap();
    let (records, totals) = execute_plan(&g, &plan, &spec, &state, &mut NoiseSource::new(0)).unwrap();
    assert!(rel(totals.latency_s, golden.latency_s) <= 1e-9, "{} vs {}", totals.latency_s, golden.latency_s);
    assert!(rel(totals.energy_j, golden.energy_j) <= 1e-9, "{} vs {}", totals.energy_j, golden.energy_j);
    // noise-free: observed equals predicted and totals are the plain sum
    let sum: f64 = records.iter().map(|r| r.predicted.latency_s).sum();
    assert_eq!(sum, totals.latency_s);
    assert!(records.iter().all(|r| r.observed == r.predicted));
    assert_eq!(opsplit::bench::golden_check(&DeviceSpec::soc_default()).unwrap(), None);
}

#[test]
fn coexec_can_be_fastest_yet_not_cheapest() {
    // exhaustive scan over yolo_like under "high" with the default grid
    let spec = DeviceSpec::soc_default();
    let state = preset_state("high").unwrap();
    let mut found = Vec::new();
    for op in &synth_yolo_like().ops {
        let cpu = true_cost(op, PartitionDecision::CpuOnly, Residence::OnCpu, &spec, &state).unwrap().0;
        let gpu = true_cost(op, PartitionDecision::GpuOnly, Residence::OnGpu, &spec, &state).unwrap().0;
        for d in decision_grid(op, &DEFAULT_RATIO_GRID).into_iter().skip(2) {
            let prev = d.residence();
            let co = true_cost(op, d, prev, &spec, &state).unwrap().0;
            if co.latency_s < cpu.latency_s.min(gpu.latency_s) && co.energy_j > cpu.energy_j.min(gpu.energy_j) {
                found.push((op.id, d));
            }
        }
    }
    assert!(!found.is_empty());
}

#[test]
fn latency_and_energy_argmins_disagree_under_high() {
    let spec = DeviceSpec::soc_default();
    let state = preset_state("high").unwrap();
    let c = latency_energy_conflicts(&synth_yolo_like(), &spec, &state, &DEFAULT_RATIO_GRID).unwrap();
    assert!(!c.is_empty());
    for x in &c {
        assert_ne!(x.fastest, x.cheapest);
    }
}

#[test]
fn moved_fraction_table() {
    use Residence::*;
    let cases = [
        (OnCpu, OnCpu, 0.0),
        (OnCpu, OnGpu, 1.0),
        (OnCpu, Split(0.3), 0.3),
        (OnGpu, OnGpu, 0.0),
        (OnGpu, OnCpu, 1.0),
        (OnGpu, Split(0.3), 0.7),
        (Split(0.4), OnCpu, 0.4),
        (Split(0.4), OnGpu, 0.6),
        (Split(0.4), Split(0.9), 0.5),
    ];
    for (prev, need, m) in cases {
        assert!((moved_fraction(prev, need) - m).abs() < 1e-15, "{prev:?} -> {need:?}");
    }
    let spec = DeviceSpec::soc_default();
    assert_eq!(comm_cost(Split(0.6), Split(0.6), 123, &spec), CostSample::ZERO);
}

#[test]
fn one_op_plan_is_true_cost_from_host() {
    let spec = DeviceSpec::soc_default().without_noise();
    let state = preset_state("high").unwrap();
    let op = Operator {
        id: 0,
        kind: OpKind::Pool,
        flops: 3e7,
        input: TensorSpec::new(4_000_000),
        output: TensorSpec::new(1_000_000),
        divisible: true,
    };
    let g = opsplit::model::OperatorGraph::new("one", vec![op.clone()]).unwrap();
    let (_, totals) =
        execute_plan(&g, &[PartitionDecision::GpuOnly], &spec, &state, &mut NoiseSource::new(3)).unwrap();
    let (expected, res) = true_cost(&op, PartitionDecision::GpuOnly, Residence::OnCpu, &spec, &state).unwrap();
    assert_eq!(totals, expected);
    assert_eq!(res, Residence::OnGpu);
}

fn arb_op() -> impl Strategy<Value = Operator> {
    (0usize..6, 1e6f64..5e9, 1e3f64..1e8, 1e3f64..1e8).prop_map(|(k, flops, i, o)| Operator {
        id: 0,
        kind: OpKind::ALL[k],
        flops,
        input: TensorSpec::new(i as u64),
        output: TensorSpec::new(o as u64),
        divisible: true,
    })
}

fn arb_state() -> impl Strategy<Value = DeviceState> {
    (0.1f64..1.0, 0.1f64..1.0, 0.0f64..0.95, 0.0f64..0.95).prop_map(|(cf, gf, cu, gu)| {
        let spec = DeviceSpec::soc_default();
        DeviceState {
            cpu_freq: cf * spec.cpu.f_max,
            gpu_freq: gf * spec.gpu.f_max,
            cpu_util: cu,
            gpu_util: gu,
        }
    })
}

proptest! {
    #[test]
    fn utilization_never_speeds_up(op in arb_op(), s in arb_state(), du in 0.0f64..0.04) {
        let spec = DeviceSpec::soc_default();
        let mut busier = s;
        busier.cpu_util += du;
        busier.gpu_util += du;
        let c0 = compute_cost(&op, PartitionDecision::CpuOnly, &spec, &s).unwrap();
        let c1 = compute_cost(&op, PartitionDecision::CpuOnly, &spec, &busier).unwrap();
        prop_assert!(c1.latency_s >= c0.latency_s);
        let g0 = compute_cost(&op, PartitionDecision::GpuOnly, &spec, &s).unwrap();
        let g1 = compute_cost(&op, PartitionDecision::GpuOnly, &spec, &busier).unwrap();
        prop_assert!(g1.latency_s >= g0.latency_s);
    }

    #[test]
    fn frequency_never_slows_down(op in arb_op(), s in arb_state(), k in 1.0f64..1.5) {
        let spec = DeviceSpec::soc_default();
        let mut faster = s;
        faster.cpu_freq = (s.cpu_freq * k).min(spec.cpu.f_max);
        let c0 = compute_cost(&op, PartitionDecision::CpuOnly, &spec, &s).unwrap();
        let c1 = compute_cost(&op, PartitionDecision::CpuOnly, &spec, &faster).unwrap();
        prop_assert!(c1.latency_s <= c0.latency_s);
        if faster.cpu_freq > s.cpu_freq {
            prop_assert!(spec.cpu.power(faster.cpu_freq) > spec.cpu.power(s.cpu_freq));
        }
    }

    #[test]
    fn coexec_converges_to_gpu_only(op in arb_op(), s in arb_state()) {
        // closed-form limit with the sync term removed, input already on the GPU
        let spec = DeviceSpec::soc_default();
        let gpu = true_cost(&op, PartitionDecision::GpuOnly, Residence::OnGpu, &spec, &s).unwrap().0;
        let mut prev_gap = f64::INFINITY;
        for r in [0.9, 0.99, 0.999, 0.9999] {
            let d = PartitionDecision::co_exec(r).unwrap();
            let c = compute_cost(&op, d, &spec, &s).unwrap();
            let lat = c.latency_s - spec.sync_overhead_s;
            let energy = c.energy_j - spec.p_idle * spec.sync_overhead_s;
            let gap = rel(lat, gpu.latency_s).max(rel(energy, gpu.energy_j));
            prop_assert!(gap <= prev_gap + 1e-12);
            prev_gap = gap;
        }
        prop_assert!(prev_gap < 0.01);
        prop_assert!(PartitionDecision::co_exec(1.0).is_err());
    }

    #[test]
    fn costs_are_positive(op in arb_op(), s in arb_state(), r in 0.05f64..0.95, p in 0usize..3) {
        let spec = DeviceSpec::soc_default();
        let prev = [Residence::OnCpu, Residence::OnGpu, Residence::Split(0.5)][p];
        for d in [PartitionDecision::CpuOnly, PartitionDecision::GpuOnly, PartitionDecision::CoExec(r)] {
            let (c, res) = true_cost(&op, d, prev, &spec, &s).unwrap();
            prop_assert!(c.latency_s > 0.0 && c.energy_j > 0.0);
            prop_assert_eq!(res, d.residence());
        }
    }

    #[test]
    fn zero_noise_observation_is_identity(lat in 1e-6f64..10.0, e in 1e-6f64..10.0, seed in any::<u64>()) {
        let spec = DeviceSpec::soc_default().without_noise();
        let c = CostSample::new(lat, e);
        let mut rng = NoiseSource::new(seed);
        prop_assert_eq!(observe(c, &spec, &mut rng), c);
        prop_assert_eq!(rng.draws(), 2);
    }
}
