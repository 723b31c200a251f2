mod common;

use opsplit::hwsim::{execute_plan, true_cost, CostSample, ExecutionRecord, NoiseSource, PartitionDecision, Residence};
use opsplit::model::{gen_trace, preset_state, synth_yolo_like, DeviceSpec, DeviceState, Operator, TraceKind};
use opsplit::partitioner::{dp_partition, CostModel, DpConfig};
use opsplit::profiler::gpu_only_latency;
use opsplit::runtime::{
    mape_pct, run_baseline, run_session, AdaptationPolicy, Oracle, ReplanScope, Scheme,
    SessionModel, SessionSummary,
};
use opsplit::Error;

fn budget(preset: &str, spec: &DeviceSpec) -> f64 {
    1.25 * gpu_only_latency(&synth_yolo_like(), spec, &preset_state(preset).unwrap()).unwrap()
}

/// True latency, energy scaled by `energy_scale`: a planner that is
/// systematically wrong about energy, so the deviation trigger must fire.
struct Biased {
    energy_scale: f64,
}

struct BiasedCost<'a> {
    spec: &'a DeviceSpec,
    energy_scale: f64,
}

impl CostModel for BiasedCost<'_> {
    fn cost(&self, op: &Operator, d: PartitionDecision, prev: Residence, s: &DeviceState) -> opsplit::Result<CostSample> {
        let c = true_cost(op, d, prev, self.spec, s)?.0;
        Ok(CostSample::new(c.latency_s, c.energy_j * self.energy_scale))
    }
}

impl SessionModel for Biased {
    fn reset(&mut self) {}
    fn begin_plan(&mut self) {}
    fn planning_cost<'a>(&'a self, spec: &'a DeviceSpec) -> Box<dyn CostModel + 'a> {
        Box::new(BiasedCost {
            spec,
            energy_scale: self.energy_scale,
        })
    }
    fn ingest(&mut self, _: &ExecutionRecord, _: &DeviceState, _: &DeviceSpec) -> opsplit::Result<()> {
        Ok(())
    }
}

fn check_accounting(s: &SessionSummary, budget: f64) {
    for r in &s.reports {
        let totals: CostSample = r.records.iter().map(|x| x.observed).sum();
        assert_eq!(r.totals, totals);
        assert_eq!(r.met_budget, r.totals.latency_s <= budget);
        assert_eq!(r.plan_versions.len(), r.records.len());
        assert_eq!(r.replans, *r.plan_versions.last().unwrap());
    }
    let again = SessionSummary::from_reports(s.reports.clone());
    assert_eq!(&again, s);
    let total_e: f64 = s.reports.iter().map(|r| r.totals.energy_j).sum();
    assert_eq!(s.total_energy_j, total_e);
    assert_eq!(s.mean_energy_j, total_e / s.reports.len() as f64);
    assert_eq!(s.replan_count, s.reports.iter().map(|r| r.replans).sum::<usize>());
    assert_eq!(s.mape_pct, mape_pct(s.reports.iter().flat_map(|r| r.records.iter())));
}

#[test]
fn perfect_model_never_replans() {
    let spec = DeviceSpec::soc_default().without_noise();
    let g = synth_yolo_like();
    for preset in ["moderate", "high"] {
        let b = budget(preset, &spec);
        let trace = gen_trace(TraceKind::Stationary, &preset_state(preset).unwrap(), 10, 3, &spec).unwrap();
        let policy = AdaptationPolicy::new(b);
        let cfg = DpConfig::new(b);
        let s = run_session(&g, &spec, &trace, &mut Oracle, &policy, &cfg, 1).unwrap();
        assert_eq!(s.replan_count, 0);
        check_accounting(&s, b);
        // budget semantics: noise-free true-cost frames stay within budget + n*w
        for r in s.reports.iter().filter(|r| r.plan_feasible) {
            assert!(r.totals.latency_s <= b + g.len() as f64 * cfg.bucket_width_s);
        }
        assert!(s.reports.iter().all(|r| r.records.iter().all(|x| x.observed == x.predicted)));
    }
}

#[test]
fn biased_model_replans_without_touching_the_past() {
    let spec = DeviceSpec::soc_default().without_noise();
    let g = synth_yolo_like();
    let b = budget("high", &spec);
    let state = preset_state("high").unwrap();
    let trace = gen_trace(TraceKind::Stationary, &state, 3, 5, &spec).unwrap();
    let policy = AdaptationPolicy::new(b);
    let cfg = DpConfig::new(b);
    let mut model = Biased { energy_scale: 0.5 };
    let s = run_session(&g, &spec, &trace, &mut model, &policy, &cfg, 2).unwrap();
    assert!(s.replan_count > 0);
    check_accounting(&s, b);
    for (r, st) in s.reports.iter().zip(&trace.states) {
        let first = dp_partition(&g, 0, Residence::OnCpu, 0.0, model.planning_cost(&spec).as_ref(), st, &cfg).unwrap();
        let k = r.plan_versions.iter().position(|&v| v > 0).unwrap_or(g.len());
        assert!(k >= policy.min_ops_between_replans);
        for (rec, d) in r.records[..k].iter().zip(&first.decisions) {
            assert_eq!(rec.decision, *d);
        }
        // versions only step up, and never closer together than the hysteresis
        let mut last_change = 0;
        for i in 1..r.plan_versions.len() {
            assert!(r.plan_versions[i] >= r.plan_versions[i - 1]);
            if r.plan_versions[i] > r.plan_versions[i - 1] {
                assert!(i - last_change >= policy.min_ops_between_replans || last_change == 0);
                last_change = i;
            }
        }
    }
    // frame-boundary scope suppresses mid-frame replans
    let fb = AdaptationPolicy {
        replan_scope: ReplanScope::FrameBoundary,
        ..policy.clone()
    };
    assert_eq!(run_session(&g, &spec, &trace, &mut model, &fb, &cfg, 2).unwrap().replan_count, 0);
}

fn small_model_setup() -> (DeviceSpec, opsplit::profiler::ProfilerModel) {
    let spec = DeviceSpec::soc_default();
    let p = common::small_profiler(&spec);
    (spec, p)
}

#[test]
fn trained_profiler_sessions() {
    let (spec, profiler) = small_model_setup();
    let g = synth_yolo_like();
    let b = budget("high", &spec);
    let base = preset_state("high").unwrap();
    let trace = gen_trace(TraceKind::Step, &base, 12, 7, &spec).unwrap();
    let cfg = DpConfig::new(b);
    let policy = AdaptationPolicy::new(b);

    // an infinite threshold is plan-once-per-frame: identical to frame-boundary scope
    let off = policy.clone().without_replanning();
    let mut p1 = profiler.clone();
    let s_off = run_session(&g, &spec, &trace, &mut p1, &off, &cfg, 4).unwrap();
    assert_eq!(s_off.replan_count, 0);
    let fb = AdaptationPolicy {
        replan_scope: ReplanScope::FrameBoundary,
        ..policy.clone()
    };
    let mut p2 = profiler.clone();
    let s_fb = run_session(&g, &spec, &trace, &mut p2, &fb, &cfg, 4).unwrap();
    assert_eq!(s_off.reports, s_fb.reports);
    check_accounting(&s_off, b);

    // pairing: every scheme consumes two normals per (frame, op)
    let runs: Vec<SessionSummary> = Scheme::ALL
        .iter()
        .map(|&sc| run_baseline(&g, &spec, &trace, sc, &profiler, &policy, &cfg, 4).unwrap())
        .collect();
    for s in &runs {
        check_accounting(s, b);
        for r in &s.reports {
            assert_eq!(r.noise_draws, 2 * g.len() as u64);
        }
    }
    // the adaptive scheme leaves the caller's profiler untouched
    let mut fresh = profiler.clone();
    fresh.reset_session();
    assert_eq!(fresh, profiler);
    let mut again = profiler.clone();
    let direct = run_session(&g, &spec, &trace, &mut again, &policy, &cfg, 4).unwrap();
    assert_eq!(direct, runs[2]);

    // deterministic given the seed
    let rerun = run_baseline(&g, &spec, &trace, Scheme::LatencyMin, &profiler, &policy, &cfg, 4).unwrap();
    assert_eq!(rerun, runs[1]);
}

#[test]
fn gpu_only_baseline_is_plain_execution() {
    let (spec, profiler) = small_model_setup();
    let g = synth_yolo_like();
    let b = budget("moderate", &spec);
    let trace = gen_trace(TraceKind::Stationary, &preset_state("moderate").unwrap(), 1, 8, &spec).unwrap();
    let s = run_baseline(&g, &spec, &trace, Scheme::GpuOnly, &profiler, &AdaptationPolicy::new(b), &DpConfig::new(b), 13)
        .unwrap();
    let plan = vec![PartitionDecision::GpuOnly; g.len()];
    let (records, totals) = execute_plan(&g, &plan, &spec, &trace.states[0], &mut NoiseSource::with_stream(13, 0)).unwrap();
    assert_eq!(s.reports[0].totals, totals);
    for (a, b) in s.reports[0].records.iter().zip(&records) {
        assert_eq!(a.observed, b.observed);
    }
}

#[test]
fn latency_first_beats_gpu_only_on_latency_under_high() {
    let (spec, profiler) = small_model_setup();
    let g = synth_yolo_like();
    let b = budget("high", &spec);
    let trace = gen_trace(TraceKind::Stationary, &preset_state("high").unwrap(), 20, 42, &spec).unwrap();
    let policy = AdaptationPolicy::new(b);
    let cfg = DpConfig::new(b);
    let gpu = run_baseline(&g, &spec, &trace, Scheme::GpuOnly, &profiler, &policy, &cfg, 42).unwrap();
    let lat = run_baseline(&g, &spec, &trace, Scheme::LatencyMin, &profiler, &policy, &cfg, 42).unwrap();
    assert!(lat.mean_latency_s <= gpu.mean_latency_s, "{} vs {}", lat.mean_latency_s, gpu.mean_latency_s);
}

#[test]
fn invalid_inputs_are_rejected() {
    let spec = DeviceSpec::soc_default();
    let g = synth_yolo_like();
    let trace = gen_trace(TraceKind::Stationary, &preset_state("high").unwrap(), 2, 0, &spec).unwrap();
    let cfg = DpConfig::new(1.0);
    let mut bad = AdaptationPolicy::new(1.0);
    bad.energy_dev_threshold = 0.0;
    assert!(matches!(run_session(&g, &spec, &trace, &mut Oracle, &bad, &cfg, 0), Err(Error::InvalidArgument(_))));
    let mut empty = trace.clone();
    empty.states.clear();
    assert!(run_session(&g, &spec, &empty, &mut Oracle, &AdaptationPolicy::new(1.0), &cfg, 0).is_err());
}
