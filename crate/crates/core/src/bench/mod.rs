//! Experiment harness behind the `opsplit` binary: configuration, the
//! scheme comparison, and the planner oracle check.

mod oracle;

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    gen_trace, load_graph, preset_state, synth_yolo_like, DeviceSpec, OperatorGraph, TraceKind,
};
use crate::partitioner::{DpConfig, DEFAULT_BUCKETS, DEFAULT_RATIO_GRID};
use crate::profiler::{gpu_only_latency, ProfilerModel};
use crate::runtime::{run_baseline, AdaptationPolicy, ReplanScope, Scheme, SessionSummary};

pub use oracle::{
    golden_check, oracle_case, oracle_check, random_instance, OracleCase, OracleOptions, OracleReport,
    ORACLE_BUCKETS, ORACLE_GRID,
};

pub const BUILTIN_GRAPH: &str = "builtin:yolo_like";
pub const BUILTIN_SPEC: &str = "builtin:soc_default";
pub const CSV_HEADER: &str = "frame,scheme,latency_s,energy_j,replans,met_budget,mape_pct";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: String,
    pub spec: String,
    pub presets: Vec<String>,
    pub trace: TraceKind,
    pub frames: usize,
    pub seed: u64,
    /// Latency budget as a multiple of the noise-free GPU-only latency.
    pub budget_factor: f64,
    /// Number of latency buckets across the budget.
    pub buckets: f64,
    pub ratio_grid: Vec<f64>,
    pub energy_dev_threshold: f64,
    pub min_ops_between_replans: usize,
    pub replan_scope: ReplanScope,
    pub schemes: Vec<Scheme>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            graph: BUILTIN_GRAPH.into(),
            spec: BUILTIN_SPEC.into(),
            presets: crate::model::PRESETS.iter().map(|s| s.to_string()).collect(),
            trace: TraceKind::Stationary,
            frames: 50,
            seed: 42,
            budget_factor: 1.25,
            buckets: DEFAULT_BUCKETS,
            ratio_grid: DEFAULT_RATIO_GRID.to_vec(),
            energy_dev_threshold: 0.15,
            min_ops_between_replans: 3,
            replan_scope: ReplanScope::MidFrame,
            schemes: Scheme::ALL.to_vec(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::InvalidArgument("no schemes selected".into()));
        }
        if self.presets.is_empty() {
            return Err(Error::InvalidArgument("no presets selected".into()));
        }
        if self.frames == 0 {
            return Err(Error::InvalidArgument("frames must be >= 1".into()));
        }
        if !(self.budget_factor > 0.0) || !(self.buckets >= 1.0) {
            return Err(Error::InvalidArgument("budget_factor must be > 0 and buckets >= 1".into()));
        }
        for p in &self.presets {
            preset_state(p)?;
        }
        Ok(())
    }

    pub fn load_graph(&self) -> Result<OperatorGraph> {
        resolve_graph(&self.graph)
    }

    pub fn load_spec(&self) -> Result<DeviceSpec> {
        resolve_spec(&self.spec)
    }

    pub fn dp_config(&self, budget: f64) -> DpConfig {
        DpConfig::new(budget)
            .with_bucket_width(budget / self.buckets)
            .with_grid(&self.ratio_grid)
    }

    pub fn policy(&self, budget: f64) -> AdaptationPolicy {
        AdaptationPolicy {
            energy_dev_threshold: self.energy_dev_threshold,
            min_ops_between_replans: self.min_ops_between_replans,
            latency_budget_s: budget,
            replan_scope: self.replan_scope,
            apply_corrections: true,
        }
    }

    /// The frame budget for a preset: `budget_factor` times the noise-free
    /// GPU-only latency at the preset's base state.
    pub fn budget(&self, graph: &OperatorGraph, spec: &DeviceSpec, preset: &str) -> Result<f64> {
        Ok(self.budget_factor * gpu_only_latency(graph, spec, &preset_state(preset)?)?)
    }
}

pub fn resolve_graph(r: &str) -> Result<OperatorGraph> {
    match r {
        BUILTIN_GRAPH => Ok(synth_yolo_like()),
        path => load_graph(path),
    }
}

pub fn resolve_spec(r: &str) -> Result<DeviceSpec> {
    match r {
        BUILTIN_SPEC => Ok(DeviceSpec::soc_default()),
        path => DeviceSpec::load(path),
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub preset: String,
    pub scheme: Scheme,
    pub budget_s: f64,
    pub mean_latency_s: f64,
    pub mean_energy_j: f64,
    pub replans: usize,
    pub frames_met_budget: usize,
    pub mape_pct: f64,
}

/// AdaOper relative to LatencyMin on one preset; negative means AdaOper is
/// lower.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub preset: String,
    pub energy_delta_pct: f64,
    pub latency_delta_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub frames: usize,
    pub seed: u64,
    pub trace: TraceKind,
    pub rows: Vec<SummaryRow>,
    pub deltas: Vec<Delta>,
}

impl CompareSummary {
    pub fn row(&self, preset: &str, scheme: Scheme) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.preset == preset && r.scheme == scheme)
    }
}

pub struct CompareOutcome {
    pub summary: CompareSummary,
    /// (preset, per-frame CSV text)
    pub csvs: Vec<(String, String)>,
    pub sessions: Vec<(String, Scheme, SessionSummary)>,
}

pub fn delta_pct(ours: f64, theirs: f64) -> f64 {
    100.0 * (ours / theirs - 1.0)
}

/// Per-frame CSV rows for one session, in the documented column order.
pub fn csv_rows(scheme: Scheme, s: &SessionSummary, out: &mut String) {
    for r in &s.reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.frame_idx,
            scheme,
            r.totals.latency_s,
            r.totals.energy_j,
            r.replans,
            r.met_budget,
            r.mape_pct()
        )
        .expect("writing to a String");
    }
}

/// Every selected scheme on every preset, with one shared trace and noise
/// seed per preset so the schemes are paired.
pub fn compare(cfg: &ExperimentConfig, model: &ProfilerModel) -> Result<CompareOutcome> {
    cfg.validate()?;
    let graph = cfg.load_graph()?;
    let spec = cfg.load_spec()?;
    let mut rows = Vec::new();
    let mut deltas = Vec::new();
    let mut csvs = Vec::new();
    let mut sessions = Vec::new();
    for preset in &cfg.presets {
        let base = preset_state(preset)?;
        let budget = cfg.budget(&graph, &spec, preset)?;
        let trace = gen_trace(cfg.trace, &base, cfg.frames, cfg.seed, &spec)?;
        let dp = cfg.dp_config(budget);
        let policy = cfg.policy(budget);
        let mut csv = String::from(CSV_HEADER);
        csv.push('\n');
        for &scheme in &cfg.schemes {
            let s = run_baseline(&graph, &spec, &trace, scheme, model, &policy, &dp, cfg.seed)?;
            csv_rows(scheme, &s, &mut csv);
            rows.push(SummaryRow {
                preset: preset.clone(),
                scheme,
                budget_s: budget,
                mean_latency_s: s.mean_latency_s,
                mean_energy_j: s.mean_energy_j,
                replans: s.replan_count,
                frames_met_budget: s.reports.iter().filter(|r| r.met_budget).count(),
                mape_pct: s.mape_pct,
            });
            sessions.push((preset.clone(), scheme, s));
        }
        let find = |sc: Scheme| rows.iter().find(|r: &&SummaryRow| r.preset == *preset && r.scheme == sc);
        if let (Some(a), Some(l)) = (find(Scheme::AdaOper), find(Scheme::LatencyMin)) {
            deltas.push(Delta {
                preset: preset.clone(),
                energy_delta_pct: delta_pct(a.mean_energy_j, l.mean_energy_j),
                latency_delta_pct: delta_pct(a.mean_latency_s, l.mean_latency_s),
            });
        }
        csvs.push((preset.clone(), csv));
    }
    Ok(CompareOutcome {
        summary: CompareSummary {
            frames: cfg.frames,
            seed: cfg.seed,
            trace: cfg.trace,
            rows,
            deltas,
        },
        csvs,
        sessions,
    })
}

pub fn csv_path(out_dir: &Path, preset: &str) -> PathBuf {
    out_dir.join(format!("compare_{preset}.csv"))
}

/// Writes the per-preset CSVs, `summary.json`, and a gnuplot data file with
/// a matching script.
pub fn write_compare_outputs(out_dir: &Path, outcome: &CompareOutcome) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (preset, csv) in &outcome.csvs {
        let p = csv_path(out_dir, preset);
        write_atomic(&p, csv.as_bytes())?;
        written.push(p);
    }
    let summary = out_dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&outcome.summary).expect("summary serializes");
    json.push('\n');
    write_atomic(&summary, json.as_bytes())?;
    written.push(summary);

    let mut dat = String::from("# preset scheme mean_latency_s mean_energy_j\n");
    for r in &outcome.summary.rows {
        writeln!(dat, "{} {} {} {}", r.preset, r.scheme, r.mean_latency_s, r.mean_energy_j)
            .expect("writing to a String");
    }
    let dat_path = out_dir.join("compare.dat");
    write_atomic(&dat_path, dat.as_bytes())?;
    written.push(dat_path);
    let gp_path = out_dir.join("compare.gp");
    write_atomic(&gp_path, GNUPLOT_SCRIPT.as_bytes())?;
    written.push(gp_path);
    Ok(written)
}

const GNUPLOT_SCRIPT: &str = r#"# gnuplot compare.gp  ->  compare.png
set terminal pngcairo size 1000,420
set output 'compare.png'
set style data histograms
set style histogram clustered
set style fill solid 0.8
set boxwidth 0.9
set multiplot layout 1,2
set title 'mean latency (s)'
plot '< grep " GpuOnly " compare.dat' using 3:xtic(1) title 'GpuOnly', \
     '< grep " LatencyMin " compare.dat' using 3 title 'LatencyMin', \
     '< grep " AdaOper " compare.dat' using 3 title 'AdaOper'
set title 'mean energy (J)'
plot '< grep " GpuOnly " compare.dat' using 4:xtic(1) title 'GpuOnly', \
     '< grep " LatencyMin " compare.dat' using 4 title 'LatencyMin', \
     '< grep " AdaOper " compare.dat' using 4 title 'AdaOper'
unset multiplot
"#;

/// Human-readable summary table for the terminal.
pub fn format_summary(s: &CompareSummary) -> String {
    let mut out = format!(
        "{:<9} {:<11} {:>11} {:>11} {:>8} {:>9} {:>8}\n",
        "preset", "scheme", "latency_s", "energy_j", "replans", "met", "mape%"
    );
    for r in &s.rows {
        writeln!(
            out,
            "{:<9} {:<11} {:>11.5} {:>11.5} {:>8} {:>6}/{:<2} {:>8.2}",
            r.preset,
            r.scheme.name(),
            r.mean_latency_s,
            r.mean_energy_j,
            r.replans,
            r.frames_met_budget,
            s.frames,
            r.mape_pct
        )
        .expect("writing to a String");
    }
    for d in &s.deltas {
        writeln!(
            out,
            "AdaOper vs LatencyMin on {}: energy {:+.2}%, latency {:+.2}%",
            d.preset, d.energy_delta_pct, d.latency_delta_pct
        )
        .expect("writing to a String");
    }
    out
}
