use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{featurize, FeatureVector, FEATURE_DIM, FEATURE_NAMES};
use crate::error::{Error, Result};
use crate::hwsim::{compute_cost, PartitionDecision};
use crate::model::{DeviceSpec, DeviceState, OpKind, Operator, TensorSpec};
use crate::partitioner::DEFAULT_RATIO_GRID;

pub const LABEL_NAMES: [&str; 2] = ["log_latency", "log_energy"];

const FLOPS_RANGE: (f64, f64) = (1e6, 5e9);
const BYTES_RANGE: (f64, f64) = (1e3, 1e8);
const FREQ_RANGE: (f64, f64) = (0.4, 1.0);
const UTIL_MAX: f64 = 0.95;

/// One raw training draw, kept alongside its features so labels can be
/// recomputed independently.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub op: Operator,
    pub decision: PartitionDecision,
    pub state: DeviceState,
    pub features: FeatureVector,
    pub log_latency: f64,
    pub log_energy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub features: Vec<FeatureVector>,
    pub log_latency: Vec<f64>,
    pub log_energy: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn push(&mut self, features: FeatureVector, log_latency: f64, log_energy: f64) {
        self.features.push(features);
        self.log_latency.push(log_latency);
        self.log_energy.push(log_energy);
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv_to(&mut buf)?;
        crate::bench::write_atomic(path, &buf)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header = FEATURE_NAMES.iter().chain(LABEL_NAMES.iter());
        w.write_record(header).map_err(csv_err)?;
        for i in 0..self.len() {
            let row = self.features[i]
                .iter()
                .chain([&self.log_latency[i], &self.log_energy[i]])
                .map(|v| v.to_string());
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv_from(file)
    }

    pub fn read_csv_from<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let expected: Vec<&str> = FEATURE_NAMES.iter().chain(LABEL_NAMES.iter()).copied().collect();
        let header = r.headers().map_err(csv_err)?;
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse("dataset header does not match the feature layout".into()));
        }
        let mut ds = Dataset::default();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let vals = rec
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", line + 1)))?;
            if vals.len() != FEATURE_DIM + 2 {
                return Err(Error::Parse(format!("row {}: wrong column count", line + 1)));
            }
            let mut f = [0.0; FEATURE_DIM];
            f.copy_from_slice(&vals[..FEATURE_DIM]);
            ds.push(f, vals[FEATURE_DIM], vals[FEATURE_DIM + 1]);
        }
        Ok(ds)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

/// Draws `n` random (operator, decision, state) triples labelled with the
/// noise-free compute cost. Inputs are taken to be already resident, so no
/// transfer cost enters the labels. Sampled operators are all divisible: the
/// simulator's cost does not depend on the kind, and this keeps every kind
/// paired with every decision.
pub fn gen_samples(spec: &DeviceSpec, n: usize, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = DEFAULT_RATIO_GRID;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = OpKind::ALL[rng.random_range(0..OpKind::ALL.len())];
        let flops = log_uniform(&mut rng, FLOPS_RANGE);
        let input = log_uniform(&mut rng, BYTES_RANGE) as u64;
        let output = log_uniform(&mut rng, BYTES_RANGE) as u64;
        let decision = match rng.random_range(0..grid.len() + 2) {
            0 => PartitionDecision::CpuOnly,
            1 => PartitionDecision::GpuOnly,
            k => PartitionDecision::CoExec(grid[k - 2]),
        };
        let state = DeviceState {
            cpu_freq: rng.random_range(FREQ_RANGE.0..FREQ_RANGE.1) * spec.cpu.f_max,
            gpu_freq: rng.random_range(FREQ_RANGE.0..FREQ_RANGE.1) * spec.gpu.f_max,
            cpu_util: rng.random_range(0.0..UTIL_MAX),
            gpu_util: rng.random_range(0.0..UTIL_MAX),
        };
        let op = Operator {
            id: 0,
            kind,
            flops,
            input: TensorSpec::new(input),
            output: TensorSpec::new(output),
            divisible: true,
        };
        let cost = compute_cost(&op, decision, spec, &state)?;
        let features = featurize(&op, decision, &state, spec);
        out.push(Sample {
            op,
            decision,
            state,
            features,
            log_latency: cost.latency_s.ln(),
            log_energy: cost.energy_j.ln(),
        });
    }
    Ok(out)
}

pub fn gen_dataset(spec: &DeviceSpec, n: usize, seed: u64) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for s in gen_samples(spec, n, seed)? {
        ds.push(s.features, s.log_latency, s.log_energy);
    }
    Ok(ds)
}
