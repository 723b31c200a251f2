#![allow(dead_code)]

use opsplit::model::{synth_yolo_like, DeviceSpec};
use opsplit::profiler::gru::{window_loss_and_grad, GruParams, HIDDEN_DIM, INPUT_DIM, OUTPUT_DIM};
use opsplit::profiler::{gen_dataset, train_profiler, GbdtHyper, ProfilerModel, TrainConfig};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeds for the full-size profiler used by the acceptance gates.
pub const TRAIN_ROWS: usize = 50_000;
pub const TRAIN_DATA_SEED: u64 = 1;
pub const HOLDOUT_ROWS: usize = 10_000;
pub const HOLDOUT_SEED: u64 = 99;

pub fn full_profiler(spec: &DeviceSpec) -> ProfilerModel {
    let data = gen_dataset(spec, TRAIN_ROWS, TRAIN_DATA_SEED).unwrap();
    train_profiler(&data, &synth_yolo_like(), spec, &TrainConfig::default())
        .unwrap()
        .0
}

/// A cheap profiler for plumbing tests: fewer rows and trees, default GRU.
pub fn small_profiler(spec: &DeviceSpec) -> ProfilerModel {
    let data = gen_dataset(spec, 4_000, 3).unwrap();
    let cfg = TrainConfig {
        gbdt: GbdtHyper {
            trees: 60,
            ..GbdtHyper::default()
        },
        ..TrainConfig::default()
    };
    train_profiler(&data, &synth_yolo_like(), spec, &cfg).unwrap().0
}

/// Flat parameter layout: slots w_z w_r w_h u_z u_r u_h b_z b_r b_h v c,
/// each stored column-major.
pub struct PlainGru {
    pub w: [Vec<Vec<f64>>; 3],
    pub u: [Vec<Vec<f64>>; 3],
    pub b: [Vec<f64>; 3],
    pub v: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

fn take_matrix(flat: &[f64], at: &mut usize, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; cols]; rows];
    for j in 0..cols {
        for row in m.iter_mut() {
            row[j] = flat[*at];
            *at += 1;
        }
    }
    m
}

impl PlainGru {
    pub fn from_flat(flat: &[f64]) -> Self {
        let mut at = 0;
        let w = std::array::from_fn(|_| take_matrix(flat, &mut at, HIDDEN_DIM, INPUT_DIM));
        let u = std::array::from_fn(|_| take_matrix(flat, &mut at, HIDDEN_DIM, HIDDEN_DIM));
        let b = std::array::from_fn(|_| {
            take_matrix(flat, &mut at, HIDDEN_DIM, 1).into_iter().map(|r| r[0]).collect()
        });
        let v = take_matrix(flat, &mut at, OUTPUT_DIM, HIDDEN_DIM);
        let c = take_matrix(flat, &mut at, OUTPUT_DIM, 1).into_iter().map(|r| r[0]).collect();
        assert_eq!(at, flat.len());
        Self { w, u, b, v, c }
    }

    /// One GRU step with explicit loops; returns (h', unclamped output).
    pub fn step(&self, h: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let affine = |g: usize, hh: &[f64], i: usize| {
            let mut s = self.b[g][i];
            for (k, xk) in x.iter().enumerate() {
                s += self.w[g][i][k] * xk;
            }
            for (k, hk) in hh.iter().enumerate() {
                s += self.u[g][i][k] * hk;
            }
            s
        };
        let sig = |a: f64| 1.0 / (1.0 + (-a).exp());
        let z: Vec<f64> = (0..HIDDEN_DIM).map(|i| sig(affine(0, h, i))).collect();
        let r: Vec<f64> = (0..HIDDEN_DIM).map(|i| sig(affine(1, h, i))).collect();
        let rh: Vec<f64> = (0..HIDDEN_DIM).map(|i| r[i] * h[i]).collect();
        let ht: Vec<f64> = (0..HIDDEN_DIM).map(|i| affine(2, &rh, i).tanh()).collect();
        let hn: Vec<f64> = (0..HIDDEN_DIM).map(|i| (1.0 - z[i]) * h[i] + z[i] * ht[i]).collect();
        let out = (0..OUTPUT_DIM)
            .map(|o| self.c[o] + (0..HIDDEN_DIM).map(|k| self.v[o][k] * hn[k]).sum::<f64>())
            .collect();
        (hn, out)
    }
}

/// Relative error with a small floor so parameters with vanishing gradients
/// do not divide by zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Max relative error between the analytic BPTT gradient and central finite
/// differences on a random 3-step episode.
pub fn gru_gradcheck(seed: u64) -> f64 {
    const EPS: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = GruParams::random(seed, 0.3);
    let h0 = DVector::from_fn(HIDDEN_DIM, |_, _| rng.random_range(-0.5..0.5));
    let inputs: Vec<[f64; INPUT_DIM]> =
        (0..3).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
    let targets: Vec<[f64; OUTPUT_DIM]> =
        (0..3).map(|_| std::array::from_fn(|_| rng.random_range(-0.5..0.5))).collect();
    let (_, grad, _) = window_loss_and_grad(&p, &h0, &inputs, &targets);
    let analytic = grad.to_flat();
    let base = p.to_flat();
    let mut worst: f64 = 0.0;
    let mut q = p.clone();
    for k in 0..base.len() {
        let mut flat = base.clone();
        flat[k] = base[k] + EPS;
        q.set_flat(&flat);
        let up = window_loss_and_grad(&q, &h0, &inputs, &targets).0;
        flat[k] = base[k] - EPS;
        q.set_flat(&flat);
        let down = window_loss_and_grad(&q, &h0, &inputs, &targets).0;
        let numeric = (up - down) / (2.0 * EPS);
        worst = worst.max(rel_err(analytic[k], numeric));
    }
    worst
}
