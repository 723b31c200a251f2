//! Small GRU that maps a stream of prediction residuals to multiplicative
//! cost corrections.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HIDDEN_DIM: usize = 16;
pub const INPUT_DIM: usize = 5;
pub const OUTPUT_DIM: usize = 2;

/// Emitted log-corrections live in [ln 1/4, ln 4].
pub const MAX_LOG_CORRECTION: f64 = std::f64::consts::LN_2 * 2.0;

const INIT_SCALE: f64 = 0.1;

// Parameter slots. Bias and readout-offset vectors are stored as n x 1.
const WZ: usize = 0;
const WR: usize = 1;
const WH: usize = 2;
const UZ: usize = 3;
const UR: usize = 4;
const UH: usize = 5;
const BZ: usize = 6;
const BR: usize = 7;
const BH: usize = 8;
const V: usize = 9;
const C: usize = 10;
const N_PARAMS: usize = 11;
const PARAM_NAMES: [&str; N_PARAMS] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h", "v", "c"];

fn param_shape(slot: usize) -> (usize, usize) {
    match slot {
        WZ | WR | WH => (HIDDEN_DIM, INPUT_DIM),
        UZ | UR | UH => (HIDDEN_DIM, HIDDEN_DIM),
        BZ | BR | BH => (HIDDEN_DIM, 1),
        V => (OUTPUT_DIM, HIDDEN_DIM),
        C => (OUTPUT_DIM, 1),
        _ => unreachable!(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    m: [DMatrix<f64>; N_PARAMS],
}

impl GruParams {
    pub fn zeros() -> Self {
        Self {
            m: std::array::from_fn(|s| {
                let (r, c) = param_shape(s);
                DMatrix::zeros(r, c)
            }),
        }
    }

    pub fn random(seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros();
        for m in p.m.iter_mut() {
            // row-major fill so the draw order matches the serialized layout
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    m[(i, j)] = rng.random_range(-scale..scale);
                }
            }
        }
        p
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            m: std::array::from_fn(|s| &self.m[s] * k),
        }
    }

    pub fn len(&self) -> usize {
        self.m.iter().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All parameters in a fixed flat order (slot by slot, column-major).
    pub fn to_flat(&self) -> Vec<f64> {
        self.m.iter().flat_map(|m| m.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut k = 0;
        for m in self.m.iter_mut() {
            for v in m.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
    }

    fn norm_sq(&self) -> f64 {
        self.m.iter().map(|m| m.norm_squared()).sum()
    }

    fn vec(&self, slot: usize) -> DVector<f64> {
        self.m[slot].column(0).into_owned()
    }
}

/// Cached activations of one forward step, for backprop.
struct Step {
    x: DVector<f64>,
    h: DVector<f64>,
    z: DVector<f64>,
    r: DVector<f64>,
    h_tilde: DVector<f64>,
    h_new: DVector<f64>,
    out_raw: DVector<f64>,
}

fn sigmoid(v: DVector<f64>) -> DVector<f64> {
    v.map(|a| 1.0 / (1.0 + (-a).exp()))
}

fn step(p: &GruParams, h: &DVector<f64>, x: &DVector<f64>) -> Step {
    let z = sigmoid(&p.m[WZ] * x + &p.m[UZ] * h + p.vec(BZ));
    let r = sigmoid(&p.m[WR] * x + &p.m[UR] * h + p.vec(BR));
    let rh = r.component_mul(h);
    let h_tilde = (&p.m[WH] * x + &p.m[UH] * &rh + p.vec(BH)).map(f64::tanh);
    let one = DVector::from_element(HIDDEN_DIM, 1.0);
    let h_new = (&one - &z).component_mul(h) + z.component_mul(&h_tilde);
    let out_raw = &p.m[V] * &h_new + p.vec(C);
    Step {
        x: x.clone(),
        h: h.clone(),
        z,
        r,
        h_tilde,
        h_new,
        out_raw,
    }
}

fn clamp_out(v: &DVector<f64>) -> [f64; OUTPUT_DIM] {
    [
        v[0].clamp(-MAX_LOG_CORRECTION, MAX_LOG_CORRECTION),
        v[1].clamp(-MAX_LOG_CORRECTION, MAX_LOG_CORRECTION),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruCorrector {
    pub params: GruParams,
    pub hidden: DVector<f64>,
}

impl Default for GruCorrector {
    fn default() -> Self {
        Self::from_params(GruParams::zeros())
    }
}

impl GruCorrector {
    pub fn from_params(params: GruParams) -> Self {
        Self {
            params,
            hidden: DVector::zeros(HIDDEN_DIM),
        }
    }

    pub fn reset(&mut self) {
        self.hidden = DVector::zeros(HIDDEN_DIM);
    }

    /// Pure step: the next hidden state and the clamped log-corrections.
    pub fn forward(&self, x: &[f64; INPUT_DIM]) -> (DVector<f64>, [f64; OUTPUT_DIM]) {
        let s = step(&self.params, &self.hidden, &DVector::from_column_slice(x));
        let out = clamp_out(&s.out_raw);
        (s.h_new, out)
    }

    /// Advances the hidden state and returns the log-corrections.
    pub fn advance(&mut self, x: &[f64; INPUT_DIM]) -> [f64; OUTPUT_DIM] {
        let (h, out) = self.forward(x);
        self.hidden = h;
        out
    }
}

/// One training sequence: inputs and the log-residual each output should
/// anticipate.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub inputs: Vec<[f64; INPUT_DIM]>,
    pub targets: Vec<[f64; OUTPUT_DIM]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruHyper {
    pub lr: f64,
    pub momentum: f64,
    pub bptt_len: usize,
    pub epochs: usize,
    pub grad_clip_norm: f64,
}

impl Default for GruHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            momentum: 0.9,
            bptt_len: 32,
            epochs: 20,
            grad_clip_norm: 5.0,
        }
    }
}

/// Mean squared error over all steps and both outputs of a window that
/// starts from hidden state `h0`, with its gradient and the final hidden.
pub fn window_loss_and_grad(
    p: &GruParams,
    h0: &DVector<f64>,
    inputs: &[[f64; INPUT_DIM]],
    targets: &[[f64; OUTPUT_DIM]],
) -> (f64, GruParams, DVector<f64>) {
    let t_len = inputs.len();
    let norm = (t_len * OUTPUT_DIM) as f64;
    let mut steps = Vec::with_capacity(t_len);
    let mut h = h0.clone();
    let mut loss = 0.0;
    for (x, tgt) in inputs.iter().zip(targets) {
        let s = step(p, &h, &DVector::from_column_slice(x));
        let y = clamp_out(&s.out_raw);
        loss += (0..OUTPUT_DIM).map(|k| (y[k] - tgt[k]).powi(2)).sum::<f64>();
        h = s.h_new.clone();
        steps.push(s);
    }
    loss /= norm;

    let mut g = GruParams::zeros();
    let mut dh_next = DVector::zeros(HIDDEN_DIM);
    let one = DVector::from_element(HIDDEN_DIM, 1.0);
    for (s, tgt) in steps.iter().zip(targets).rev() {
        let y = clamp_out(&s.out_raw);
        let d_out = DVector::from_fn(OUTPUT_DIM, |k, _| {
            let inside = s.out_raw[k].abs() < MAX_LOG_CORRECTION;
            if inside {
                2.0 * (y[k] - tgt[k]) / norm
            } else {
                0.0
            }
        });
        g.m[V] += &d_out * s.h_new.transpose();
        g.m[C] += &d_out;
        let dh_new = p.m[V].transpose() * &d_out + &dh_next;

        let dz = dh_new.component_mul(&(&s.h_tilde - &s.h));
        let dh_tilde = dh_new.component_mul(&s.z);
        let mut dh = dh_new.component_mul(&(&one - &s.z));

        let da_h = dh_tilde.component_mul(&s.h_tilde.map(|v| 1.0 - v * v));
        let rh = s.r.component_mul(&s.h);
        g.m[WH] += &da_h * s.x.transpose();
        g.m[UH] += &da_h * rh.transpose();
        g.m[BH] += &da_h;
        let d_rh = p.m[UH].transpose() * &da_h;
        let dr = d_rh.component_mul(&s.h);
        dh += d_rh.component_mul(&s.r);

        let da_r = dr.component_mul(&s.r.map(|v| v * (1.0 - v)));
        g.m[WR] += &da_r * s.x.transpose();
        g.m[UR] += &da_r * s.h.transpose();
        g.m[BR] += &da_r;
        dh += p.m[UR].transpose() * &da_r;

        let da_z = dz.component_mul(&s.z.map(|v| v * (1.0 - v)));
        g.m[WZ] += &da_z * s.x.transpose();
        g.m[UZ] += &da_z * s.h.transpose();
        g.m[BZ] += &da_z;
        dh += p.m[UZ].transpose() * &da_z;

        dh_next = dh;
    }
    (loss, g, h)
}

/// Mean squared error of the emitted corrections over whole episodes, each
/// run from a zero hidden state.
pub fn episodes_mse(p: &GruParams, episodes: &[Episode]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for ep in episodes {
        let mut gru = GruCorrector::from_params(p.clone());
        for (x, t) in ep.inputs.iter().zip(&ep.targets) {
            let y = gru.advance(x);
            total += (0..OUTPUT_DIM).map(|k| (y[k] - t[k]).powi(2)).sum::<f64>();
            count += OUTPUT_DIM;
        }
    }
    total / count.max(1) as f64
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GruReport {
    /// Training MSE before the first epoch and after each epoch.
    pub epoch_mse: Vec<f64>,
}

/// Truncated BPTT with momentum SGD and global gradient-norm clipping.
/// Episode order is reshuffled every epoch; the hidden state carries across
/// windows of one episode and resets between episodes.
pub fn train_gru(episodes: &[Episode], hyper: &GruHyper, seed: u64) -> Result<(GruCorrector, GruReport)> {
    if episodes.is_empty() {
        return Err(Error::EmptyEpisodes);
    }
    if episodes.iter().any(|e| e.inputs.len() != e.targets.len()) {
        return Err(Error::InvalidArgument("episode inputs and targets differ in length".into()));
    }
    if hyper.bptt_len == 0 {
        return Err(Error::InvalidArgument("bptt_len must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = GruParams::random(rng.random(), INIT_SCALE);
    let mut velocity = GruParams::zeros();
    let mut report = GruReport {
        epoch_mse: vec![episodes_mse(&p, episodes)],
    };
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for &e in &order {
            let ep = &episodes[e];
            let mut h = DVector::zeros(HIDDEN_DIM);
            for start in (0..ep.inputs.len()).step_by(hyper.bptt_len) {
                let end = (start + hyper.bptt_len).min(ep.inputs.len());
                let (_, mut g, h_end) =
                    window_loss_and_grad(&p, &h, &ep.inputs[start..end], &ep.targets[start..end]);
                h = h_end;
                let norm = g.norm_sq().sqrt();
                if norm > hyper.grad_clip_norm {
                    g = g.scaled(hyper.grad_clip_norm / norm);
                }
                for s in 0..N_PARAMS {
                    velocity.m[s] = &velocity.m[s] * hyper.momentum - &g.m[s] * hyper.lr;
                    p.m[s] += &velocity.m[s];
                }
            }
        }
        report.epoch_mse.push(episodes_mse(&p, episodes));
    }
    Ok((GruCorrector::from_params(p), report))
}

/// Serialized form: one row-major nested array per parameter.
#[derive(Serialize, Deserialize)]
pub(crate) struct GruFile {
    hidden_dim: usize,
    input_dim: usize,
    output_dim: usize,
    weights: std::collections::BTreeMap<String, Vec<Vec<f64>>>,
}

impl From<&GruParams> for GruFile {
    fn from(p: &GruParams) -> Self {
        let weights = p
            .m
            .iter()
            .zip(PARAM_NAMES)
            .map(|(m, name)| {
                let rows = (0..m.nrows())
                    .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                    .collect();
                (name.to_string(), rows)
            })
            .collect();
        GruFile {
            hidden_dim: HIDDEN_DIM,
            input_dim: INPUT_DIM,
            output_dim: OUTPUT_DIM,
            weights,
        }
    }
}

impl TryFrom<GruFile> for GruParams {
    type Error = Error;

    fn try_from(f: GruFile) -> Result<Self> {
        if (f.hidden_dim, f.input_dim, f.output_dim) != (HIDDEN_DIM, INPUT_DIM, OUTPUT_DIM) {
            return Err(Error::Parse("GRU dimensions do not match this build".into()));
        }
        let mut p = GruParams::zeros();
        for (s, name) in PARAM_NAMES.iter().enumerate() {
            let rows = f
                .weights
                .get(*name)
                .ok_or_else(|| Error::Parse(format!("GRU weight `{name}` missing")))?;
            let (nr, nc) = param_shape(s);
            if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
                return Err(Error::Parse(format!("GRU weight `{name}` has the wrong shape")));
            }
            for (i, row) in rows.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::Parse(format!("GRU weight `{name}` is not finite")));
                    }
                    p.m[s][(i, j)] = v;
                }
            }
        }
        Ok(p)
    }
}
