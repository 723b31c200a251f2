//! Least-squares gradient boosting with exact greedy split search.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    LogLatency,
    LogEnergy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtHyper {
    pub trees: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub min_leaf: usize,
}

impl Default for GbdtHyper {
    fn default() -> Self {
        Self {
            trees: 200,
            depth: 4,
            learning_rate: 0.1,
            subsample: 0.8,
            min_leaf: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Rows with `x[feature] <= threshold` go left. Node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub target: Target,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

impl GbdtModel {
    /// Raw score in target space (a log cost).
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// (trees so far, training MSE) at round 0 and every 20 rounds after.
    pub checkpoints: Vec<(usize, f64)>,
}

pub const CHECKPOINT_EVERY: usize = 20;

struct Builder<'a, R> {
    rows: &'a [R],
    residual: &'a [f64],
    min_leaf: usize,
    max_depth: usize,
    /// Scratch: which rows of the current node fall left.
    goes_left: Vec<bool>,
    nodes: Vec<Node>,
}

impl<R: AsRef<[f64]>> Builder<'_, R> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let value = idx.iter().map(|&i| self.residual[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(Node::Leaf { value });
        self.nodes.len() - 1
    }

    /// `sorted[f]` lists the node's rows ordered by feature `f`.
    fn build(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> usize {
        let idx = &sorted[0];
        let n = idx.len();
        if depth >= self.max_depth || n < 2 * self.min_leaf {
            return self.leaf(idx);
        }
        let total: f64 = idx.iter().map(|&i| self.residual[i]).sum();
        let parent = total * total / n as f64;

        let mut best: Option<(f64, usize, usize)> = None; // gain, feature, split position
        for (f, order) in sorted.iter().enumerate() {
            let mut left_sum = 0.0;
            for pos in 0..n - self.min_leaf {
                left_sum += self.residual[order[pos]];
                let n_left = pos + 1;
                if n_left < self.min_leaf {
                    continue;
                }
                let here = self.rows[order[pos]].as_ref()[f];
                let next = self.rows[order[pos + 1]].as_ref()[f];
                if here == next {
                    continue;
                }
                let right_sum = total - left_sum;
                let n_right = n - n_left;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - parent;
                if gain > 0.0 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, pos));
                }
            }
        }
        let Some((_, feature, pos)) = best else {
            return self.leaf(idx);
        };

        let order = &sorted[feature];
        let lo = self.rows[order[pos]].as_ref()[feature];
        let hi = self.rows[order[pos + 1]].as_ref()[feature];
        let mut threshold = lo + (hi - lo) / 2.0;
        if !(threshold >= lo && threshold < hi) {
            threshold = lo;
        }
        for (k, &i) in order.iter().enumerate() {
            self.goes_left[i] = k <= pos;
        }
        let (mut left, mut right): (Vec<Vec<usize>>, Vec<Vec<usize>>) = sorted
            .iter()
            .map(|o| o.iter().partition(|&&i| self.goes_left[i]))
            .unzip();
        drop(sorted);

        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let l = self.build(std::mem::take(&mut left), depth + 1);
        let r = self.build(std::mem::take(&mut right), depth + 1);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        me
    }
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
}

pub fn train_gbdt<R: AsRef<[f64]>>(
    rows: &[R],
    y: &[f64],
    target: Target,
    hyper: &GbdtHyper,
    seed: u64,
) -> Result<(GbdtModel, TrainReport)> {
    let n = rows.len();
    let need = 10 * hyper.min_leaf;
    if n < need || n != y.len() {
        return Err(Error::InsufficientData { have: n.min(y.len()), need });
    }
    if !(hyper.subsample > 0.0 && hyper.subsample <= 1.0) || hyper.min_leaf == 0 {
        return Err(Error::InvalidArgument("subsample must be in (0, 1], min_leaf >= 1".into()));
    }
    let dim = rows[0].as_ref().len();
    if rows.iter().any(|r| r.as_ref().len() != dim) {
        return Err(Error::InvalidArgument("rows differ in length".into()));
    }

    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mut residual = vec![0.0; n];
    let mut report = TrainReport::default();
    report.checkpoints.push((0, mse(&pred, y)));

    let presorted: Vec<Vec<usize>> = (0..dim)
        .map(|f| {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| rows[a].as_ref()[f].total_cmp(&rows[b].as_ref()[f]));
            order
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = ((n as f64 * hyper.subsample).round() as usize).clamp(1, n);
    let mut in_bag = vec![false; n];
    let mut trees = Vec::with_capacity(hyper.trees);
    for round in 1..=hyper.trees {
        for (r, (p, t)) in residual.iter_mut().zip(pred.iter().zip(y)) {
            *r = t - p;
        }
        in_bag.iter_mut().for_each(|b| *b = false);
        for i in rand::seq::index::sample(&mut rng, n, m) {
            in_bag[i] = true;
        }
        let sorted: Vec<Vec<usize>> = presorted
            .iter()
            .map(|o| o.iter().copied().filter(|&i| in_bag[i]).collect())
            .collect();
        let mut b = Builder {
            rows,
            residual: &residual,
            min_leaf: hyper.min_leaf,
            max_depth: hyper.depth,
            goes_left: vec![false; n],
            nodes: Vec::new(),
        };
        b.build(sorted, 0);
        let tree = RegressionTree { nodes: b.nodes };
        for (p, row) in pred.iter_mut().zip(rows) {
            *p += hyper.learning_rate * tree.predict(row.as_ref());
        }
        trees.push(tree);
        if round % CHECKPOINT_EVERY == 0 || round == hyper.trees {
            report.checkpoints.push((round, mse(&pred, y)));
        }
    }
    let model = GbdtModel {
        target,
        base_score,
        learning_rate: hyper.learning_rate,
        trees,
    };
    Ok((model, report))
}

/// Mean absolute percentage error of `exp(prediction)` against `exp(label)`.
pub fn mape_pct<R: AsRef<[f64]>>(model: &GbdtModel, rows: &[R], y: &[f64]) -> f64 {
    let total: f64 = rows
        .iter()
        .zip(y)
        .map(|(r, t)| ((model.predict(r.as_ref()) - t).exp() - 1.0).abs())
        .sum();
    100.0 * total / y.len() as f64
}
