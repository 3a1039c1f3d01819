//! CART regression trees with the squared-error criterion.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A tree node. Samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<f64> {
        match self {
            Node::Leaf { value } => vec![*value],
            Node::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }

    /// Largest feature index referenced by any split.
    pub fn max_feature(&self) -> Option<usize> {
        match self {
            Node::Leaf { .. } => None,
            Node::Split {
                feature, left, right, ..
            } => [Some(*feature), left.max_feature(), right.max_feature()]
                .into_iter()
                .flatten()
                .max(),
        }
    }

    pub fn all_finite(&self) -> bool {
        match self {
            Node::Leaf { value } => value.is_finite(),
            Node::Split {
                threshold, left, right, ..
            } => threshold.is_finite() && left.all_finite() && right.all_finite(),
        }
    }
}

/// Features considered at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    All,
    /// `ceil(sqrt(arity))` features drawn without replacement per split.
    Sqrt,
}

impl MaxFeatures {
    pub fn count(self, arity: usize) -> usize {
        match self {
            MaxFeatures::All => arity,
            MaxFeatures::Sqrt => ((arity as f64).sqrt().ceil() as usize).clamp(1, arity.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
}

/// Column-major view of a design matrix.
pub struct Columns<'a> {
    pub columns: &'a [Vec<f64>],
    pub targets: &'a [f64],
}

impl Columns<'_> {
    pub fn arity(&self) -> usize {
        self.columns.len()
    }
}

/// Mean that is exact for constant inputs.
pub(crate) fn mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else { return 0.0 };
    if it.all(|v| v == first) {
        return first;
    }
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Fits one tree on the samples listed in `rows` (repeats allowed, as in a
/// bootstrap resample). Deterministic given `seed`.
pub fn fit_tree(data: &Columns<'_>, rows: &[usize], params: &TreeParams, seed: u64) -> Node {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rows.to_vec();
    build(data, &mut rows, params, 0, &mut rng)
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn build(data: &Columns<'_>, rows: &mut [usize], p: &TreeParams, depth: usize, rng: &mut ChaCha8Rng) -> Node {
    let y = data.targets;
    let value = mean(rows.iter().map(|&i| y[i]));
    let n = rows.len();
    let constant = rows.iter().all(|&i| y[i] == y[rows[0]]);
    if n == 0 || depth >= p.max_depth || n < p.min_samples_split || n < 2 * p.min_samples_leaf || constant {
        return Node::Leaf { value };
    }

    let arity = data.arity();
    let k = p.max_features.count(arity);
    let mut features: Vec<usize> = if k >= arity {
        (0..arity).collect()
    } else {
        sample(rng, arity, k).into_vec()
    };
    features.sort_unstable();

    let mut best: Option<BestSplit> = None;
    let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &f in &features {
        let col = &data.columns[f];
        sorted.clear();
        sorted.extend(rows.iter().map(|&i| (col[i], y[i] - value)));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = sorted.iter().map(|s| s.1).sum();
        let mut left = 0.0;
        for j in 0..n - 1 {
            left += sorted[j].1;
            let (x_here, x_next) = (sorted[j].0, sorted[j + 1].0);
            if x_here == x_next {
                continue;
            }
            let n_left = j + 1;
            let n_right = n - n_left;
            if n_left < p.min_samples_leaf || n_right < p.min_samples_leaf {
                continue;
            }
            let right = total - left;
            // SSE reduction on centered targets.
            let gain = left * left / n_left as f64 + right * right / n_right as f64 - total * total / n as f64;
            if gain > 0.0 && best.as_ref().map_or(true, |b| gain > b.gain) {
                let mut threshold = (x_here + x_next) / 2.0;
                if threshold >= x_next {
                    threshold = x_here;
                }
                best = Some(BestSplit {
                    gain,
                    feature: f,
                    threshold,
                });
            }
        }
    }

    let Some(split) = best else {
        return Node::Leaf { value };
    };
    let col = &data.columns[split.feature];
    let mid = partition(rows, |i| col[i] <= split.threshold);
    let (l, r) = rows.split_at_mut(mid);
    let left = build(data, l, p, depth + 1, rng);
    let right = build(data, r, p, depth + 1, rng);
    Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Stable partition; returns the count of elements satisfying `pred`.
fn partition(rows: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let (yes, no): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| pred(i));
    let mid = yes.len();
    rows[..mid].copy_from_slice(&yes);
    rows[mid..].copy_from_slice(&no);
    mid
}
