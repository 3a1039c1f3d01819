use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::TrainingSet;
use super::tree::{fit_tree, mean, Columns, MaxFeatures, Node, TreeParams};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RFParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RFParams {
    fn default() -> Self {
        Self {
            n_trees: 100_000,
            max_depth: 3,
            min_samples_split: 4,
            min_samples_leaf: 2,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl RFParams {
    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            min_samples_leaf: self.min_samples_leaf,
            max_features: self.max_features,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.n_trees == 0 {
            return Err(ModelError::InvalidParam("n_trees must be positive".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ModelError::InvalidParam("min_samples_leaf must be positive".into()));
        }
        if self.min_samples_split < 2 {
            return Err(ModelError::InvalidParam("min_samples_split must be at least 2".into()));
        }
        if self.max_depth == 0 {
            return Err(ModelError::InvalidParam("max_depth must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GBParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for GBParams {
    fn default() -> Self {
        Self {
            n_trees: 300_000,
            max_depth: 3,
            learning_rate: 3e-6,
            seed: 0,
        }
    }
}

impl GBParams {
    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.n_trees == 0 {
            return Err(ModelError::InvalidParam("n_trees must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidParam(format!("learning_rate {}", self.learning_rate)));
        }
        if self.max_depth == 0 {
            return Err(ModelError::InvalidParam("max_depth must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub params: RFParams,
    pub feature_arity: usize,
    pub trees: Vec<Node>,
}

impl ForestModel {
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedModel {
    pub params: GBParams,
    pub feature_arity: usize,
    pub base: f64,
    pub trees: Vec<Node>,
}

impl BoostedModel {
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let lr = self.params.learning_rate;
        self.base + self.trees.iter().map(|t| lr * t.predict(x)).sum::<f64>()
    }
}

/// splitmix64 finalizer; derives independent per-tree seeds.
pub fn tree_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_set(ts: &TrainingSet) -> Result<usize, ModelError> {
    let arity = ts.arity().ok_or(ModelError::EmptyTrainingSet)?;
    if ts.rows.iter().any(|r| !r.target.is_finite() || r.features.iter().any(|v| !v.is_finite())) {
        return Err(ModelError::NonFinite);
    }
    Ok(arity)
}

pub fn fit_random_forest(ts: &TrainingSet, params: &RFParams) -> Result<ForestModel, ModelError> {
    params.validate()?;
    let arity = check_set(ts)?;
    let columns = ts.columns();
    let targets = ts.targets();
    let data = Columns {
        columns: &columns,
        targets: &targets,
    };
    let tp = params.tree_params();
    let n = ts.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let seed = tree_seed(params.seed, i as u64);
            let rows: Vec<usize> = if params.bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB007);
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree(&data, &rows, &tp, seed)
        })
        .collect();
    Ok(ForestModel {
        params: *params,
        feature_arity: arity,
        trees,
    })
}

pub fn fit_gradient_boosting(ts: &TrainingSet, params: &GBParams) -> Result<BoostedModel, ModelError> {
    fit_gradient_boosting_with_history(ts, params).map(|(m, _)| m)
}

/// Also returns the training MSE after each tree.
pub fn fit_gradient_boosting_with_history(
    ts: &TrainingSet,
    params: &GBParams,
) -> Result<(BoostedModel, Vec<f64>), ModelError> {
    params.validate()?;
    let arity = check_set(ts)?;
    let columns = ts.columns();
    let targets = ts.targets();
    let n = ts.len();
    let base = mean(targets.iter().copied());
    let mut pred = vec![base; n];
    let rows: Vec<usize> = (0..n).collect();
    let tp = params.tree_params();
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut history = Vec::with_capacity(params.n_trees);
    let mut residual = vec![0.0; n];
    for i in 0..params.n_trees {
        for k in 0..n {
            residual[k] = targets[k] - pred[k];
        }
        let data = Columns {
            columns: &columns,
            targets: &residual,
        };
        let tree = fit_tree(&data, &rows, &tp, tree_seed(params.seed, i as u64));
        for (k, p) in pred.iter_mut().enumerate() {
            let x: Vec<f64> = columns.iter().map(|c| c[k]).collect();
            *p += params.learning_rate * tree.predict(&x);
        }
        trees.push(tree);
        history.push(
            targets
                .iter()
                .zip(&pred)
                .map(|(t, p)| (t - p).powi(2))
                .sum::<f64>()
                / n as f64,
        );
    }
    Ok((
        BoostedModel {
            params: *params,
            feature_arity: arity,
            base,
            trees,
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_set(n: usize) -> TrainingSet {
        let mut ts = TrainingSet::new();
        for i in 0..n {
            let x = i as f64 * 1000.0;
            ts.push(vec![x], 14.0 + 2e-5 * x + 0.05 * ((i * 7 % 5) as f64 - 2.0), "c")
                .unwrap();
        }
        ts
    }

    #[test]
    fn forest_is_deterministic_for_a_seed() {
        let ts = linear_set(60);
        let p = RFParams {
            n_trees: 20,
            seed: 11,
            ..RFParams::default()
        };
        let a = fit_random_forest(&ts, &p).unwrap();
        let b = fit_random_forest(&ts, &p).unwrap();
        assert_eq!(a, b);
        let c = fit_random_forest(&ts, &RFParams { seed: 12, ..p }).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn single_tree_forest_equals_tree() {
        let ts = linear_set(30);
        let p = RFParams {
            n_trees: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            seed: 5,
            ..RFParams::default()
        };
        let forest = fit_random_forest(&ts, &p).unwrap();
        let cols = ts.columns();
        let y = ts.targets();
        let rows: Vec<usize> = (0..ts.len()).collect();
        let tree = fit_tree(
            &Columns {
                columns: &cols,
                targets: &y,
            },
            &rows,
            &p.tree_params(),
            tree_seed(5, 0),
        );
        assert_eq!(forest.trees, vec![tree]);
    }

    #[test]
    fn forest_predictions_stay_in_target_range() {
        let ts = linear_set(50);
        let m = fit_random_forest(
            &ts,
            &RFParams {
                n_trees: 50,
                seed: 1,
                ..RFParams::default()
            },
        )
        .unwrap();
        let (lo, hi) = ts
            .targets()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        for x in [-1e6, 0.0, 12_345.0, 1e9] {
            let p = m.predict_unchecked(&[x]);
            assert!(p >= lo && p <= hi);
        }
    }

    #[test]
    fn boosting_loss_never_increases() {
        let ts = linear_set(40);
        let p = GBParams {
            n_trees: 200,
            max_depth: 3,
            learning_rate: 0.1,
            seed: 0,
        };
        let (_, hist) = fit_gradient_boosting_with_history(&ts, &p).unwrap();
        for w in hist.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn boosting_constant_target() {
        let mut ts = TrainingSet::new();
        for i in 0..10 {
            ts.push(vec![f64::from(i)], 3.25, "c").unwrap();
        }
        let m = fit_gradient_boosting(
            &ts,
            &GBParams {
                n_trees: 10,
                learning_rate: 0.5,
                ..GBParams::default()
            },
        )
        .unwrap();
        assert_eq!(m.base, 3.25);
        assert!(m.trees.iter().all(|t| *t == Node::Leaf { value: 0.0 }));
        assert_eq!(m.predict_unchecked(&[100.0]), 3.25);
    }

    #[test]
    fn boosting_interpolates_eight_points() {
        let mut ts = TrainingSet::new();
        let ys = [1.0, 5.0, 2.0, 8.0, 3.0, 9.0, 4.0, 7.0];
        for (i, y) in ys.iter().enumerate() {
            ts.push(vec![i as f64], *y, "c").unwrap();
        }
        let m = fit_gradient_boosting(
            &ts,
            &GBParams {
                n_trees: 500,
                max_depth: 3,
                learning_rate: 0.5,
                seed: 0,
            },
        )
        .unwrap();
        for (i, y) in ys.iter().enumerate() {
            assert!((m.predict_unchecked(&[i as f64]) - y).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_params() {
        let ts = linear_set(5);
        assert!(fit_random_forest(&ts, &RFParams { n_trees: 0, ..RFParams::default() }).is_err());
        assert!(fit_gradient_boosting(&ts, &GBParams { learning_rate: 0.0, ..GBParams::default() }).is_err());
        assert!(fit_random_forest(&TrainingSet::new(), &RFParams::default()).is_err());
    }
}
