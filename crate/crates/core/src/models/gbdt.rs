//! Depth-limited gradient-boosted trees with exact greedy splits.
//!
//! Trees grow depth-wise on the binary log-loss with second-order
//! (Newton) leaf values. Categorical features are split on their ordinal
//! code like numeric ones.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{log_loss, sigmoid};
use crate::dataset::Dataset;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_child_samples: usize,
    /// Row fraction sampled without replacement per tree.
    pub subsample: f64,
    /// Feature fraction sampled per tree.
    pub colsample_bytree: f64,
    /// Stop when validation log-loss has not improved for this many rounds.
    pub early_stopping_rounds: Option<usize>,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_estimators: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_child_samples: 20,
            subsample: 1.0,
            colsample_bytree: 1.0,
            early_stopping_rounds: None,
            lambda: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Log-odds contribution, already scaled by the learning rate.
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub dim: usize,
    pub prior_logit: f64,
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_estimators: usize,
    pub min_child_samples: usize,
    /// Training log-loss after each kept round.
    #[serde(default)]
    pub train_loss: Vec<f64>,
}

impl TreeEnsemble {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.prior_logit + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

struct Grower<'a> {
    rows: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    features: Vec<usize>,
    cfg: &'a GbdtConfig,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        let g: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = idx.iter().map(|&i| self.hess[i]).sum();
        -g / (h + self.cfg.lambda) * self.cfg.learning_rate
    }

    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let min_child = self.cfg.min_child_samples.max(1);
        if idx.len() < 2 * min_child {
            return None;
        }
        let lambda = self.cfg.lambda;
        let g_tot: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let h_tot: f64 = idx.iter().map(|&i| self.hess[i]).sum();
        let parent = g_tot * g_tot / (h_tot + lambda);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for &f in &self.features {
            order.sort_by(|&a, &b| self.rows[a][f].total_cmp(&self.rows[b][f]));
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let i = order[k];
                gl += self.grad[i];
                hl += self.hess[i];
                let n_left = k + 1;
                if n_left < min_child || order.len() - n_left < min_child {
                    continue;
                }
                let v = self.rows[i][f];
                let next = self.rows[order[k + 1]][f];
                if next <= v {
                    continue;
                }
                let gr = g_tot - gl;
                let hr = h_tot - hl;
                let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                if gain > 1e-12 && best.is_none_or(|(_, _, bg)| gain > bg) {
                    best = Some((f, 0.5 * (v + next), gain));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let split = if depth < self.cfg.max_depth { self.best_split(&idx) } else { None };
        match split {
            None => {
                self.nodes[slot] = Node::Leaf {
                    value: self.leaf_value(&idx),
                };
            }
            Some((feature, threshold, _)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.rows[i][feature] <= threshold);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[slot] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
        }
        slot
    }
}

/// Fit a boosted ensemble; `valid` enables early stopping.
pub fn train_gbdt(train: &Dataset, valid: Option<&Dataset>, cfg: &GbdtConfig) -> Result<TreeEnsemble> {
    if train.is_empty() {
        return Err(Error::Degenerate("empty training set".into()));
    }
    if !(0.0..=1.0).contains(&cfg.subsample) || cfg.subsample == 0.0 {
        return Err(Error::InvalidParameter("subsample must be in (0, 1]".into()));
    }
    if !(0.0..=1.0).contains(&cfg.colsample_bytree) || cfg.colsample_bytree == 0.0 {
        return Err(Error::InvalidParameter("colsample_bytree must be in (0, 1]".into()));
    }
    let n = train.len();
    let d = train.dim();
    let prevalence = train.prevalence().clamp(1e-6, 1.0 - 1e-6);
    let prior_logit = (prevalence / (1.0 - prevalence)).ln();
    let mut logits = vec![prior_logit; n];
    let mut valid_logits: Vec<f64> = valid.map(|v| vec![prior_logit; v.len()]).unwrap_or_default();
    let mut trees = Vec::new();
    let mut train_loss = Vec::new();
    let mut best = (f64::INFINITY, 0usize);
    let mut rng = rng::stream(cfg.seed, "gbdt", &[]);
    let n_rows = ((n as f64 * cfg.subsample).round() as usize).clamp(1, n);
    let n_feats = ((d as f64 * cfg.colsample_bytree).round() as usize).clamp(1, d);

    for round in 0..cfg.n_estimators {
        let grad: Vec<f64> = logits.iter().zip(&train.labels).map(|(&z, &y)| sigmoid(z) - f64::from(y)).collect();
        let hess: Vec<f64> = logits.iter().map(|&z| {
            let p = sigmoid(z);
            (p * (1.0 - p)).max(1e-12)
        }).collect();
        let mut rows: Vec<usize> = if n_rows == n {
            (0..n).collect()
        } else {
            index::sample(&mut rng, n, n_rows).into_vec()
        };
        rows.sort_unstable();
        let mut features: Vec<usize> = (0..d).collect();
        if n_feats < d {
            features.shuffle(&mut rng);
            features.truncate(n_feats);
            features.sort_unstable();
        }
        let _ = rng.random::<u64>();
        let mut grower = Grower {
            rows: &train.rows,
            grad: &grad,
            hess: &hess,
            features,
            cfg,
            nodes: Vec::new(),
        };
        grower.grow(rows, 0);
        let tree = Tree { nodes: grower.nodes };
        for (z, x) in logits.iter_mut().zip(&train.rows) {
            *z += tree.predict(x);
        }
        let scores: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        let loss = log_loss(&scores, &train.labels);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite training loss at round {round}")));
        }
        train_loss.push(loss);
        if let Some(v) = valid {
            for (z, x) in valid_logits.iter_mut().zip(&v.rows) {
                *z += tree.predict(x);
            }
        }
        trees.push(tree);
        if let (Some(v), Some(patience)) = (valid, cfg.early_stopping_rounds) {
            let vs: Vec<f64> = valid_logits.iter().map(|&z| sigmoid(z)).collect();
            let vl = log_loss(&vs, &v.labels);
            if vl < best.0 - 1e-12 {
                best = (vl, trees.len());
            } else if trees.len() - best.1 >= patience {
                log::debug!("early stopping at round {round}; best round {}", best.1);
                trees.truncate(best.1);
                train_loss.truncate(best.1);
                break;
            }
        }
    }
    Ok(TreeEnsemble {
        dim: d,
        prior_logit,
        trees,
        learning_rate: cfg.learning_rate,
        max_depth: cfg.max_depth,
        n_estimators: cfg.n_estimators,
        min_child_samples: cfg.min_child_samples,
        train_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureSchema;

    fn step_data() -> Dataset {
        let xs: Vec<f64> = (0..40).map(f64::from).collect();
        let ys: Vec<u8> = xs.iter().map(|&x| u8::from(x >= 20.0)).collect();
        Dataset::new("step", vec![FeatureSchema::numeric("x", 0)], xs.iter().map(|&x| vec![x]).collect(), ys).unwrap()
    }

    /// Exhaustive search over thresholds for the split minimizing the number
    /// of misclassified points on the step toy.
    fn brute_force_threshold(ds: &Dataset) -> f64 {
        let xs = ds.column(0);
        let mut best = (usize::MAX, 0.0);
        for w in xs.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let errors = xs.iter().zip(&ds.labels).filter(|(&x, &y)| u8::from(x > t) != y).count();
            if errors < best.0 {
                best = (errors, t);
            }
        }
        best.1
    }

    #[test]
    fn stumps_fit_step_data() {
        let ds = step_data();
        let cfg = GbdtConfig { n_estimators: 20, learning_rate: 1.0, max_depth: 1, min_child_samples: 1, ..Default::default() };
        let m = train_gbdt(&ds, None, &cfg).unwrap();
        match m.trees[0].nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, brute_force_threshold(&ds)),
            _ => panic!("root should split"),
        }
        let scores: Vec<f64> = ds.rows.iter().map(|r| m.score(r)).collect();
        assert!(log_loss(&scores, &ds.labels) < 0.1);
        assert!(m.trees.iter().all(|t| t.depth() <= 1));
    }

    #[test]
    fn zero_learning_rate_predicts_prior() {
        let ds = step_data();
        let cfg = GbdtConfig { n_estimators: 5, learning_rate: 0.0, ..Default::default() };
        let m = train_gbdt(&ds, None, &cfg).unwrap();
        for r in &ds.rows {
            assert!((m.score(r) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn training_loss_non_increasing_without_subsampling() {
        let mut rng = crate::rng::stream(1, "gbdt-test", &[]);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let labels: Vec<u8> = rows.iter().map(|r| u8::from(r[0] * r[1] + 0.3 * rng.random_range(-1.0..1.0) > 0.0)).collect();
        let ds = Dataset::new("xor", vec![FeatureSchema::numeric("a", 0), FeatureSchema::numeric("b", 1)], rows, labels).unwrap();
        let cfg = GbdtConfig { n_estimators: 30, learning_rate: 0.3, max_depth: 3, min_child_samples: 5, ..Default::default() };
        let m = train_gbdt(&ds, None, &cfg).unwrap();
        for w in m.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(m.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn min_child_samples_turns_node_into_leaf() {
        let ds = step_data();
        let cfg = GbdtConfig { n_estimators: 1, max_depth: 3, min_child_samples: 30, ..Default::default() };
        let m = train_gbdt(&ds, None, &cfg).unwrap();
        assert!(matches!(m.trees[0].nodes[0], Node::Leaf { .. }));
    }
}
