//! First-order gradient boosting of regression trees under squared error.
//!
//! Every round fits a depth-limited tree to the current residuals. The tree
//! structure is grown on a seeded row subsample restricted to a seeded column
//! subsample; leaf values are then set to the mean residual of all training
//! rows routed to each leaf, so the training loss never increases from one
//! round to the next. Splits are exact greedy over sorted unique values.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Minimum number of subsampled rows per leaf.
    pub min_child_weight: usize,
    pub subsample: f64,
    pub colsample: f64,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            n_rounds: 300,
            max_depth: 6,
            learning_rate: 0.1,
            min_child_weight: 1,
            subsample: 1.0,
            colsample: 1.0,
            seed: 0,
        }
    }
}

impl BoostParams {
    fn validate(&self) -> Result<()> {
        let ok = self.n_rounds >= 1
            && self.max_depth >= 1
            && self.learning_rate > 0.0
            && self.learning_rate <= 1.0
            && self.min_child_weight >= 1
            && self.subsample > 0.0
            && self.subsample <= 1.0
            && self.colsample > 0.0
            && self.colsample <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid boosting parameters: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Child {
    Node(usize),
    Leaf(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SplitNode<T> {
    pub feature: usize,
    /// Rows with `x[feature] <= threshold` go left.
    pub threshold: T,
    pub left: Child,
    pub right: Child,
    /// Squared-error reduction achieved by this split on the rows it was grown on.
    pub gain: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tree<T> {
    pub nodes: Vec<SplitNode<T>>,
    pub leaves: Vec<T>,
}

impl<T: Scalar> Tree<T> {
    fn root(&self) -> Child {
        if self.nodes.is_empty() {
            Child::Leaf(0)
        } else {
            Child::Node(0)
        }
    }

    pub fn leaf_index(&self, x: &[T]) -> usize {
        let mut at = self.root();
        loop {
            match at {
                Child::Leaf(i) => return i,
                Child::Node(i) => {
                    let n = &self.nodes[i];
                    at = if x[n.feature] <= n.threshold { n.left } else { n.right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[T]) -> T {
        self.leaves[self.leaf_index(x)]
    }
}

/// Row-major training matrix.
#[derive(Debug, Clone)]
pub struct Matrix<'a, T> {
    data: &'a [Vec<T>],
    n_features: usize,
}

impl<'a, T: Scalar> Matrix<'a, T> {
    pub fn new(rows: &'a [Vec<T>]) -> Result<Self> {
        let n_features = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_features) {
            return Err(Error::invalid("feature rows have unequal lengths"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature matrix contains non-finite values"));
        }
        Ok(Matrix { data: rows, n_features })
    }

    fn get(&self, r: usize, c: usize) -> T {
        self.data[r][c]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BoostedTrees<T> {
    #[serde(rename = "hyperparameters")]
    pub params: BoostParams,
    pub n_features: usize,
    pub base_score: T,
    pub trees: Vec<Tree<T>>,
}

/// Model plus the training MSE after the base score and after every round.
#[derive(Debug, Clone)]
pub struct FitReport<T> {
    pub model: BoostedTrees<T>,
    pub loss_history: Vec<T>,
}

impl<T: Scalar> BoostedTrees<T> {
    /// Unclamped ensemble output: `base + lr * tree_1 + lr * tree_2 + ...`, accumulated in order.
    pub fn predict_raw(&self, x: &[T]) -> Result<T> {
        if x.len() != self.n_features {
            return Err(Error::invalid(format!(
                "expected {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        let lr = T::lit(self.params.learning_rate);
        Ok(self.trees.iter().fold(self.base_score, |acc, t| acc + lr * t.predict(x)))
    }

    /// Total split gain per feature, unnormalized.
    pub fn gain_by_feature(&self) -> Vec<T> {
        let mut g = vec![T::zero(); self.n_features];
        for t in &self.trees {
            for n in &t.nodes {
                g[n.feature] = g[n.feature] + n.gain;
            }
        }
        g
    }
}

struct Grower<'a, T> {
    /// Column-major feature values.
    cols: &'a [Vec<T>],
    residual: &'a [T],
    /// `inv[k] = 1 / k`
    inv: &'a [T],
    features: &'a [usize],
    max_depth: usize,
    min_leaf: usize,
    /// `order[s][start..end]` lists a node's rows sorted by the s-th sampled feature.
    order: Vec<Vec<usize>>,
    goes_left: Vec<bool>,
    scratch: Vec<usize>,
    nodes: Vec<SplitNode<T>>,
    n_leaves: usize,
}

struct BestSplit<T> {
    feature_slot: usize,
    pos: usize,
    threshold: T,
    gain: T,
}

impl<'a, T: Scalar> Grower<'a, T> {
    fn grow(&mut self, start: usize, end: usize, depth: usize) -> Child {
        let m = end - start;
        if depth >= self.max_depth || m < 2 * self.min_leaf {
            return self.leaf();
        }
        let Some(best) = self.best_split(start, end) else {
            return self.leaf();
        };
        let mid = start + best.pos + 1;
        for &r in &self.order[best.feature_slot][start..end] {
            self.goes_left[r] = false;
        }
        for &r in &self.order[best.feature_slot][start..mid] {
            self.goes_left[r] = true;
        }
        // stable partition of every feature's slice around `mid`
        for list in &mut self.order {
            self.scratch.clear();
            let mut w = start;
            for i in start..end {
                let r = list[i];
                if self.goes_left[r] {
                    list[w] = r;
                    w += 1;
                } else {
                    self.scratch.push(r);
                }
            }
            list[w..end].copy_from_slice(&self.scratch);
        }
        let id = self.nodes.len();
        self.nodes.push(SplitNode {
            feature: self.features[best.feature_slot],
            threshold: best.threshold,
            left: Child::Leaf(usize::MAX),
            right: Child::Leaf(usize::MAX),
            gain: best.gain,
        });
        let left = self.grow(start, mid, depth + 1);
        let right = self.grow(mid, end, depth + 1);
        self.nodes[id].left = left;
        self.nodes[id].right = right;
        Child::Node(id)
    }

    fn leaf(&mut self) -> Child {
        self.n_leaves += 1;
        Child::Leaf(self.n_leaves - 1)
    }

    fn best_split(&self, start: usize, end: usize) -> Option<BestSplit<T>> {
        let m = end - start;
        let node_rows = &self.order[0][start..end];
        let total: T = node_rows.iter().map(|&i| self.residual[i]).sum();
        let total_sq: T = node_rows.iter().map(|&i| self.residual[i] * self.residual[i]).sum();
        let parent = total * total * self.inv[m];
        let min_gain = T::epsilon() * T::lit(64.0) * total_sq.max(T::min_positive_value());
        let lo = self.min_leaf.max(1) - 1;
        let hi = m - self.min_leaf.max(1);
        let mut best: Option<BestSplit<T>> = None;
        for (slot, &f) in self.features.iter().enumerate() {
            let rows = &self.order[slot][start..end];
            let col = &self.cols[f];
            let mut left_sum = T::zero();
            for &r in &rows[..lo] {
                left_sum = left_sum + self.residual[r];
            }
            for pos in lo..hi {
                left_sum = left_sum + self.residual[rows[pos]];
                let a = col[rows[pos]];
                let b = col[rows[pos + 1]];
                if !(a < b) {
                    continue;
                }
                let n_left = pos + 1;
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum * self.inv[n_left] + right_sum * right_sum * self.inv[m - n_left] - parent;
                if gain > min_gain && best.as_ref().is_none_or(|bs| gain > bs.gain) {
                    let mut threshold = (a + b) / T::lit(2.0);
                    if !(threshold < b) {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        feature_slot: slot,
                        pos,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

fn sorted_by_feature<T: Scalar>(x: &Matrix<T>, rows: &[usize], f: usize) -> Vec<usize> {
    let mut v = rows.to_vec();
    v.sort_by(|&a, &b| {
        x.get(a, f)
            .partial_cmp(&x.get(b, f))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    v
}

/// Fit a boosted ensemble to `(x, y)`.
pub fn fit<T: Scalar>(rows: &[Vec<T>], y: &[T], params: &BoostParams) -> Result<FitReport<T>> {
    params.validate()?;
    let x = Matrix::new(rows)?;
    let n = rows.len();
    if n == 0 || y.len() != n {
        return Err(Error::invalid(format!(
            "need matching non-empty X ({n} rows) and y ({})",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("targets contain non-finite values"));
    }
    let d = x.n_features;
    let base_score = stats::mean(y);
    let mut pred = vec![base_score; n];
    let mut residual: Vec<T> = y.iter().map(|&v| v - base_score).collect();
    let mut loss = stats::mse(y, &pred);
    let mut loss_history = vec![loss];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let lr = T::lit(params.learning_rate);
    let n_sub = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let d_sub = ((params.colsample * d as f64).round() as usize).clamp(1, d.max(1));
    let y_scale = y.iter().fold(T::one(), |m, v| m.max(v.abs()));
    let negligible = T::epsilon() * T::lit(8.0) * y_scale;
    let mut trees = Vec::with_capacity(params.n_rounds);
    let all_rows: Vec<usize> = (0..n).collect();
    let presorted: Vec<Vec<usize>> = (0..d).map(|f| sorted_by_feature(&x, &all_rows, f)).collect();
    let cols: Vec<Vec<T>> = (0..d).map(|f| (0..n).map(|i| x.get(i, f)).collect()).collect();
    let inv: Vec<T> = (0..=n).map(|k| if k == 0 { T::zero() } else { T::one() / T::from_count(k) }).collect();

    for _ in 0..params.n_rounds {
        let mut sub_rows: Vec<usize> = if n_sub == n {
            all_rows.clone()
        } else {
            sample(&mut rng, n, n_sub).into_vec()
        };
        sub_rows.sort_unstable();
        let mut features: Vec<usize> = if d == 0 {
            Vec::new()
        } else if d_sub == d {
            (0..d).collect()
        } else {
            sample(&mut rng, d, d_sub).into_vec()
        };
        features.sort_unstable();
        // keep the RNG stream position independent of data-dependent branches
        let _: u32 = rng.random();

        // once every residual is below the zeroing cutoff, any tree would be zeroed anyway
        let settled = residual.iter().all(|r| (lr * *r).abs() <= negligible);
        let mut tree = if features.is_empty() || settled {
            Tree {
                nodes: Vec::new(),
                leaves: vec![T::zero()],
            }
        } else {
            let mut in_sub = vec![false; n];
            sub_rows.iter().for_each(|&i| in_sub[i] = true);
            let order: Vec<Vec<usize>> = features
                .iter()
                .map(|&f| presorted[f].iter().copied().filter(|&i| in_sub[i]).collect())
                .collect();
            let mut g = Grower {
                cols: &cols,
                residual: &residual,
                inv: &inv,
                features: &features,
                max_depth: params.max_depth,
                min_leaf: params.min_child_weight,
                order,
                goes_left: vec![false; n],
                scratch: Vec::with_capacity(n),
                nodes: Vec::new(),
                n_leaves: 0,
            };
            g.grow(0, sub_rows.len(), 0);
            Tree {
                nodes: g.nodes,
                leaves: vec![T::zero(); g.n_leaves],
            }
        };

        // leaf value: mean residual over every training row that lands in the leaf
        let leaf_of: Vec<usize> = (0..n).map(|i| tree.leaf_index(&rows[i])).collect();
        let mut sums = vec![T::zero(); tree.leaves.len()];
        let mut counts = vec![0usize; tree.leaves.len()];
        for (i, &l) in leaf_of.iter().enumerate() {
            sums[l] = sums[l] + residual[i];
            counts[l] += 1;
        }
        for l in 0..tree.leaves.len() {
            if counts[l] > 0 {
                let v = sums[l] / T::from_count(counts[l]);
                tree.leaves[l] = if (lr * v).abs() > negligible { v } else { T::zero() };
            }
        }

        let new_pred: Vec<T> = pred
            .iter()
            .zip(&leaf_of)
            .map(|(&p, &l)| p + lr * tree.leaves[l])
            .collect();
        let new_loss = stats::mse(y, &new_pred);
        if new_loss > loss {
            // rounding only; a zero update keeps the loss where it was
            tree.leaves.iter_mut().for_each(|v| *v = T::zero());
        } else {
            pred = new_pred;
            loss = new_loss;
            for i in 0..n {
                residual[i] = y[i] - pred[i];
            }
        }
        loss_history.push(loss);
        trees.push(tree);
    }

    Ok(FitReport {
        model: BoostedTrees {
            params: *params,
            n_features: d,
            base_score,
            trees,
        },
        loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64, ((i * 7) % 11) as f64]).collect();
        let y = x.iter().map(|r| r[0]).collect();
        (x, y)
    }

    #[test]
    fn constant_target_predicts_constant() {
        let (x, _) = toy(40);
        let y = vec![0.7; 40];
        let m = fit(&x, &y, &BoostParams::default()).unwrap().model;
        for r in &x {
            assert!((m.predict_raw(r).unwrap() - 0.7).abs() < 1e-9);
        }
        assert!(m.trees.iter().all(|t| t.nodes.is_empty()));
    }

    #[test]
    fn single_stump_splits_at_midpoint() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![0.0, 0.0, 1.0, 1.0];
        let p = BoostParams {
            n_rounds: 1,
            max_depth: 1,
            learning_rate: 1.0,
            ..Default::default()
        };
        let m = fit(&x, &y, &p).unwrap().model;
        assert_eq!(m.trees[0].nodes[0].threshold, 1.5);
        assert_eq!(m.predict_raw(&[0.5]).unwrap(), 0.0);
        assert_eq!(m.predict_raw(&[2.5]).unwrap(), 1.0);
    }

    #[test]
    fn ties_prefer_lower_feature_and_threshold() {
        // both features separate y identically
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let y = vec![0.0, 0.0, 1.0, 1.0];
        let p = BoostParams {
            n_rounds: 1,
            max_depth: 1,
            ..Default::default()
        };
        let m = fit(&x, &y, &p).unwrap().model;
        assert_eq!(m.trees[0].nodes[0].feature, 0);
    }

    #[test]
    fn min_child_weight_limits_leaves() {
        let (x, y) = toy(20);
        let p = BoostParams {
            n_rounds: 1,
            max_depth: 8,
            min_child_weight: 5,
            ..Default::default()
        };
        let m = fit(&x, &y, &p).unwrap().model;
        let t = &m.trees[0];
        let mut counts = vec![0; t.leaves.len()];
        for r in &x {
            counts[t.leaf_index(r)] += 1;
        }
        assert!(counts.iter().all(|&c| c >= 5), "{counts:?}");
    }

    #[test]
    fn loss_is_monotone_with_subsampling() {
        let (x, y) = toy(60);
        let p = BoostParams {
            n_rounds: 50,
            subsample: 0.6,
            colsample: 0.5,
            learning_rate: 0.3,
            seed: 9,
            ..Default::default()
        };
        let h = fit(&x, &y, &p).unwrap().loss_history;
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit::<f64>(&[], &[], &BoostParams::default()).is_err());
        assert!(fit(&[vec![1.0]], &[f64::NAN], &BoostParams::default()).is_err());
        let bad = BoostParams {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(fit(&[vec![1.0]], &[1.0], &bad).is_err());
        let m = fit(&[vec![1.0], vec![2.0]], &[1.0, 2.0], &BoostParams::default()).unwrap().model;
        assert!(m.predict_raw(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let x: Vec<Vec<f32>> = (0..30).map(|i| vec![i as f32]).collect();
        let y: Vec<f32> = (0..30).map(|i| if i < 15 { 0.0 } else { 1.0 }).collect();
        let r = fit(&x, &y, &BoostParams::default()).unwrap();
        assert!(*r.loss_history.last().unwrap() < 1e-3);
    }
}
