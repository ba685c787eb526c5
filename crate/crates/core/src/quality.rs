//! The quality model: boosted trees over the 108-wide feature vector, fitted by
//! random hyperparameter search with k-fold cross-validated R².

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{self, BoostParams, BoostedTrees};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats;
use crate::transform::{vector_column_names, FeatureVector, VECTOR_LEN};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const MIN_TRAINING_ROWS: usize = 10;
/// Default quality threshold.
pub const DEFAULT_ALPHA: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub n_rounds: (usize, usize),
    pub max_depth: (usize, usize),
    pub learning_rate: (f64, f64),
    pub min_child_weight: (usize, usize),
    pub subsample: (f64, f64),
    pub colsample: (f64, f64),
    pub n_trials: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            n_rounds: (100, 1000),
            max_depth: (3, 12),
            learning_rate: (0.01, 0.3),
            min_child_weight: (1, 7),
            subsample: (0.6, 1.0),
            colsample: (0.6, 1.0),
            n_trials: 100,
            folds: 5,
            seed: 0,
        }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        let int_ok = |(a, b): (usize, usize)| a >= 1 && a <= b;
        let real_ok = |(a, b): (f64, f64), hi: f64| a > 0.0 && a <= b && b <= hi;
        if self.n_trials == 0 || self.folds < 2 {
            return Err(Error::invalid("search needs at least one trial and two folds"));
        }
        if !(int_ok(self.n_rounds)
            && int_ok(self.max_depth)
            && int_ok(self.min_child_weight)
            && real_ok(self.learning_rate, 1.0)
            && real_ok(self.subsample, 1.0)
            && real_ok(self.colsample, 1.0))
        {
            return Err(Error::invalid(format!("invalid search ranges: {self:?}")));
        }
        Ok(())
    }

    /// Hyperparameters of trial `trial`, drawn from the stream `(seed, trial + 1)`.
    pub fn sample(&self, trial: usize) -> BoostParams {
        let mut rng = stream(self.seed, trial as u64 + 1);
        BoostParams {
            n_rounds: rng.random_range(self.n_rounds.0..=self.n_rounds.1),
            max_depth: rng.random_range(self.max_depth.0..=self.max_depth.1),
            learning_rate: rng.random_range(self.learning_rate.0..=self.learning_rate.1),
            min_child_weight: rng.random_range(self.min_child_weight.0..=self.min_child_weight.1),
            subsample: rng.random_range(self.subsample.0..=self.subsample.1),
            colsample: rng.random_range(self.colsample.0..=self.colsample.1),
            seed: rng.random(),
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub best_trial: usize,
    pub cv_r2: f64,
    pub n_trials: usize,
    pub folds: usize,
}

/// Frozen quality model `Q`; outputs are clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct QualityModel<T> {
    pub format_version: u32,
    #[serde(flatten)]
    pub ensemble: BoostedTrees<T>,
    /// Version of the feature statistics the training vectors were built with.
    pub feature_stats_ref: Option<String>,
    pub search: Option<SearchSummary>,
}

impl<T: Scalar> QualityModel<T> {
    pub fn from_ensemble(ensemble: BoostedTrees<T>) -> Self {
        QualityModel {
            format_version: MODEL_FORMAT_VERSION,
            ensemble,
            feature_stats_ref: None,
            search: None,
        }
    }

    pub fn n_features(&self) -> usize {
        self.ensemble.n_features
    }

    pub fn predict_row(&self, x: &[T]) -> Result<T> {
        let raw = self.ensemble.predict_raw(x)?;
        Ok(raw.max(T::zero()).min(T::one()))
    }

    pub fn check_version(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {}",
                self.format_version
            )));
        }
        Ok(())
    }
}

fn check_training_data<T: Scalar>(x: &[Vec<T>], y: &[T]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("{} feature rows but {} targets", x.len(), y.len())));
    }
    if x.len() < MIN_TRAINING_ROWS {
        return Err(Error::invalid(format!(
            "need at least {MIN_TRAINING_ROWS} training rows, got {}",
            x.len()
        )));
    }
    if let Some(v) = y.iter().find(|v| !(v.is_finite() && **v >= T::zero() && **v <= T::one())) {
        return Err(Error::invalid(format!("target {v} is not a finite value in [0, 1]")));
    }
    Ok(())
}

/// Mean held-out R² of `params` over `folds`.
fn cross_validate<T: Scalar>(x: &[Vec<T>], y: &[T], folds: &[Vec<usize>], params: &BoostParams) -> Result<f64> {
    let mut total = 0.0;
    for (f, held) in folds.iter().enumerate() {
        let mut is_held = vec![false; x.len()];
        held.iter().for_each(|&i| is_held[i] = true);
        let (tx, ty): (Vec<Vec<T>>, Vec<T>) = (0..x.len())
            .filter(|&i| !is_held[i])
            .map(|i| (x[i].clone(), y[i]))
            .unzip();
        let fold_params = BoostParams {
            seed: params.seed.wrapping_add(f as u64),
            ..*params
        };
        let model = boost::fit(&tx, &ty, &fold_params)?.model;
        let truth: Vec<T> = held.iter().map(|&i| y[i]).collect();
        let pred = held
            .iter()
            .map(|&i| model.predict_raw(&x[i]))
            .collect::<Result<Vec<T>>>()?;
        total += stats::r2(&truth, &pred).to_f64_lossy();
    }
    Ok(total / folds.len() as f64)
}

/// Shuffled contiguous fold partition of `0..n`.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, 0));
    let mut out = vec![Vec::new(); folds];
    for (pos, i) in idx.into_iter().enumerate() {
        out[pos % folds].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

/// Random search over boosting hyperparameters, then a refit of the best trial on all rows.
pub fn train_quality_model<T: Scalar>(x: &[Vec<T>], y: &[T], search: &SearchConfig) -> Result<QualityModel<T>> {
    search.validate()?;
    check_training_data(x, y)?;
    let folds = fold_indices(x.len(), search.folds.min(x.len()), search.seed);
    let trials: Vec<(usize, BoostParams, f64)> = (0..search.n_trials)
        .into_par_iter()
        .map(|t| {
            let p = search.sample(t);
            cross_validate(x, y, &folds, &p).map(|r2| (t, p, r2))
        })
        .collect::<Result<_>>()?;
    let (best_trial, params, cv_r2) = trials
        .into_iter()
        .reduce(|b, c| if c.2 > b.2 || (b.2.is_nan() && !c.2.is_nan()) { c } else { b })
        .expect("at least one trial");
    log::info!("quality search: best trial {best_trial} with mean CV R^2 {cv_r2:.4} ({params:?})");
    let ensemble = boost::fit(x, y, &params)?.model;
    Ok(QualityModel {
        format_version: MODEL_FORMAT_VERSION,
        ensemble,
        feature_stats_ref: None,
        search: Some(SearchSummary {
            best_trial,
            cv_r2,
            n_trials: search.n_trials,
            folds: folds.len(),
        }),
    })
}

/// Predicted F1 of one feature vector, clamped to `[0, 1]`.
pub fn predict_quality<T: Scalar>(model: &QualityModel<T>, fv: &FeatureVector<T>) -> Result<T> {
    if model.n_features() != VECTOR_LEN {
        return Err(Error::invalid(format!(
            "model expects {} features, feature vectors have {VECTOR_LEN}",
            model.n_features()
        )));
    }
    model.predict_row(fv.as_slice())
}

/// Ids whose score is at least `alpha`, in input order.
pub fn quality_filter<T: Scalar>(scored: &[(String, T)], alpha: f64) -> Result<Vec<&str>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let a = T::lit(alpha);
    Ok(scored.iter().filter(|(_, s)| *s >= a).map(|(id, _)| id.as_str()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureImportance<T> {
    pub index: usize,
    pub name: String,
    pub importance: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CorrelationReport<T> {
    /// `None` when either input is constant.
    pub pearson_r: Option<T>,
    pub rmse: T,
    pub n: usize,
    pub importance: Vec<FeatureImportance<T>>,
}

pub fn evaluate_correlation<T: Scalar>(scores: &[T], true_f1: &[T]) -> Result<CorrelationReport<T>> {
    if scores.len() != true_f1.len() || scores.len() < 2 {
        return Err(Error::invalid(format!(
            "need two equal-length series of at least 2 values, got {} and {}",
            scores.len(),
            true_f1.len()
        )));
    }
    let pearson_r = stats::pearson(scores, true_f1);
    if pearson_r.is_none() {
        log::warn!("pearson r undefined: constant scores or targets");
    }
    Ok(CorrelationReport {
        pearson_r,
        rmse: stats::rmse(scores, true_f1),
        n: scores.len(),
        importance: Vec::new(),
    })
}

/// Gain importance normalized to sum 1, descending, ties by feature index.
pub fn feature_importance<T: Scalar>(model: &QualityModel<T>) -> Vec<FeatureImportance<T>> {
    let gains = model.ensemble.gain_by_feature();
    let total: T = gains.iter().copied().sum();
    let names = if gains.len() == VECTOR_LEN {
        vector_column_names()
    } else {
        (0..gains.len()).map(|i| format!("f{i}")).collect()
    };
    let mut out: Vec<FeatureImportance<T>> = gains
        .into_iter()
        .zip(names)
        .enumerate()
        .map(|(index, (g, name))| FeatureImportance {
            index,
            name,
            importance: if total > T::zero() { g / total } else { T::zero() },
        })
        .collect();
    out.sort_by(|a, b| {
        b.importance
            .partial_cmp(&a.importance)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_search(seed: u64) -> SearchConfig {
        SearchConfig {
            n_rounds: (20, 60),
            max_depth: (2, 4),
            n_trials: 4,
            seed,
            ..Default::default()
        }
    }

    fn single_factor(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| rng.random::<f64>()).collect()).collect();
        let y = x.iter().map(|r| r[3]).collect();
        (x, y)
    }

    #[test]
    fn filter_boundary_is_inclusive() {
        let s = vec![("a".to_string(), 0.95), ("b".to_string(), 0.90), ("c".to_string(), 0.89)];
        assert_eq!(quality_filter(&s, 0.9).unwrap(), ["a", "b"]);
        assert_eq!(quality_filter(&s, 0.0).unwrap().len(), 3);
        let p = vec![("p".to_string(), 1.0), ("q".to_string(), 0.999)];
        assert_eq!(quality_filter(&p, 1.0).unwrap(), ["p"]);
        assert!(quality_filter(&s, 1.5).is_err());
    }

    #[test]
    fn clamp_applies_to_raw_output() {
        let mut m = QualityModel::from_ensemble(BoostedTrees {
            params: BoostParams::default(),
            n_features: 1,
            base_score: 1.08,
            trees: Vec::new(),
        });
        assert_eq!(m.predict_row(&[0.0]).unwrap(), 1.0);
        m.ensemble.base_score = -0.2;
        assert_eq!(m.predict_row(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn correlation_extremes() {
        let f1 = [0.1f64, 0.5, 0.9, 0.3];
        let r = evaluate_correlation(&f1, &f1).unwrap();
        assert!((r.pearson_r.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.rmse, 0.0);
        let inv: Vec<f64> = f1.iter().map(|v| 1.0 - v).collect();
        assert!((evaluate_correlation(&inv, &f1).unwrap().pearson_r.unwrap() + 1.0).abs() < 1e-12);
        assert!(evaluate_correlation(&[0.5, 0.5], &[0.1, 0.2]).unwrap().pearson_r.is_none());
        assert!(evaluate_correlation(&[0.5], &[0.1]).is_err());
    }

    #[test]
    fn single_factor_importance() {
        let (x, y) = single_factor(80);
        let m = train_quality_model(&x, &y, &quick_search(1)).unwrap();
        let imp = feature_importance(&m);
        assert_eq!(imp[0].index, 3);
        let total: f64 = imp.iter().map(|i| i.importance).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_feature_has_zero_importance() {
        let (mut x, y) = single_factor(60);
        x.iter_mut().for_each(|r| r[0] = 0.25);
        let m = train_quality_model(&x, &y, &quick_search(2)).unwrap();
        let imp = feature_importance(&m);
        assert_eq!(imp.iter().find(|i| i.index == 0).unwrap().importance, 0.0);
    }

    #[test]
    fn constant_target() {
        let (x, _) = single_factor(30);
        let y = vec![0.7; 30];
        let m = train_quality_model(&x, &y, &quick_search(3)).unwrap();
        for r in &x {
            assert!((m.predict_row(r).unwrap() - 0.7).abs() < 1e-9);
        }
        assert!(feature_importance(&m).iter().all(|i| i.importance == 0.0));
    }

    #[test]
    fn seed_determinism_of_serialization() {
        let (x, y) = single_factor(40);
        let a = serde_json::to_string(&train_quality_model(&x, &y, &quick_search(5)).unwrap()).unwrap();
        let b = serde_json::to_string(&train_quality_model(&x, &y, &quick_search(5)).unwrap()).unwrap();
        assert_eq!(a, b);
        let back: QualityModel<f64> = serde_json::from_str(&a).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), a);
    }

    #[test]
    fn rejects_bad_training_data() {
        let (x, y) = single_factor(9);
        assert!(train_quality_model(&x, &y, &quick_search(0)).is_err());
        let (x, mut y) = single_factor(20);
        y[0] = 1.5;
        assert!(train_quality_model(&x, &y, &quick_search(0)).is_err());
        y[0] = f64::NAN;
        assert!(train_quality_model(&x, &y, &quick_search(0)).is_err());
    }

    #[test]
    fn predict_quality_checks_width() {
        let m = QualityModel::from_ensemble(BoostedTrees {
            params: BoostParams::default(),
            n_features: 3,
            base_score: 0.5,
            trees: Vec::new(),
        });
        let fv = FeatureVector::from_values(vec![0.0; VECTOR_LEN]).unwrap();
        assert!(predict_quality(&m, &fv).is_err());
    }

    #[test]
    fn folds_partition_rows() {
        let f = fold_indices(23, 5, 4);
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(f.iter().all(|g| g.len() == 4 || g.len() == 5));
    }
}
