//! Training-distribution statistics and the 108-wide feature vector.
//!
//! Each base feature expands to `[raw, zscore, deviation_magnitude,
//! outlier_flag, normal_range]`; the three extraction confidences follow.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{BaseFeatures, FEATURE_NAMES, N_BASE_FEATURES};
use crate::scalar::Scalar;
use crate::stats;

pub const N_VARIANTS: usize = 5;
pub const VARIANT_SUFFIXES: [&str; N_VARIANTS] = ["raw", "zscore", "deviation", "outlier", "normal"];
pub const CONFIDENCE_NAMES: [&str; 3] = ["conf_td", "conf_tsr", "conf_te"];
pub const VECTOR_LEN: usize = N_BASE_FEATURES * N_VARIANTS + 3;
/// Floor applied to the standard deviation of constant features.
pub const SIGMA_FLOOR: f64 = 1e-9;

/// Canonical column names of a [`FeatureVector`].
pub fn vector_column_names() -> Vec<String> {
    FEATURE_NAMES
        .iter()
        .flat_map(|f| VARIANT_SUFFIXES.iter().map(move |s| format!("{f}_{s}")))
        .chain(CONFIDENCE_NAMES.iter().map(|s| s.to_string()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureStat<T> {
    pub mean: T,
    pub std: T,
    pub q95: T,
    /// The feature was constant in training and `std` holds the floor.
    pub constant: bool,
}

/// Per-feature mean, sample standard deviation and 0.95 quantile, frozen after fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureStats<T> {
    pub version: String,
    pub n_train: usize,
    /// Canonical feature order; serialized as an object keyed by feature name.
    #[serde(with = "keyed_by_name")]
    pub features: Vec<(String, FeatureStat<T>)>,
}

mod keyed_by_name {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    use super::FeatureStat;
    use crate::features::FEATURE_NAMES;
    use crate::scalar::Scalar;

    pub fn serialize<S: Serializer, T: Scalar>(
        v: &[(String, FeatureStat<T>)],
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_map(v.iter().map(|(k, st)| (k, st)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Scalar>(
        d: D,
    ) -> Result<Vec<(String, FeatureStat<T>)>, D::Error> {
        let mut map: BTreeMap<String, FeatureStat<T>> = BTreeMap::deserialize(d)?;
        let out = FEATURE_NAMES
            .iter()
            .map(|name| {
                map.remove(*name)
                    .map(|st| (name.to_string(), st))
                    .ok_or_else(|| D::Error::custom(format!("missing stats for `{name}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(extra) = map.keys().next() {
            return Err(D::Error::custom(format!("unknown feature `{extra}`")));
        }
        Ok(out)
    }
}

impl<T: Scalar> FeatureStats<T> {
    pub fn stat(&self, i: usize) -> &FeatureStat<T> {
        &self.features[i].1
    }

    fn compute_version(features: &[(String, FeatureStat<T>)], n_train: usize) -> String {
        let mut h = Sha256::new();
        h.update(n_train.to_le_bytes());
        for (name, s) in features {
            h.update(name.as_bytes());
            for v in [s.mean, s.std, s.q95] {
                h.update(v.to_f64_lossy().to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Standardize raw base features with these statistics.
    pub fn zscores(&self, base: &BaseFeatures) -> Vec<T> {
        base.to_array()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let s = self.stat(i);
                (T::lit(x) - s.mean) / s.std
            })
            .collect()
    }

}

/// Fit statistics column-wise over a training matrix of base features.
pub fn fit_stats<T: Scalar>(rows: &[BaseFeatures]) -> Result<FeatureStats<T>> {
    if rows.len() < 2 {
        return Err(Error::invalid(format!(
            "fit_stats needs at least 2 rows, got {}",
            rows.len()
        )));
    }
    let matrix: Vec<[f64; N_BASE_FEATURES]> = rows.iter().map(BaseFeatures::to_array).collect();
    let features: Vec<(String, FeatureStat<T>)> = (0..N_BASE_FEATURES)
        .map(|j| {
            let col: Vec<T> = matrix.iter().map(|r| T::lit(r[j])).collect();
            (FEATURE_NAMES[j].to_string(), fit_column(&col))
        })
        .collect();
    Ok(FeatureStats {
        version: FeatureStats::compute_version(&features, rows.len()),
        n_train: rows.len(),
        features,
    })
}

pub fn fit_column<T: Scalar>(col: &[T]) -> FeatureStat<T> {
    let mean = stats::mean(col);
    let std = stats::sample_std(col);
    let floor = T::lit(SIGMA_FLOOR);
    let constant = !(std > floor);
    FeatureStat {
        mean,
        std: if constant { floor } else { std },
        q95: stats::nearest_rank_quantile(col, 0.95).unwrap_or(mean),
        constant,
    }
}

/// The five engineered variants of one raw value.
pub fn variants<T: Scalar>(x: T, s: &FeatureStat<T>) -> [T; N_VARIANTS] {
    let z = (x - s.mean) / s.std;
    let outlier = if x > s.q95 { T::one() } else { T::zero() };
    let normal = if s.mean - s.std <= x && x <= s.mean + s.std {
        T::one()
    } else {
        T::zero()
    };
    [x, z, z.abs(), outlier, normal]
}

/// Fixed-length input of the quality model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureVector<T>(Vec<T>);

impl<T: Scalar> FeatureVector<T> {
    pub fn from_values(values: Vec<T>) -> Result<Self> {
        if values.len() != VECTOR_LEN {
            return Err(Error::invalid(format!(
                "feature vector has {} entries, expected {VECTOR_LEN}",
                values.len()
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

/// Expand base features into the canonical 108-entry vector.
pub fn transform<T: Scalar>(
    base: &BaseFeatures,
    stats: &FeatureStats<T>,
    confs: [f64; 3],
) -> FeatureVector<T> {
    let mut out = Vec::with_capacity(VECTOR_LEN);
    for (i, &x) in base.to_array().iter().enumerate() {
        out.extend(variants(T::lit(x), stats.stat(i)));
    }
    out.extend(confs.iter().map(|&c| T::lit(c)));
    FeatureVector(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col_stats(col: &[f64]) -> FeatureStat<f64> {
        fit_column(col)
    }

    #[test]
    fn fit_examples() {
        let s = col_stats(&[1.0, 2.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert!(!s.constant);
        let c = col_stats(&[5.0; 4]);
        assert_eq!(c.std, SIGMA_FLOOR);
        assert!(c.constant);
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(col_stats(&v).q95, 19.0);
    }

    #[test]
    fn fit_needs_two_rows() {
        assert!(fit_stats::<f64>(&[BaseFeatures::default()]).is_err());
        assert!(fit_stats::<f64>(&[BaseFeatures::default(); 2]).is_ok());
    }

    #[test]
    fn variants_at_mean_and_two_sigma() {
        let s = FeatureStat {
            mean: 1.0,
            std: 0.5,
            q95: 1.8,
            constant: false,
        };
        assert_eq!(variants(1.0, &s), [1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(variants(2.0, &s), [2.0, 2.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn vector_layout() {
        let rows: Vec<BaseFeatures> = (0..5)
            .map(|i| BaseFeatures::from_array(std::array::from_fn(|j| (i * j) as f64)))
            .collect();
        let st = fit_stats::<f64>(&rows).unwrap();
        let fv = transform(&rows[2], &st, [0.9, 0.5, 0.45]);
        assert_eq!(fv.len(), 108);
        assert_eq!(vector_column_names().len(), 108);
        assert_eq!(vector_column_names()[0], "height_variation_raw");
        assert_eq!(vector_column_names()[106], "conf_tsr");
        assert_eq!(&fv.as_slice()[105..], &[0.9, 0.5, 0.45]);
        // f32 path
        let st32 = fit_stats::<f32>(&rows).unwrap();
        assert_eq!(transform(&rows[1], &st32, [1.0; 3]).len(), 108);
    }

    #[test]
    fn json_is_keyed_by_name() {
        let rows: Vec<BaseFeatures> = (0..3).map(|i| BaseFeatures::from_array([i as f64; 21])).collect();
        let st = fit_stats::<f64>(&rows).unwrap();
        let json = serde_json::to_value(&st).unwrap();
        assert_eq!(json["features"]["empty_cells_ratio"]["mean"], 1.0);
        let back: FeatureStats<f64> = serde_json::from_value(json).unwrap();
        assert_eq!(back, st);
    }

    #[test]
    fn version_tracks_content() {
        let a: Vec<BaseFeatures> = (0..3).map(|i| BaseFeatures::from_array([i as f64; 21])).collect();
        let mut b = a.clone();
        b[0].height_variation = 7.0;
        let sa = fit_stats::<f64>(&a).unwrap();
        assert_eq!(sa.version, fit_stats::<f64>(&a).unwrap().version);
        assert_ne!(sa.version, fit_stats::<f64>(&b).unwrap().version);
    }

    proptest! {
        #[test]
        fn zscore_is_odd_around_mean(mu in -10.0f64..10.0, sd in 0.01f64..5.0, d in 0.0f64..20.0) {
            let s = FeatureStat { mean: mu, std: sd, q95: mu + 1.645 * sd, constant: false };
            let hi = variants(mu + d, &s);
            let lo = variants(mu - d, &s);
            prop_assert!((hi[1] + lo[1]).abs() < 1e-9 * (1.0 + hi[1].abs()));
            prop_assert!((hi[2] - lo[2]).abs() < 1e-9 * (1.0 + hi[2].abs()));
        }

        #[test]
        fn outlier_excludes_normal_when_q95_is_wide(mu in -5.0f64..5.0, sd in 0.1f64..3.0, x in -20.0f64..20.0, extra in 0.0f64..2.0) {
            let s = FeatureStat { mean: mu, std: sd, q95: mu + sd + extra + 1e-6, constant: false };
            let v = variants(x, &s);
            if v[3] == 1.0 {
                prop_assert_eq!(v[4], 0.0);
            }
        }

        #[test]
        fn zscores_center_on_training_rows(data in proptest::collection::vec(proptest::array::uniform21(-100.0f64..100.0), 2..40)) {
            let rows: Vec<BaseFeatures> = data.into_iter().map(BaseFeatures::from_array).collect();
            let st = fit_stats::<f64>(&rows).unwrap();
            let n = rows.len();
            for j in 0..N_BASE_FEATURES {
                let m: f64 = rows.iter().map(|r| transform(r, &st, [0.0; 3]).as_slice()[j * 5 + 1]).sum::<f64>() / n as f64;
                if !st.stat(j).constant {
                    prop_assert!(m.abs() < 1e-9 * n as f64, "col {} mean z {}", j, m);
                }
            }
        }
    }
}
