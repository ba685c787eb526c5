//! CSV tables exchanged between subcommands.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use tabqual::features::{BaseFeatures, FEATURE_NAMES, N_BASE_FEATURES};
use tabqual::io;
use tabqual::transform::{FeatureVector, CONFIDENCE_NAMES, VECTOR_LEN};

pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let headers: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_owned).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .with_context(|| format!("reading {}", path.display()))?;
        Ok(Table { headers, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn require(&self, name: &str, path: &Path) -> Result<usize> {
        self.column(name)
            .with_context(|| format!("{}: missing column `{name}`", path.display()))
    }
}

pub fn parse_f64(s: &str, what: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().with_context(|| format!("{what}: not a number: {s:?}"))?;
    if !v.is_finite() {
        bail!("{what}: non-finite value {s:?}");
    }
    Ok(v)
}

/// Base features plus the three confidences of one prediction.
pub struct FeatureRow {
    pub doc_id: String,
    pub base: BaseFeatures,
    pub confs: [f64; 3],
}

pub fn feature_headers() -> Vec<String> {
    std::iter::once("doc_id")
        .chain(FEATURE_NAMES)
        .chain(CONFIDENCE_NAMES)
        .map(str::to_owned)
        .collect()
}

pub fn write_features(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    io::write_csv_atomic(path, |w| {
        w.write_record(feature_headers())?;
        for r in rows {
            let mut rec = vec![r.doc_id.clone()];
            rec.extend(r.base.to_array().iter().map(f64::to_string));
            rec.extend(r.confs.iter().map(f64::to_string));
            w.write_record(rec)?;
        }
        Ok(())
    })?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRow>> {
    let t = Table::read(path)?;
    if t.headers != feature_headers() {
        bail!(
            "{}: expected columns doc_id, the {N_BASE_FEATURES} base features and {} in canonical order",
            path.display(),
            CONFIDENCE_NAMES.join(", ")
        );
    }
    t.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let what = format!("{} row {}", path.display(), i + 1);
            let mut vals = [0.0; N_BASE_FEATURES];
            for (k, v) in vals.iter_mut().enumerate() {
                *v = parse_f64(&row[1 + k], &what)?;
            }
            let c = |k: usize| parse_f64(&row[1 + N_BASE_FEATURES + k], &what);
            Ok(FeatureRow {
                doc_id: row[0].clone(),
                base: BaseFeatures::from_array(vals),
                confs: [c(0)?, c(1)?, c(2)?],
            })
        })
        .collect()
}

pub fn write_vectors(path: &Path, rows: &[(String, FeatureVector<f64>)]) -> Result<()> {
    io::write_csv_atomic(path, |w| {
        let mut head = vec!["doc_id".to_owned()];
        head.extend(tabqual::transform::vector_column_names());
        w.write_record(head)?;
        for (id, v) in rows {
            let mut rec = vec![id.clone()];
            rec.extend(v.as_slice().iter().map(f64::to_string));
            w.write_record(rec)?;
        }
        Ok(())
    })?;
    Ok(())
}

/// Feature vectors by row; a leading `doc_id` column is optional (ids default to the row number).
pub fn read_vectors(path: &Path) -> Result<Vec<(String, FeatureVector<f64>)>> {
    let t = Table::read(path)?;
    let offset = usize::from(t.headers.first().is_some_and(|h| h == "doc_id"));
    if t.headers.len() - offset != VECTOR_LEN {
        bail!(
            "{}: expected {VECTOR_LEN} feature columns, found {}",
            path.display(),
            t.headers.len() - offset
        );
    }
    t.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let what = format!("{} row {}", path.display(), i + 1);
            let vals = row[offset..].iter().map(|v| parse_f64(v, &what)).collect::<Result<Vec<_>>>()?;
            let id = if offset == 1 { row[0].clone() } else { i.to_string() };
            Ok((id, FeatureVector::from_values(vals)?))
        })
        .collect()
}

/// `doc_id -> value` from the named column, or the first of `names` present.
pub fn read_keyed(path: &Path, names: &[&str]) -> Result<BTreeMap<String, f64>> {
    let t = Table::read(path)?;
    let id = t.require("doc_id", path)?;
    let col = names
        .iter()
        .find_map(|n| t.column(n))
        .with_context(|| format!("{}: needs one of the columns {}", path.display(), names.join(", ")))?;
    let mut out = BTreeMap::new();
    for (i, row) in t.rows.iter().enumerate() {
        let v = parse_f64(&row[col], &format!("{} row {}", path.display(), i + 1))?;
        if out.insert(row[id].clone(), v).is_some() {
            bail!("{}: duplicate doc_id {}", path.display(), row[id]);
        }
    }
    Ok(out)
}

pub fn write_ids(path: &Path, ids: &[&str]) -> tabqual::Result<()> {
    let mut text = String::new();
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    io::write_atomic(path, text.as_bytes())
}
