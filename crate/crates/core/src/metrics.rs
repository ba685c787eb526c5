//! Content-level table F1 and the per-iteration evaluation summary.
//!
//! Cells are compared by normalized longest-common-subsequence similarity.
//! Columns are aligned first with an order-preserving DP, then rows with a
//! second DP over cells of the aligned columns. The summed similarity of the
//! aligned cell pairs is the credit behind precision and recall.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Prediction, TableGrid};
use crate::error::{Error, Result};
use crate::io;

/// F1 deltas within this band count as unchanged.
pub const CHANGE_EPS: f64 = 1e-6;

fn normalize(s: &str) -> Vec<char> {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
        .chars()
        .collect()
}

fn lcs_len(a: &[char], b: &[char]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &ca in a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `2 * LCS(a, b) / (|a| + |b|)` after lowercasing and collapsing whitespace; 1 for two empty strings.
pub fn cell_similarity(a: &str, b: &str) -> f64 {
    let (a, b) = (normalize(a), normalize(b));
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * lcs_len(&a, &b) as f64 / (a.len() + b.len()) as f64
}

#[derive(Clone, Copy)]
enum TiePreference {
    SkipFirst,
    SkipSecond,
}

/// Order-preserving partial matching of `0..n` to `0..m` maximizing the summed
/// `sim`; pairs with zero similarity are never emitted.
fn align(n: usize, m: usize, sim: &[Vec<f64>], pref: TiePreference) -> (f64, Vec<(usize, usize)>) {
    let mut dp = vec![vec![0.0f64; m + 1]; n + 1];
    for i in 1..=n {
        for j in 1..=m {
            dp[i][j] = (dp[i - 1][j - 1] + sim[i - 1][j - 1]).max(dp[i - 1][j]).max(dp[i][j - 1]);
        }
    }
    let mut pairs = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        let s = sim[i - 1][j - 1];
        if s > 0.0 && dp[i][j] == dp[i - 1][j - 1] + s {
            pairs.push((i - 1, j - 1));
            i -= 1;
            j -= 1;
            continue;
        }
        let up = dp[i][j] == dp[i - 1][j];
        let left = dp[i][j] == dp[i][j - 1];
        match (up, left, pref) {
            (true, true, TiePreference::SkipFirst) | (true, false, _) => i -= 1,
            (true, true, TiePreference::SkipSecond) | (false, true, _) => j -= 1,
            (false, false, _) => unreachable!("dp cell matches none of its predecessors"),
        }
    }
    pairs.reverse();
    (dp[n][m], pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCredit {
    pub gt: (usize, usize),
    pub pred: (usize, usize),
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GritsScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub credit: f64,
    /// Matched (gt, pred) row indices.
    pub rows: Vec<(usize, usize)>,
    /// Matched (gt, pred) column indices.
    pub cols: Vec<(usize, usize)>,
    pub cells: Vec<CellCredit>,
}

impl GritsScore {
    fn empty_prediction() -> Self {
        GritsScore {
            precision: 1.0,
            recall: 0.0,
            f1: 0.0,
            credit: 0.0,
            rows: Vec::new(),
            cols: Vec::new(),
            cells: Vec::new(),
        }
    }
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn check_grid(g: &TableGrid, which: &str) -> Result<()> {
    g.validate()
        .map_err(|(field, msg)| Error::invalid(format!("{which} grid is malformed: {field}: {msg}")))
}

fn row_alignment(
    sim: &[Vec<f64>],
    gt: &TableGrid,
    pred: &TableGrid,
    cols: &[(usize, usize)],
    pref: TiePreference,
) -> (f64, Vec<(usize, usize)>) {
    let row_sim: Vec<Vec<f64>> = (0..gt.n_rows)
        .map(|r| {
            (0..pred.n_rows)
                .map(|q| cols.iter().map(|&(a, b)| sim[r * gt.n_cols + a][q * pred.n_cols + b]).sum())
                .collect()
        })
        .collect();
    align(gt.n_rows, pred.n_rows, &row_sim, pref)
}

/// Precision, recall and F1 of `pred` against `gt`; `None` is an empty prediction.
pub fn grits_con(gt: &TableGrid, pred: Option<&TableGrid>) -> Result<GritsScore> {
    check_grid(gt, "ground-truth")?;
    let Some(pred) = pred else {
        return Ok(GritsScore::empty_prediction());
    };
    check_grid(pred, "predicted")?;

    // cell similarity indexed by flat gt cell, flat pred cell
    let sim: Vec<Vec<f64>> = gt
        .cells
        .iter()
        .map(|a| pred.cells.iter().map(|b| cell_similarity(&a.text, &b.text)).collect())
        .collect();
    let shared_rows = gt.n_rows.min(pred.n_rows);
    let col_sim: Vec<Vec<f64>> = (0..gt.n_cols)
        .map(|a| {
            (0..pred.n_cols)
                .map(|b| {
                    (0..shared_rows).map(|r| sim[r * gt.n_cols + a][r * pred.n_cols + b]).sum::<f64>()
                        / shared_rows as f64
                })
                .collect()
        })
        .collect();

    // Equal-score column alignments can yield different row credit; both
    // tie-breaking directions are tried so that swapping the grids is symmetric.
    let mut best: Option<(f64, Vec<(usize, usize)>, Vec<(usize, usize)>)> = None;
    for pref in [TiePreference::SkipFirst, TiePreference::SkipSecond] {
        let (_, cols) = align(gt.n_cols, pred.n_cols, &col_sim, pref);
        for row_pref in [TiePreference::SkipFirst, TiePreference::SkipSecond] {
            let (credit, rows) = row_alignment(&sim, gt, pred, &cols, row_pref);
            if best.as_ref().is_none_or(|b| credit > b.0) {
                best = Some((credit, rows, cols.clone()));
            }
        }
    }
    let (_, rows, cols) = best.expect("two alignments evaluated");

    let mut cells = Vec::new();
    for &(r, q) in &rows {
        for &(a, b) in &cols {
            let s = sim[r * gt.n_cols + a][q * pred.n_cols + b];
            if s > 0.0 {
                cells.push(CellCredit {
                    gt: (r, a),
                    pred: (q, b),
                    similarity: s,
                });
            }
        }
    }
    let credit: f64 = cells.iter().map(|c| c.similarity).sum();
    let precision = credit / pred.n_cells() as f64;
    let recall = credit / gt.n_cells() as f64;
    Ok(GritsScore {
        precision,
        recall,
        f1: f1_score(precision, recall),
        credit,
        rows,
        cols,
        cells,
    })
}

/// Percentage of predictions that are empty.
pub fn empty_rate<'a>(preds: impl IntoIterator<Item = &'a Prediction>) -> Result<f64> {
    let (mut n, mut empty) = (0usize, 0usize);
    for p in preds {
        n += 1;
        empty += usize::from(p.is_empty());
    }
    if n == 0 {
        return Err(Error::invalid("empty rate of an empty document set"));
    }
    Ok(100.0 * empty as f64 / n as f64)
}

/// `100 * (#improved - #degraded) / #docs` between two per-document F1 maps.
pub fn net_document_change(before: &BTreeMap<String, f64>, after: &BTreeMap<String, f64>) -> Result<f64> {
    if before.len() != after.len() || before.keys().zip(after.keys()).any(|(a, b)| a != b) {
        return Err(Error::invalid("per-document F1 maps cover different documents"));
    }
    if before.is_empty() {
        return Err(Error::invalid("net document change over an empty document set"));
    }
    let mut net = 0i64;
    for (id, b) in before {
        let d = after[id] - b;
        if d > CHANGE_EPS {
            net += 1;
        } else if d < -CHANGE_EPS {
            net -= 1;
        }
    }
    Ok(100.0 * net as f64 / before.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocMetrics {
    pub doc_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub n_docs: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub empty_rate: f64,
    /// Relative to the baseline iteration; absent for the baseline itself.
    pub net_document_change: Option<f64>,
    #[serde(skip)]
    pub per_doc: Vec<DocMetrics>,
}

impl IterationMetrics {
    pub fn f1_by_doc(&self) -> BTreeMap<String, f64> {
        self.per_doc.iter().map(|d| (d.doc_id.clone(), d.f1)).collect()
    }

    pub fn with_baseline(mut self, baseline: &IterationMetrics) -> Result<Self> {
        self.net_document_change = Some(net_document_change(&baseline.f1_by_doc(), &self.f1_by_doc())?);
        Ok(self)
    }
}

/// Score every document against its prediction; each document needs a ground-truth table
/// and a prediction record.
pub fn evaluate<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    preds: &BTreeMap<String, Prediction>,
) -> Result<IterationMetrics> {
    let docs: Vec<&Document> = docs.into_iter().collect();
    if docs.is_empty() {
        return Err(Error::invalid("no documents to evaluate"));
    }
    let mut per_doc: Vec<DocMetrics> = docs
        .par_iter()
        .map(|d| {
            let gt = d
                .gt_table
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("document {} has no ground-truth table", d.id)))?;
            let p = preds
                .get(&d.id)
                .ok_or_else(|| Error::invalid(format!("no prediction for document {}", d.id)))?;
            let s = grits_con(gt, p.grid())?;
            Ok(DocMetrics {
                doc_id: d.id.clone(),
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                empty: p.is_empty(),
            })
        })
        .collect::<Result<_>>()?;
    per_doc.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let n = per_doc.len() as f64;
    let mean = |f: fn(&DocMetrics) -> f64| per_doc.iter().map(f).sum::<f64>() / n;
    Ok(IterationMetrics {
        n_docs: per_doc.len(),
        mean_precision: mean(|d| d.precision),
        mean_recall: mean(|d| d.recall),
        mean_f1: mean(|d| d.f1),
        empty_rate: 100.0 * per_doc.iter().filter(|d| d.empty).count() as f64 / n,
        net_document_change: None,
        per_doc,
    })
}

pub fn write_per_doc_csv(path: &Path, rows: &[DocMetrics]) -> Result<()> {
    io::write_csv_atomic(path, |w| {
        w.write_record(["doc_id", "precision", "recall", "f1", "empty_flag"])?;
        for d in rows {
            w.write_record([
                d.doc_id.clone(),
                d.precision.to_string(),
                d.recall.to_string(),
                d.f1.to_string(),
                u8::from(d.empty).to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn read_per_doc_csv(path: &Path) -> Result<Vec<DocMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::invalid(format!("{}: bad number in column {i}", path.display())))
        };
        out.push(DocMetrics {
            doc_id: rec.get(0).unwrap_or_default().to_string(),
            precision: num(1)?,
            recall: num(2)?,
            f1: num(3)?,
            empty: rec.get(4) == Some("1"),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Cell;
    use crate::geometry::Rect;

    pub(crate) fn grid(rows: &[&[&str]]) -> TableGrid {
        let n_rows = rows.len();
        let n_cols = rows[0].len();
        let mut cells = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            for (c, t) in row.iter().enumerate() {
                let (x, y) = (c as f64 * 10.0, r as f64 * 10.0);
                cells.push(Cell {
                    text: t.to_string(),
                    bbox: Rect::new(x, y, x + 10.0, y + 10.0),
                    is_header: r == 0,
                });
            }
        }
        TableGrid {
            bbox: Rect::new(0.0, 0.0, n_cols as f64 * 10.0, n_rows as f64 * 10.0),
            n_rows,
            n_cols,
            cells,
        }
    }

    #[test]
    fn similarity_basics() {
        assert_eq!(cell_similarity("", ""), 1.0);
        assert_eq!(cell_similarity("abc", ""), 0.0);
        assert_eq!(cell_similarity("Total  Due", "total due"), 1.0);
        assert!((cell_similarity("abcd", "abxd") - 0.75).abs() < 1e-12);
    }

    #[test]
    fn identical_and_empty() {
        let g = grid(&[&["a", "b"], &["1", "2"]]);
        let s = grits_con(&g, Some(&g)).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let e = grits_con(&g, None).unwrap();
        assert_eq!((e.precision, e.recall, e.f1), (1.0, 0.0, 0.0));
    }

    #[test]
    fn missing_column() {
        let gt = grid(&[&["qty", "item", "price"], &["2", "bolt", "3.50"]]);
        let pred = grid(&[&["qty", "item"], &["2", "bolt"]]);
        let s = grits_con(&gt, Some(&pred)).unwrap();
        assert!((s.credit - 4.0).abs() < 1e-12);
        assert_eq!(s.precision, 1.0);
        assert!((s.recall - 4.0 / 6.0).abs() < 1e-12);
        assert!((s.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rates_and_changes() {
        let preds = vec![Prediction::empty("a"), Prediction::empty("b")];
        assert_eq!(empty_rate(&preds).unwrap(), 100.0);
        assert!(empty_rate(std::iter::empty()).is_err());
        let before: BTreeMap<String, f64> = [("a".into(), 0.2), ("b".into(), 0.5)].into();
        let after: BTreeMap<String, f64> = [("a".into(), 0.3), ("b".into(), 0.6)].into();
        assert_eq!(net_document_change(&before, &after).unwrap(), 100.0);
        assert_eq!(net_document_change(&before, &before).unwrap(), 0.0);
        let tiny: BTreeMap<String, f64> = [("a".into(), 0.2 + 1e-7), ("b".into(), 0.4)].into();
        assert_eq!(net_document_change(&before, &tiny).unwrap(), -50.0);
        let other: BTreeMap<String, f64> = [("a".into(), 0.2), ("c".into(), 0.5)].into();
        assert!(net_document_change(&before, &other).is_err());
    }

    #[test]
    fn malformed_grid_rejected() {
        let mut g = grid(&[&["a", "b"]]);
        g.n_cols = 3;
        assert!(grits_con(&g, None).is_err());
    }
}
