//! Documents, table grids, predictions, corpus loading and splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::io;

/// Absolute slack (pixels) for geometric containment checks.
const GEOM_SLACK: f64 = 1e-6;
/// Tolerance on the TE = TD x TSR product law.
pub const CONF_PRODUCT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrToken {
    pub text: String,
    pub bbox: Rect,
    /// Marks a whitespace artifact of the OCR engine; only these may carry empty text.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub whitespace: bool,
}

impl OcrToken {
    pub fn new(text: impl Into<String>, bbox: Rect) -> Self {
        OcrToken {
            text: text.into(),
            bbox,
            whitespace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageSize {
    pub width: f64,
    pub height: f64,
}

impl PageSize {
    pub fn rect(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Upright,
    Rotated,
}

/// Optional per-document answers used by the built-in stub adapters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdapterHints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_table_found: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vlm_answer: Option<String>,
    /// Makes every stub adapter fail on this document.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fail: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub page: PageSize,
    pub tokens: Vec<OcrToken>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_table: Option<TableGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<Orientation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter_hints: Option<AdapterHints>,
}

impl Document {
    /// Checks every document invariant, naming the offending field on failure.
    pub fn validate(&self) -> Result<()> {
        let id = &self.id;
        if id.is_empty() {
            return Err(Error::schema("<unnamed>", "id", "must be non-empty"));
        }
        let (w, h) = (self.page.width, self.page.height);
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(Error::schema(id, "page", "width and height must be positive"));
        }
        let page = self.page.rect();
        for (i, t) in self.tokens.iter().enumerate() {
            if !t.bbox.is_well_formed() {
                return Err(Error::schema(id, format!("tokens[{i}].bbox"), "malformed rectangle"));
            }
            if !page.contains_rect(&t.bbox, GEOM_SLACK) {
                return Err(Error::schema(
                    id,
                    format!("tokens[{i}].bbox"),
                    "outside page bounds",
                ));
            }
            if t.text.is_empty() && !t.whitespace {
                return Err(Error::schema(
                    id,
                    format!("tokens[{i}].text"),
                    "empty text on a token not flagged as whitespace",
                ));
            }
        }
        if let Some(gt) = &self.gt_table {
            gt.validate().map_err(|(field, msg)| {
                Error::schema(id, format!("gt_table.{field}"), msg)
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub text: String,
    pub bbox: Rect,
    #[serde(default)]
    pub is_header: bool,
}

/// Single table without spanning cells, cells stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableGrid {
    pub bbox: Rect,
    pub n_rows: usize,
    pub n_cols: usize,
    pub cells: Vec<Cell>,
}

impl TableGrid {
    pub fn cell(&self, r: usize, c: usize) -> &Cell {
        &self.cells[r * self.n_cols + c]
    }

    pub fn cell_mut(&mut self, r: usize, c: usize) -> &mut Cell {
        &mut self.cells[r * self.n_cols + c]
    }

    pub fn row(&self, r: usize) -> &[Cell] {
        &self.cells[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = &Cell> + '_ {
        (0..self.n_rows).map(move |r| self.cell(r, c))
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    /// Vertical extent `(top, bottom)` of row `r`.
    pub fn row_band(&self, r: usize) -> (f64, f64) {
        self.row(r).iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| {
            (a.min(c.bbox.y0), b.max(c.bbox.y1))
        })
    }

    /// Horizontal extent `(left, right)` of column `c`.
    pub fn col_band(&self, c: usize) -> (f64, f64) {
        self.column(c).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), cell| {
            (a.min(cell.bbox.x0), b.max(cell.bbox.x1))
        })
    }

    /// Bounding rectangle of all cells.
    pub fn cells_bounds(&self) -> Option<Rect> {
        Rect::bounding(self.cells.iter().map(|c| c.bbox))
    }

    /// Returns `(field, message)` for the first violated invariant.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let err = |f: &str, m: &str| Err((f.to_string(), m.to_string()));
        if !self.bbox.is_well_formed() {
            return err("bbox", "malformed rectangle");
        }
        if self.n_rows == 0 || self.n_cols == 0 {
            return err("n_rows", "grid must have at least one row and one column");
        }
        if self.cells.len() != self.n_rows * self.n_cols {
            return Err((
                "cells".into(),
                format!(
                    "expected {} cells for {}x{}, found {}",
                    self.n_rows * self.n_cols,
                    self.n_rows,
                    self.n_cols,
                    self.cells.len()
                ),
            ));
        }
        let slack = GEOM_SLACK * (1.0 + self.bbox.width().max(self.bbox.height()));
        for (i, c) in self.cells.iter().enumerate() {
            if !c.bbox.is_well_formed() {
                return Err((format!("cells[{i}].bbox"), "malformed rectangle".into()));
            }
            if !self.bbox.contains_rect(&c.bbox, slack) {
                return Err((format!("cells[{i}].bbox"), "outside table bbox".into()));
            }
        }
        for r in 1..self.n_rows {
            if self.row_band(r).0 + slack < self.row_band(r - 1).0 {
                return Err((format!("cells[row {r}]"), "row bands not ordered in y".into()));
            }
        }
        for c in 1..self.n_cols {
            if self.col_band(c).0 + slack < self.col_band(c - 1).0 {
                return Err((format!("cells[col {c}]"), "column bands not ordered in x".into()));
            }
        }
        Ok(())
    }
}

/// Product of detection and structure confidences.
pub fn conf_te(conf_td: f64, conf_tsr: f64) -> Result<f64> {
    for (name, v) in [("conf_td", conf_td), ("conf_tsr", conf_tsr)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
        }
    }
    Ok(conf_td * conf_tsr)
}

/// One extracted table with its pipeline confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedTable {
    pub grid: TableGrid,
    pub conf_td: f64,
    pub conf_tsr: f64,
    pub conf_te: f64,
}

impl ExtractedTable {
    pub fn new(grid: TableGrid, conf_td: f64, conf_tsr: f64) -> Result<Self> {
        let conf_te = conf_te(conf_td, conf_tsr)?;
        Ok(ExtractedTable {
            grid,
            conf_td,
            conf_tsr,
            conf_te,
        })
    }

    pub fn confidences(&self) -> [f64; 3] {
        [self.conf_td, self.conf_tsr, self.conf_te]
    }
}

/// Extractor output for one document; `extracted` is `None` when no table was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PredictionRecord", into = "PredictionRecord")]
pub struct Prediction {
    pub doc_id: String,
    pub extracted: Option<ExtractedTable>,
}

impl Prediction {
    pub fn empty(doc_id: impl Into<String>) -> Self {
        Prediction {
            doc_id: doc_id.into(),
            extracted: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.extracted.is_none()
    }

    pub fn grid(&self) -> Option<&TableGrid> {
        self.extracted.as_ref().map(|e| &e.grid)
    }

    /// TE confidence, zero for empty predictions.
    pub fn conf_te(&self) -> f64 {
        self.extracted.as_ref().map_or(0.0, |e| e.conf_te)
    }
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    doc_id: String,
    table: Option<TableGrid>,
    #[serde(default)]
    conf_td: f64,
    #[serde(default)]
    conf_tsr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conf_te: Option<f64>,
}

impl TryFrom<PredictionRecord> for Prediction {
    type Error = Error;

    fn try_from(r: PredictionRecord) -> Result<Self> {
        let extracted = match r.table {
            None => None,
            Some(grid) => {
                grid.validate().map_err(|(f, m)| {
                    Error::schema(&r.doc_id, format!("table.{f}"), m)
                })?;
                let e = ExtractedTable::new(grid, r.conf_td, r.conf_tsr)
                    .map_err(|err| Error::schema(&r.doc_id, "conf", err.to_string()))?;
                if let Some(te) = r.conf_te {
                    if (te - e.conf_te).abs() > CONF_PRODUCT_TOL {
                        return Err(Error::schema(
                            &r.doc_id,
                            "conf_te",
                            format!("{te} != conf_td * conf_tsr = {}", e.conf_te),
                        ));
                    }
                }
                Some(e)
            }
        };
        Ok(Prediction {
            doc_id: r.doc_id,
            extracted,
        })
    }
}

impl From<Prediction> for PredictionRecord {
    fn from(p: Prediction) -> Self {
        match p.extracted {
            None => PredictionRecord {
                doc_id: p.doc_id,
                table: None,
                conf_td: 0.0,
                conf_tsr: 0.0,
                conf_te: Some(0.0),
            },
            Some(e) => PredictionRecord {
                doc_id: p.doc_id,
                table: Some(e.grid),
                conf_td: e.conf_td,
                conf_tsr: e.conf_tsr,
                conf_te: Some(e.conf_te),
            },
        }
    }
}

/// Validated documents, ordered by id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    index: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn new(mut docs: Vec<Document>) -> Result<Self> {
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = BTreeMap::new();
        for (i, d) in docs.iter().enumerate() {
            d.validate()?;
            if index.insert(d.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(d.id.clone()));
            }
        }
        Ok(Corpus { docs, index })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.docs[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.docs.iter().map(|d| d.id.as_str())
    }

    /// Documents whose ids are in `ids`, in corpus order.
    pub fn subset<'a>(&'a self, ids: &'a BTreeSet<String>) -> impl Iterator<Item = &'a Document> {
        self.docs.iter().filter(move |d| ids.contains(&d.id))
    }

    pub fn into_docs(self) -> Vec<Document> {
        self.docs
    }
}

/// Load every `*.json` document under `path`.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let files = io::json_files(path)?;
    if files.is_empty() {
        log::warn!("corpus directory {} contains no documents", path.display());
    }
    let docs = files
        .par_iter()
        .map(|f| io::read_json::<Document>(f))
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(docs)
}

/// Write each document as `<id>.json` under `dir`.
pub fn write_corpus(dir: &Path, docs: &[Document]) -> Result<()> {
    docs.par_iter()
        .try_for_each(|d| io::write_json_atomic(&dir.join(format!("{}.json", d.id)), d))
}

pub fn load_predictions(path: &Path) -> Result<BTreeMap<String, Prediction>> {
    let files = io::json_files(path)?;
    let preds = files
        .par_iter()
        .map(|f| io::read_json::<Prediction>(f))
        .collect::<Result<Vec<_>>>()?;
    let mut out = BTreeMap::new();
    for p in preds {
        let id = p.doc_id.clone();
        if out.insert(id.clone(), p).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(out)
}

pub fn write_predictions<'a>(
    dir: &Path,
    preds: impl IntoIterator<Item = &'a Prediction>,
) -> Result<()> {
    let preds: Vec<&Prediction> = preds.into_iter().collect();
    preds
        .par_iter()
        .try_for_each(|p| io::write_json_atomic(&dir.join(format!("{}.json", p.doc_id)), p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        SplitRatios { train, val, test }
    }

    fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::invalid(format!("split ratios must be positive: {r:?}")));
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub ratios: SplitRatios,
    pub seed: u64,
}

/// Apportion `n` items by largest remainder; ties favour the earlier bucket.
fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Seeded shuffle followed by a contiguous train/val/test partition.
pub fn split_corpus(corpus: &Corpus, ratios: SplitRatios, seed: u64) -> Result<CorpusSplit> {
    ratios.validate()?;
    if corpus.len() < 3 {
        return Err(Error::invalid(format!(
            "corpus has {} documents, at least 3 are needed to split",
            corpus.len()
        )));
    }
    let mut ids: Vec<String> = corpus.ids().map(str::to_owned).collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let sizes = largest_remainder(ids.len(), &[ratios.train, ratios.val, ratios.test]);
    let mut it = ids.into_iter();
    let train = it.by_ref().take(sizes[0]).collect();
    let val = it.by_ref().take(sizes[1]).collect();
    let test = it.collect();
    Ok(CorpusSplit {
        train,
        val,
        test,
        ratios,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str) -> Document {
        Document {
            id: id.into(),
            page: PageSize {
                width: 100.0,
                height: 100.0,
            },
            tokens: vec![OcrToken::new("a", Rect::new(1.0, 1.0, 5.0, 5.0))],
            gt_table: None,
            orientation: None,
            adapter_hints: None,
        }
    }

    fn corpus(n: usize) -> Corpus {
        Corpus::new((0..n).map(|i| doc(&format!("d{i:03}"))).collect()).unwrap()
    }

    #[test]
    fn conf_te_examples() {
        assert!((conf_te(0.8, 0.5).unwrap() - 0.40).abs() < 1e-12);
        assert_eq!(conf_te(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(conf_te(0.0, 0.9).unwrap(), 0.0);
        assert!(conf_te(1.1, 0.5).is_err());
        assert!(conf_te(0.5, -0.1).is_err());
    }

    #[test]
    fn split_sizes_70_15_15() {
        let s = split_corpus(&corpus(100), SplitRatios::default(), 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
    }

    #[test]
    fn split_rejects_bad_ratios_and_tiny_corpora() {
        assert!(split_corpus(&corpus(10), SplitRatios::new(0.5, 0.5, 0.5), 1).is_err());
        assert!(split_corpus(&corpus(10), SplitRatios::new(1.0, 0.0, 0.0), 1).is_err());
        assert!(split_corpus(&corpus(2), SplitRatios::default(), 1).is_err());
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let c = corpus(37);
        let a = split_corpus(&c, SplitRatios::default(), 11).unwrap();
        let b = split_corpus(&c, SplitRatios::default(), 11).unwrap();
        assert_eq!(a, b);
        let all: BTreeSet<String> = a.train.iter().chain(&a.val).chain(&a.test).cloned().collect();
        assert_eq!(all.len(), 37);
        assert_eq!(a.train.len() + a.val.len() + a.test.len(), 37);
    }

    #[test]
    fn largest_remainder_sums_exactly() {
        for n in 3..200 {
            let s = largest_remainder(n, &[0.75, 0.15, 0.10]);
            assert_eq!(s.iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn token_outside_page_is_rejected() {
        let mut d = doc("bad");
        d.tokens.push(OcrToken::new("x", Rect::new(90.0, 90.0, 120.0, 95.0)));
        let err = Corpus::new(vec![d]).unwrap_err().to_string();
        assert!(err.contains("bad"), "{err}");
        assert!(err.contains("outside page"), "{err}");
    }

    #[test]
    fn empty_token_needs_whitespace_flag() {
        let mut d = doc("ws");
        d.tokens.push(OcrToken::new("", Rect::new(1.0, 1.0, 2.0, 2.0)));
        assert!(d.validate().is_err());
        d.tokens.last_mut().unwrap().whitespace = true;
        assert!(d.validate().is_ok());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        assert!(matches!(
            Corpus::new(vec![doc("a"), doc("a")]),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn prediction_json_checks_product_law() {
        let json = r#"{"doc_id":"d","table":{"bbox":[0,0,10,10],"n_rows":1,"n_cols":1,
            "cells":[{"text":"x","bbox":[0,0,10,10],"is_header":false}]},
            "conf_td":0.8,"conf_tsr":0.5}"#;
        let p: Prediction = serde_json::from_str(json).unwrap();
        assert!((p.conf_te() - 0.4).abs() < 1e-12);
        let bad = json.replace("\"conf_tsr\":0.5", "\"conf_tsr\":0.5,\"conf_te\":0.3");
        assert!(serde_json::from_str::<Prediction>(&bad).is_err());
        let back: Prediction = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
