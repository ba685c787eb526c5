//! Synthetic invoice-like pages with ground-truth tables, corruption operators
//! that turn a ground-truth grid into a degraded prediction, and a stub
//! extractor whose error rate falls as its training set grows.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{AdapterHints, Cell, Document, ExtractedTable, OcrToken, PageSize, Prediction, TableGrid};
use crate::error::{Error, Result};
use crate::features::content::ContentType;
use crate::geometry::Rect;
use crate::metrics::grits_con;

const MARGIN: f64 = 36.0;
const CHAR_W: f64 = 5.0;
const PAD: f64 = 6.0;
const MIN_COL_W: f64 = 30.0;
const LINE_H: f64 = 14.0;
/// Character written over garbled positions; never produced by the generator.
pub const GARBLE_CHAR: char = '\u{fffd}';

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Stable 64-bit key of a string.
pub fn stable_hash(s: &str) -> u64 {
    let d = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderPool {
    pub numeric: Vec<String>,
    pub date: Vec<String>,
    pub amount: Vec<String>,
    pub text: Vec<String>,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for HeaderPool {
    fn default() -> Self {
        HeaderPool {
            numeric: strings(&["Qty", "Quantity", "Units", "Pcs"]),
            date: strings(&["Date", "Delivery Date", "Ship Date"]),
            amount: strings(&["Price", "Unit Price", "Amount", "Total", "Net Amount"]),
            text: strings(&["Description", "Item", "Product", "Article"]),
        }
    }
}

impl HeaderPool {
    fn for_kind(&self, k: ContentType) -> &[String] {
        match k {
            ContentType::Numeric => &self.numeric,
            ContentType::DateLike => &self.date,
            ContentType::AmountLike => &self.amount,
            _ => &self.text,
        }
    }
}

const ITEM_WORDS: [&str; 16] = [
    "bolt", "washer", "steel", "bracket", "cable", "panel", "service", "labor", "filter", "valve", "pump", "hose",
    "widget", "gear", "sensor", "module",
];
const DISTRACTOR_WORDS: [&str; 16] = [
    "ACME", "Corp", "Invoice", "No.", "Customer", "Street", "City", "Phone", "Page", "Thank", "you", "Terms", "Net",
    "30", "Ref", "Dept",
];
const KINDS: [ContentType; 4] = [
    ContentType::Numeric,
    ContentType::DateLike,
    ContentType::AmountLike,
    ContentType::Text,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_docs: usize,
    /// Body rows, excluding the header row.
    pub rows: (usize, usize),
    pub cols: (usize, usize),
    /// Relative weights of numeric, date, amount and text columns.
    pub type_mix: [f64; 4],
    pub header_pool: HeaderPool,
    /// Lines of off-table text.
    pub distractor_lines: (usize, usize),
    /// Probability that a text-column body cell is empty.
    pub empty_cell_rate: f64,
    pub page: PageSize,
    pub id_prefix: String,
    /// Attach answers for the stub curation adapters.
    pub adapter_hints: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_docs: 50,
            rows: (3, 12),
            cols: (2, 6),
            type_mix: [0.3, 0.15, 0.25, 0.3],
            header_pool: HeaderPool::default(),
            distractor_lines: (2, 6),
            empty_cell_rate: 0.05,
            page: PageSize {
                width: 612.0,
                height: 792.0,
            },
            id_prefix: "doc".into(),
            adapter_hints: false,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let (r0, r1) = self.rows;
        let (c0, c1) = self.cols;
        if r0 < 1 || r0 > r1 || c0 < 1 || c0 > c1 || self.distractor_lines.0 > self.distractor_lines.1 {
            return Err(Error::invalid("row, column and distractor ranges must be non-empty"));
        }
        if self.type_mix.iter().any(|w| !(*w >= 0.0)) || self.type_mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("type_mix needs non-negative weights with a positive sum"));
        }
        if KINDS
            .iter()
            .zip(self.type_mix)
            .any(|(k, w)| w > 0.0 && self.header_pool.for_kind(*k).is_empty())
        {
            return Err(Error::invalid("header pool is empty for a column type in use"));
        }
        if !(0.0..=1.0).contains(&self.empty_cell_rate) {
            return Err(Error::invalid("empty_cell_rate outside [0, 1]"));
        }
        let usable_w = self.page.width - 2.0 * MARGIN;
        if c1 as f64 * MIN_COL_W > usable_w {
            return Err(Error::invalid(format!(
                "infeasible geometry: {c1} columns of at least {MIN_COL_W} do not fit a page {} wide",
                self.page.width
            )));
        }
        let needed = MARGIN * 2.0 + LINE_H * self.distractor_lines.1 as f64 + 80.0 + 26.0 * (r1 + 1) as f64;
        if needed > self.page.height {
            return Err(Error::invalid(format!(
                "infeasible geometry: {r1} rows and {} distractor lines do not fit a page {} high",
                self.distractor_lines.1, self.page.height
            )));
        }
        Ok(())
    }
}

fn cell_text(kind: ContentType, rng: &mut ChaCha8Rng, empty_rate: f64) -> String {
    match kind {
        ContentType::Numeric => {
            if rng.random_bool(0.7) {
                rng.random_range(1..500).to_string()
            } else {
                format!("{}.{}", rng.random_range(0..100), rng.random_range(1..10))
            }
        }
        ContentType::DateLike => {
            let (y, m, d) = (rng.random_range(2019..2025), rng.random_range(1..13), rng.random_range(1..29));
            if rng.random_bool(0.5) {
                format!("{y}-{m:02}-{d:02}")
            } else {
                format!("{d:02}/{m:02}/{y}")
            }
        }
        ContentType::AmountLike => {
            let v = format!("{}.{:02}", rng.random_range(1..2000), rng.random_range(0..100));
            match rng.random_range(0..3) {
                0 => format!("${v}"),
                1 => format!("{v} EUR"),
                _ => format!("€{v}"),
            }
        }
        _ => {
            if rng.random_bool(empty_rate) {
                return String::new();
            }
            let n = rng.random_range(1..=2);
            (0..n)
                .map(|_| ITEM_WORDS[rng.random_range(0..ITEM_WORDS.len())])
                .collect::<Vec<_>>()
                .join(" ")
        }
    }
}

fn text_width(text: &str, cw: f64) -> f64 {
    text.chars().count() as f64 * cw
}

/// Tokens for `text` placed on one line inside `cell`.
fn layout_text(text: &str, cell: Rect, right_aligned: bool, cw: f64, th: f64) -> Vec<OcrToken> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() {
        return Vec::new();
    }
    let total = text_width(&words.join(" "), cw);
    let mut x = if right_aligned { cell.x1 - PAD * cw / CHAR_W - total } else { cell.x0 + PAD * cw / CHAR_W };
    let yc = (cell.y0 + cell.y1) / 2.0;
    words
        .iter()
        .map(|w| {
            let wdt = text_width(w, cw);
            let t = OcrToken::new(*w, Rect::new(x, yc - th / 2.0, x + wdt, yc + th / 2.0));
            x += wdt + cw;
            t
        })
        .collect()
}

fn generate_document(spec: &SynthSpec, index: usize) -> Result<Document> {
    let mut rng = stream(spec.seed, index as u64);
    let n_cols = rng.random_range(spec.cols.0..=spec.cols.1);
    let n_body = rng.random_range(spec.rows.0..=spec.rows.1);
    let mix = WeightedIndex::new(spec.type_mix).map_err(|e| Error::invalid(format!("type_mix: {e}")))?;
    let kinds: Vec<ContentType> = (0..n_cols).map(|_| KINDS[mix.sample(&mut rng)]).collect();

    let mut texts: Vec<Vec<String>> = vec![kinds
        .iter()
        .map(|&k| {
            let pool = spec.header_pool.for_kind(k);
            pool[rng.random_range(0..pool.len())].clone()
        })
        .collect()];
    for _ in 0..n_body {
        texts.push(kinds.iter().map(|&k| cell_text(k, &mut rng, spec.empty_cell_rate)).collect());
    }

    let usable_w = spec.page.width - 2.0 * MARGIN;
    let mut widths: Vec<f64> = (0..n_cols)
        .map(|c| {
            let widest = texts.iter().map(|row| text_width(&row[c], CHAR_W)).fold(0.0, f64::max);
            (widest + 2.0 * PAD).max(MIN_COL_W)
        })
        .collect();
    let mut cw = CHAR_W;
    let total_w: f64 = widths.iter().sum();
    if total_w > usable_w {
        let s = usable_w / total_w;
        widths.iter_mut().for_each(|w| *w *= s);
        cw *= s;
    }
    let table_w: f64 = widths.iter().sum();

    let row_h: f64 = rng.random_range(16.0..22.0);
    let header_h = row_h + 4.0;
    let th = (row_h - 6.0).min(9.0);
    let n_top = rng.random_range(spec.distractor_lines.0..=spec.distractor_lines.1);
    let n_bottom = n_top / 2;
    let n_top = n_top - n_bottom;
    let x0 = MARGIN + rng.random_range(0.0..=(usable_w - table_w).max(0.0));
    let y0 = MARGIN + LINE_H * n_top as f64 + rng.random_range(20.0..50.0);

    let mut tokens = Vec::new();
    let mut cells = Vec::with_capacity((n_body + 1) * n_cols);
    let mut y = y0;
    for (r, row) in texts.iter().enumerate() {
        let h = if r == 0 { header_h } else { row_h };
        let mut x = x0;
        for (c, text) in row.iter().enumerate() {
            let bbox = Rect::new(x, y, x + widths[c], y + h);
            let right = r > 0 && matches!(kinds[c], ContentType::Numeric | ContentType::AmountLike);
            tokens.extend(layout_text(text, bbox, right, cw, th));
            cells.push(Cell {
                text: text.clone(),
                bbox,
                is_header: r == 0,
            });
            x += widths[c];
        }
        y += h;
    }
    let table = Rect::new(x0, y0, x0 + table_w, y);

    let distractor_line = |rng: &mut ChaCha8Rng, ly: f64| -> Vec<OcrToken> {
        let n = rng.random_range(1..=4);
        let words: Vec<&str> = (0..n).map(|_| DISTRACTOR_WORDS[rng.random_range(0..DISTRACTOR_WORDS.len())]).collect();
        let line = words.join(" ");
        let w = text_width(&line, CHAR_W);
        let lx = MARGIN + rng.random_range(0.0..=(usable_w - w).max(0.0));
        layout_text(&line, Rect::new(lx - PAD, ly, lx + w + PAD, ly + LINE_H), false, CHAR_W, 9.0)
    };
    for i in 0..n_top {
        tokens.extend(distractor_line(&mut rng, MARGIN + LINE_H * i as f64));
    }
    for i in 0..n_bottom {
        tokens.extend(distractor_line(&mut rng, table.y1 + 30.0 + LINE_H * i as f64));
    }

    let adapter_hints = spec.adapter_hints.then(|| {
        if rng.random_bool(0.7) {
            AdapterHints {
                primary_table_found: Some(true),
                ..Default::default()
            }
        } else {
            let conf: f64 = rng.random_range(0.3..1.0);
            AdapterHints {
                primary_table_found: Some(false),
                fallback_confidence: Some(conf),
                vlm_answer: Some(if conf > 0.6 { "True" } else { "False" }.into()),
                fail: false,
            }
        }
    });

    let doc = Document {
        id: format!("{}_{index:05}", spec.id_prefix),
        page: spec.page,
        tokens,
        gt_table: Some(TableGrid {
            bbox: table,
            n_rows: n_body + 1,
            n_cols,
            cells,
        }),
        orientation: None,
        adapter_hints,
    };
    doc.validate()?;
    Ok(doc)
}

/// Deterministic documents with ground-truth tables; document `i` draws from its own seeded stream.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<Document>> {
    spec.validate()?;
    (0..spec.n_docs).into_par_iter().map(|i| generate_document(spec, i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    DropColumn,
    DropRow,
    MergeRows,
    SplitRow,
    ShiftTableBbox,
    BlankCells,
    GarbleText,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 7] = [
        CorruptionKind::DropColumn,
        CorruptionKind::DropRow,
        CorruptionKind::MergeRows,
        CorruptionKind::SplitRow,
        CorruptionKind::ShiftTableBbox,
        CorruptionKind::BlankCells,
        CorruptionKind::GarbleText,
    ];

    pub fn feasible(self, grid: &TableGrid) -> bool {
        match self {
            CorruptionKind::DropColumn => grid.n_cols >= 2,
            CorruptionKind::DropRow | CorruptionKind::MergeRows => grid.n_rows >= 2,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    pub kind: CorruptionKind,
    pub severity: f64,
}

/// Number of items out of `max` affected at `severity`: `ceil(severity * max)`.
fn amount(severity: f64, max: usize) -> usize {
    ((severity * max as f64).ceil() as usize).min(max)
}

fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn rebuild(rows: Vec<Vec<Cell>>) -> TableGrid {
    let n_rows = rows.len();
    let n_cols = rows[0].len();
    let cells: Vec<Cell> = rows.into_iter().flatten().collect();
    let bbox = Rect::bounding(cells.iter().map(|c| c.bbox)).expect("grid has cells");
    TableGrid {
        bbox,
        n_rows,
        n_cols,
        cells,
    }
}

fn rows_of(g: &TableGrid) -> Vec<Vec<Cell>> {
    (0..g.n_rows).map(|r| g.row(r).to_vec()).collect()
}

fn join_texts<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    parts.into_iter().filter(|t| !t.trim().is_empty()).collect::<Vec<_>>().join(" ")
}

/// Degrade `gt` deterministically. Random choices depend only on `seed` and the
/// grid shape, so a higher severity affects a superset of what a lower one does.
pub fn corrupt_grid(gt: &TableGrid, corruption: &Corruption, seed: u64) -> Result<TableGrid> {
    let s = corruption.severity;
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::invalid(format!("severity {s} outside [0, 1]")));
    }
    gt.validate()
        .map_err(|(f, m)| Error::invalid(format!("cannot corrupt a malformed grid: {f}: {m}")))?;
    if s == 0.0 {
        return Ok(gt.clone());
    }
    if !corruption.kind.feasible(gt) {
        return Err(Error::invalid(format!(
            "{:?} is infeasible on a {}x{} grid",
            corruption.kind, gt.n_rows, gt.n_cols
        )));
    }
    let mut rng = stream(seed, corruption.kind as u64);
    let (nr, nc) = (gt.n_rows, gt.n_cols);
    let grid = match corruption.kind {
        CorruptionKind::DropColumn => {
            let drop: Vec<usize> = permutation(&mut rng, nc)[..amount(s, nc - 1)].to_vec();
            let rows = rows_of(gt)
                .into_iter()
                .map(|row| row.into_iter().enumerate().filter(|(c, _)| !drop.contains(c)).map(|(_, x)| x).collect())
                .collect();
            rebuild(rows)
        }
        CorruptionKind::DropRow => {
            let drop: Vec<usize> = permutation(&mut rng, nr)[..amount(s, nr - 1)].to_vec();
            let rows = rows_of(gt).into_iter().enumerate().filter(|(r, _)| !drop.contains(r)).map(|(_, x)| x).collect();
            rebuild(rows)
        }
        CorruptionKind::MergeRows => {
            // boundary b separates rows b and b + 1
            let removed: Vec<usize> = permutation(&mut rng, nr - 1)[..amount(s, nr - 1)].to_vec();
            let mut groups: Vec<Vec<usize>> = vec![vec![0]];
            for r in 1..nr {
                if removed.contains(&(r - 1)) {
                    groups.last_mut().expect("non-empty").push(r);
                } else {
                    groups.push(vec![r]);
                }
            }
            let rows = groups
                .iter()
                .map(|g| {
                    (0..nc)
                        .map(|c| {
                            let parts: Vec<&Cell> = g.iter().map(|&r| gt.cell(r, c)).collect();
                            Cell {
                                text: join_texts(parts.iter().map(|p| p.text.as_str())),
                                bbox: Rect::bounding(parts.iter().map(|p| p.bbox)).expect("group non-empty"),
                                is_header: parts.iter().any(|p| p.is_header),
                            }
                        })
                        .collect()
                })
                .collect();
            rebuild(rows)
        }
        CorruptionKind::SplitRow => {
            let split: Vec<usize> = permutation(&mut rng, nr)[..amount(s, nr)].to_vec();
            let mut rows = Vec::new();
            for (r, row) in rows_of(gt).into_iter().enumerate() {
                if !split.contains(&r) {
                    rows.push(row);
                    continue;
                }
                let (mut top, mut bottom) = (Vec::new(), Vec::new());
                for cell in row {
                    let words: Vec<&str> = cell.text.split_whitespace().collect();
                    let half = words.len().div_ceil(2);
                    let ym = (cell.bbox.y0 + cell.bbox.y1) / 2.0;
                    top.push(Cell {
                        text: words[..half].join(" "),
                        bbox: Rect::new(cell.bbox.x0, cell.bbox.y0, cell.bbox.x1, ym),
                        is_header: cell.is_header,
                    });
                    bottom.push(Cell {
                        text: words[half..].join(" "),
                        bbox: Rect::new(cell.bbox.x0, ym, cell.bbox.x1, cell.bbox.y1),
                        is_header: cell.is_header,
                    });
                }
                rows.push(top);
                rows.push(bottom);
            }
            rebuild(rows)
        }
        CorruptionKind::ShiftTableBbox => {
            let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let dy = dir * s * gt.bbox.height();
            let rows = (0..nr)
                .map(|r| {
                    let (top, bottom) = gt.row_band(r);
                    let (st, sb) = (top + dy, bottom + dy);
                    let source = (0..nr)
                        .map(|q| {
                            let (a, b) = gt.row_band(q);
                            (q, (sb.min(b) - st.max(a)).max(0.0))
                        })
                        .filter(|&(_, o)| o > 0.0)
                        .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)))
                        .map(|(q, _)| q);
                    (0..nc)
                        .map(|c| {
                            let cell = gt.cell(r, c);
                            Cell {
                                text: source.map(|q| gt.cell(q, c).text.clone()).unwrap_or_default(),
                                bbox: cell.bbox.translate(0.0, dy),
                                is_header: cell.is_header,
                            }
                        })
                        .collect()
                })
                .collect();
            rebuild(rows)
        }
        CorruptionKind::BlankCells => {
            let n = gt.n_cells();
            let blank: Vec<usize> = permutation(&mut rng, n)[..amount(s, n)].to_vec();
            let mut g = gt.clone();
            for i in blank {
                g.cells[i].text.clear();
            }
            g
        }
        CorruptionKind::GarbleText => {
            let n = gt.n_cells();
            let order = permutation(&mut rng, n);
            // every cell's garbled form is drawn up front, independent of severity
            let garbled: Vec<String> = gt
                .cells
                .iter()
                .map(|c| {
                    let chars: Vec<char> = c.text.chars().collect();
                    let k = chars.len().div_ceil(2);
                    let hit = permutation(&mut rng, chars.len());
                    let mut out = chars.clone();
                    for &i in &hit[..k] {
                        if !out[i].is_whitespace() {
                            out[i] = GARBLE_CHAR;
                        }
                    }
                    out.into_iter().collect()
                })
                .collect();
            let mut g = gt.clone();
            for &i in &order[..amount(s, n)] {
                g.cells[i].text = garbled[i].clone();
            }
            g
        }
    };
    Ok(grid)
}

/// Synthesized confidence `clamp(1 - severity + noise, 0, 1)`.
fn noisy_confidence(severity: f64, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> f64 {
    (1.0 - severity + noise.sample(rng)).clamp(0.0, 1.0)
}

/// Corrupted prediction with independently noised detection and structure confidences.
pub fn corrupt(gt: &TableGrid, corruption: &Corruption, seed: u64, conf_noise: f64) -> Result<ExtractedTable> {
    let grid = corrupt_grid(gt, corruption, seed)?;
    let noise = Normal::new(0.0, conf_noise).map_err(|e| Error::invalid(format!("confidence noise: {e}")))?;
    let mut rng = stream(seed, 100);
    let td = noisy_confidence(corruption.severity, &noise, &mut rng);
    let tsr = noisy_confidence(corruption.severity, &noise, &mut rng);
    ExtractedTable::new(grid, td, tsr)
}

/// A corruption kind drawn uniformly among those feasible for `grid`.
pub fn random_kind(grid: &TableGrid, rng: &mut impl Rng) -> CorruptionKind {
    let feasible: Vec<CorruptionKind> = CorruptionKind::ALL.into_iter().filter(|k| k.feasible(grid)).collect();
    feasible[rng.random_range(0..feasible.len())]
}

/// Error model of the stub extractor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StubProfile {
    /// Mean corruption severity at `reference_size` training labels.
    pub base_severity: f64,
    /// Reduction of the mean severity per e-fold growth of the training set.
    pub slope: f64,
    pub reference_size: f64,
    pub min_severity: f64,
    /// Probability of an empty prediction per unit of mean severity.
    pub empty_scale: f64,
    /// Ignore the training set: every model behaves like the reference one.
    pub frozen: bool,
    pub conf_noise: f64,
    pub seed: u64,
}

impl Default for StubProfile {
    fn default() -> Self {
        StubProfile {
            base_severity: 0.35,
            slope: 0.12,
            reference_size: 100.0,
            min_severity: 0.0,
            empty_scale: 0.4,
            frozen: false,
            conf_noise: 0.15,
            seed: 0,
        }
    }
}

impl StubProfile {
    /// `clamp(base - slope * ln(n / reference), min, 1)`, or `base` when frozen.
    pub fn mean_severity(&self, effective_size: f64) -> f64 {
        if self.frozen {
            return self.base_severity.clamp(0.0, 1.0);
        }
        let n = effective_size.max(1.0);
        (self.base_severity - self.slope * (n / self.reference_size).ln()).clamp(self.min_severity.max(0.0), 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.base_severity)
            && self.slope >= 0.0
            && self.reference_size > 0.0
            && (0.0..=1.0).contains(&self.min_severity)
            && self.empty_scale >= 0.0
            && self.conf_noise >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid stub profile: {self:?}")))
        }
    }
}

/// What the stub extractor "learned": the size of its training set, discounted by label quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubModel {
    pub n_docs: usize,
    pub effective_size: f64,
    pub mean_severity: f64,
    pub seed: u64,
    pub from_scratch: bool,
    pub training_ids: Vec<String>,
}

/// Deterministic stand-in for a table extractor. Predictions are the hidden
/// ground truth corrupted at a severity whose mean shrinks as the training set
/// grows. Each document's random draws are fixed by `(profile seed, model seed, id)`.
pub struct StubExtractor<'a> {
    pub profile: StubProfile,
    /// Ground truth by document id, used for prediction and to grade training labels.
    pub oracle: &'a BTreeMap<String, TableGrid>,
}

impl StubExtractor<'_> {
    /// A training label counts `2 * f1 - 1` toward the effective size, where
    /// `f1` compares it with the oracle (1 when the oracle has no entry).
    pub fn train(&self, docs: &[Document], seed: u64) -> Result<StubModel> {
        self.profile.validate()?;
        let weights: Vec<f64> = docs
            .par_iter()
            .map(|d| {
                let Some(label) = &d.gt_table else {
                    return Ok(0.0);
                };
                let f1 = match self.oracle.get(&d.id) {
                    Some(truth) => grits_con(truth, Some(label))?.f1,
                    None => 1.0,
                };
                Ok(2.0 * f1 - 1.0)
            })
            .collect::<Result<_>>()?;
        let effective_size = weights.iter().sum::<f64>().max(1.0);
        let mut training_ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
        training_ids.sort();
        Ok(StubModel {
            n_docs: docs.len(),
            effective_size,
            mean_severity: self.profile.mean_severity(effective_size),
            seed,
            from_scratch: true,
            training_ids,
        })
    }

    pub fn predict(&self, model: &StubModel, doc: &Document) -> Result<Prediction> {
        let Some(gt) = self.oracle.get(&doc.id).or(doc.gt_table.as_ref()) else {
            return Ok(Prediction::empty(&doc.id));
        };
        let key = stable_hash(&doc.id) ^ model.seed.rotate_left(17) ^ self.profile.seed.rotate_left(41);
        let mut rng = stream(key, 7);
        let u_empty: f64 = rng.random();
        let u_sev: f64 = rng.random();
        let kind = random_kind(gt, &mut rng);
        let corruption_seed: u64 = rng.random();
        let mean = model.mean_severity;
        if u_empty < self.profile.empty_scale * mean {
            return Ok(Prediction::empty(&doc.id));
        }
        let severity = (-mean * (1.0 - u_sev).ln()).min(1.0);
        let extracted = corrupt(gt, &Corruption { kind, severity }, corruption_seed, self.profile.conf_noise)?;
        Ok(Prediction {
            doc_id: doc.id.clone(),
            extracted: Some(extracted),
        })
    }

    pub fn predict_all(&self, model: &StubModel, docs: &[Document]) -> Result<BTreeMap<String, Prediction>> {
        docs.par_iter()
            .map(|d| self.predict(model, d).map(|p| (d.id.clone(), p)))
            .collect()
    }
}

/// Ground-truth grids of `docs` by id.
pub fn oracle_of<'a>(docs: impl IntoIterator<Item = &'a Document>) -> BTreeMap<String, TableGrid> {
    docs.into_iter()
        .filter_map(|d| d.gt_table.clone().map(|g| (d.id.clone(), g)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::content::classify_content_type;

    fn small_spec(n: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            n_docs: n,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let a = generate_corpus(&small_spec(20, 1)).unwrap();
        let b = generate_corpus(&small_spec(20, 1)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.iter().all(|d| d.validate().is_ok()));
        let c = generate_corpus(&small_spec(20, 2)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn numeric_columns_classify_as_numeric() {
        let spec = SynthSpec {
            type_mix: [1.0, 0.0, 0.0, 0.0],
            ..small_spec(10, 3)
        };
        for d in generate_corpus(&spec).unwrap() {
            let g = d.gt_table.unwrap();
            for r in 1..g.n_rows {
                for c in 0..g.n_cols {
                    assert_eq!(classify_content_type(&g.cell(r, c).text), ContentType::Numeric);
                }
            }
        }
    }

    #[test]
    fn infeasible_geometry_rejected() {
        let spec = SynthSpec {
            cols: (2, 40),
            ..small_spec(1, 0)
        };
        assert!(generate_corpus(&spec).is_err());
    }

    fn gt() -> TableGrid {
        generate_corpus(&small_spec(1, 9)).unwrap().remove(0).gt_table.unwrap()
    }

    #[test]
    fn zero_severity_is_identity() {
        let g = gt();
        for kind in CorruptionKind::ALL {
            let p = corrupt_grid(&g, &Corruption { kind, severity: 0.0 }, 4).unwrap();
            assert_eq!(p, g);
        }
    }

    #[test]
    fn every_kind_yields_a_valid_grid() {
        let g = gt();
        for kind in CorruptionKind::ALL {
            for s in [0.1, 0.5, 1.0] {
                let p = corrupt(&g, &Corruption { kind, severity: s }, 4, 0.15).unwrap();
                assert!(p.grid.validate().is_ok(), "{kind:?} at {s}");
                assert!((p.conf_te - p.conf_td * p.conf_tsr).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn infeasible_corruption() {
        let g = TableGrid {
            bbox: Rect::new(0.0, 0.0, 10.0, 10.0),
            n_rows: 1,
            n_cols: 1,
            cells: vec![Cell {
                text: "x".into(),
                bbox: Rect::new(0.0, 0.0, 10.0, 10.0),
                is_header: false,
            }],
        };
        for kind in [CorruptionKind::DropColumn, CorruptionKind::DropRow, CorruptionKind::MergeRows] {
            assert!(corrupt_grid(&g, &Corruption { kind, severity: 0.5 }, 0).is_err());
        }
    }

    #[test]
    fn stub_learning_curve() {
        let p = StubProfile::default();
        assert!(p.mean_severity(400.0) < p.mean_severity(100.0));
        assert_eq!(p.mean_severity(100.0), p.base_severity);
        let frozen = StubProfile { frozen: true, ..p };
        assert_eq!(frozen.mean_severity(400.0), frozen.mean_severity(10.0));
    }

    #[test]
    fn stub_zero_severity_reproduces_truth() {
        let docs = generate_corpus(&small_spec(8, 5)).unwrap();
        let oracle = oracle_of(&docs);
        let stub = StubExtractor {
            profile: StubProfile {
                base_severity: 0.0,
                slope: 0.0,
                ..Default::default()
            },
            oracle: &oracle,
        };
        let m = stub.train(&docs, 1).unwrap();
        for d in &docs {
            let p = stub.predict(&m, d).unwrap();
            assert_eq!(p.grid(), d.gt_table.as_ref());
        }
    }
}
