//! The 21 base quality features computed from a document and one extracted table.
//!
//! Structural features look at table geometry on the page, content features at
//! the cells themselves, and contextual features at OCR text around and inside
//! the detected region. Every feature is unit-free.

pub mod content;
pub mod lexicon;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, ExtractedTable, OcrToken, TableGrid};
use crate::error::{Error, Result};
use crate::geometry::{union_area, union_area_within, Rect};

pub use content::{classify_alignment, classify_content_type, Alignment, ContentType};
pub use lexicon::{derive_header_lexicon, HeaderLexicon, DEFAULT_MIN_DOC_COUNT};

pub const N_BASE_FEATURES: usize = 21;

/// Canonical feature order, shared by every CSV and vector layout.
pub const FEATURE_NAMES: [&str; N_BASE_FEATURES] = [
    "height_variation",
    "width_variation",
    "table_centering",
    "relative_position",
    "real_estate_usage",
    "content_isolation",
    "empty_cells_ratio",
    "type_inconsistency",
    "row_to_cell_ratio",
    "column_to_cell_ratio",
    "text_length_consistency",
    "alignment_inconsistency",
    "normalized_row_distances",
    "empty_cells_content_below",
    "content_continuity_in",
    "header_inside_suspicion",
    "header_outside_suspicion",
    "internal_whitespace_density",
    "margin_whitespace_density",
    "content_type_transition",
    "content_continuity_out",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BaseFeatures {
    // structural
    pub height_variation: f64,
    pub width_variation: f64,
    pub table_centering: f64,
    pub relative_position: f64,
    pub real_estate_usage: f64,
    pub content_isolation: f64,
    // content
    pub empty_cells_ratio: f64,
    pub type_inconsistency: f64,
    pub row_to_cell_ratio: f64,
    pub column_to_cell_ratio: f64,
    pub text_length_consistency: f64,
    pub alignment_inconsistency: f64,
    pub normalized_row_distances: f64,
    pub empty_cells_content_below: f64,
    // contextual
    pub content_continuity_in: f64,
    pub header_inside_suspicion: f64,
    pub header_outside_suspicion: f64,
    pub internal_whitespace_density: f64,
    pub margin_whitespace_density: f64,
    pub content_type_transition: f64,
    pub content_continuity_out: f64,
}

impl BaseFeatures {
    pub fn to_array(&self) -> [f64; N_BASE_FEATURES] {
        [
            self.height_variation,
            self.width_variation,
            self.table_centering,
            self.relative_position,
            self.real_estate_usage,
            self.content_isolation,
            self.empty_cells_ratio,
            self.type_inconsistency,
            self.row_to_cell_ratio,
            self.column_to_cell_ratio,
            self.text_length_consistency,
            self.alignment_inconsistency,
            self.normalized_row_distances,
            self.empty_cells_content_below,
            self.content_continuity_in,
            self.header_inside_suspicion,
            self.header_outside_suspicion,
            self.internal_whitespace_density,
            self.margin_whitespace_density,
            self.content_type_transition,
            self.content_continuity_out,
        ]
    }

    pub fn from_array(v: [f64; N_BASE_FEATURES]) -> Self {
        BaseFeatures {
            height_variation: v[0],
            width_variation: v[1],
            table_centering: v[2],
            relative_position: v[3],
            real_estate_usage: v[4],
            content_isolation: v[5],
            empty_cells_ratio: v[6],
            type_inconsistency: v[7],
            row_to_cell_ratio: v[8],
            column_to_cell_ratio: v[9],
            text_length_consistency: v[10],
            alignment_inconsistency: v[11],
            normalized_row_distances: v[12],
            empty_cells_content_below: v[13],
            content_continuity_in: v[14],
            header_inside_suspicion: v[15],
            header_outside_suspicion: v[16],
            internal_whitespace_density: v[17],
            margin_whitespace_density: v[18],
            content_type_transition: v[19],
            content_continuity_out: v[20],
        }
    }
}

/// Which rows count as the header band of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeaderRule {
    /// Row 0; predictions carry no reliable header flags.
    #[default]
    FirstRow,
    /// Rows with any `is_header` cell, falling back to row 0 when none is flagged.
    FromFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Alignment tolerance as a fraction of cell width.
    pub alignment_tol: f64,
    /// Margin band width as a fraction of table width and height.
    pub margin_fraction: f64,
    pub header_rule: HeaderRule,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            alignment_tol: 0.1,
            margin_fraction: 0.2,
            header_rule: HeaderRule::FirstRow,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Population standard deviation.
fn pop_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn coefficient_of_variation(v: &[f64]) -> f64 {
    let m = mean(v);
    if v.len() < 2 || m <= 0.0 {
        0.0
    } else {
        pop_std(v) / m
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Area of empty cells overlapped by OCR text, over the total empty-cell area.
pub fn empty_cells_content_below(grid: &TableGrid, tokens: &[OcrToken]) -> f64 {
    let boxes: Vec<Rect> = tokens.iter().filter(|t| !t.whitespace).map(|t| t.bbox).collect();
    let mut covered = 0.0;
    let mut total = 0.0;
    for cell in &grid.cells {
        if classify_content_type(&cell.text) != ContentType::Empty {
            continue;
        }
        total += cell.bbox.area();
        covered += union_area_within(&boxes, &cell.bbox);
    }
    ratio(covered, total)
}

fn header_rows(grid: &TableGrid, rule: HeaderRule) -> BTreeSet<usize> {
    let flagged: BTreeSet<usize> = match rule {
        HeaderRule::FirstRow => BTreeSet::new(),
        HeaderRule::FromFlags => (0..grid.n_rows)
            .filter(|&r| grid.row(r).iter().any(|c| c.is_header))
            .collect(),
    };
    if flagged.is_empty() {
        BTreeSet::from([0])
    } else {
        flagged
    }
}

/// Union of the text boxes of tokens whose centre falls in `cell`.
fn text_bbox_in(cell: &Rect, tokens: &[&OcrToken]) -> Option<Rect> {
    Rect::bounding(
        tokens
            .iter()
            .filter(|t| cell.contains_center_of(&t.bbox))
            .map(|t| t.bbox),
    )
}

/// Compute all base features for `extracted` on `doc`.
pub fn extract_features(
    doc: &Document,
    extracted: &ExtractedTable,
    lexicon: &HeaderLexicon,
    config: &FeatureConfig,
) -> Result<BaseFeatures> {
    extract_grid_features(doc, &extracted.grid, lexicon, config)
}

/// Same as [`extract_features`] for a bare grid (e.g. a ground-truth table).
pub fn extract_grid_features(
    doc: &Document,
    grid: &TableGrid,
    lexicon: &HeaderLexicon,
    config: &FeatureConfig,
) -> Result<BaseFeatures> {
    if grid.n_rows == 0 || grid.n_cols == 0 || grid.cells.len() != grid.n_cells() {
        return Err(Error::schema(&doc.id, "table", "degenerate grid"));
    }
    let page = doc.page.rect();
    let (pw, ph) = (doc.page.width, doc.page.height);
    let table = grid.bbox;
    let table_on_page = table.intersect(&page).unwrap_or(Rect::new(0.0, 0.0, 0.0, 0.0));
    let tokens: Vec<&OcrToken> = doc.tokens.iter().filter(|t| !t.whitespace).collect();
    let token_boxes: Vec<Rect> = tokens.iter().map(|t| t.bbox).collect();

    let row_bands: Vec<(f64, f64)> = (0..grid.n_rows).map(|r| grid.row_band(r)).collect();
    let col_bands: Vec<(f64, f64)> = (0..grid.n_cols).map(|c| grid.col_band(c)).collect();
    let row_heights: Vec<f64> = row_bands.iter().map(|(a, b)| (b - a).max(0.0)).collect();
    let col_widths: Vec<f64> = col_bands.iter().map(|(a, b)| (b - a).max(0.0)).collect();
    let types: Vec<ContentType> = grid.cells.iter().map(|c| classify_content_type(&c.text)).collect();
    let n_cells = grid.n_cells() as f64;

    let column_modal: Vec<Option<ContentType>> = (0..grid.n_cols)
        .map(|c| {
            content::modal_type(
                (0..grid.n_rows)
                    .map(|r| types[r * grid.n_cols + c])
                    .filter(|t| *t != ContentType::Empty),
            )
        })
        .collect();

    // structural
    let height_variation = coefficient_of_variation(&row_heights);
    let width_variation = coefficient_of_variation(&col_widths);
    let table_centering = [
        table.x0 / pw,
        (pw - table.x1) / pw,
        table.y0 / ph,
        (ph - table.y1) / ph,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
    .max(0.0);
    let (tcx, tcy) = table.center();
    let diag = pw.hypot(ph);
    let relative_position = (tcx - pw / 2.0).hypot(tcy - ph / 2.0) / diag;
    let real_estate_usage = ratio(table_on_page.area(), page.area());

    let outside: Vec<&&OcrToken> = tokens.iter().filter(|t| !table.contains_center_of(&t.bbox)).collect();
    let content_isolation = outside
        .iter()
        .map(|t| t.bbox.gap(&table) / diag)
        .fold(1.0f64, f64::min)
        .clamp(0.0, 1.0);

    // content
    let n_empty = types.iter().filter(|t| **t == ContentType::Empty).count() as f64;
    let empty_cells_ratio = n_empty / n_cells;

    let mut type_inconsistency = 0.0f64;
    let mut text_length_consistency = 0.0f64;
    let mut inconsistent_alignment_cols = 0usize;
    for c in 0..grid.n_cols {
        let col_types: Vec<ContentType> = (0..grid.n_rows)
            .map(|r| types[r * grid.n_cols + c])
            .filter(|t| *t != ContentType::Empty)
            .collect();
        if let Some(modal) = column_modal[c] {
            let deviating = col_types.iter().filter(|t| **t != modal).count();
            type_inconsistency = type_inconsistency.max(deviating as f64 / col_types.len() as f64);
        }

        let lens: Vec<f64> = grid.column(c).map(|cell| cell.text.trim().chars().count() as f64).collect();
        text_length_consistency = text_length_consistency.max(pop_std(&lens) / mean(&lens).max(1.0));

        let aligns: BTreeSet<Alignment> = (0..grid.n_rows)
            .filter(|&r| types[r * grid.n_cols + c] != ContentType::Empty)
            .filter_map(|r| {
                let cell = grid.cell(r, c);
                text_bbox_in(&cell.bbox, &tokens)
                    .map(|tb| classify_alignment(&tb, &cell.bbox, config.alignment_tol))
            })
            .collect();
        if aligns.len() > 1 {
            inconsistent_alignment_cols += 1;
        }
    }
    let alignment_inconsistency = inconsistent_alignment_cols as f64 / grid.n_cols as f64;
    let row_to_cell_ratio = grid.n_rows as f64 / n_cells;
    let column_to_cell_ratio = grid.n_cols as f64 / n_cells;

    let row_gaps: Vec<f64> = row_bands.windows(2).map(|w| w[1].0 - w[0].0).collect();
    let normalized_row_distances = if table.height() > 0.0 {
        pop_std(&row_gaps) / table.height()
    } else {
        0.0
    };
    let empty_cells_content_below = empty_cells_content_below(grid, &doc.tokens);

    // contextual
    let cell_boxes: Vec<Rect> = grid.cells.iter().map(|c| c.bbox).collect();
    let mut in_area = 0.0;
    let mut missed = 0.0;
    for t in tokens.iter().filter(|t| table.contains_center_of(&t.bbox)) {
        if let Some(clipped) = t.bbox.intersect(&table) {
            let a = clipped.area();
            in_area += a;
            missed += (a - union_area_within(&cell_boxes, &clipped)).max(0.0);
        }
    }
    let content_continuity_in = ratio(missed, in_area);

    let header = header_rows(grid, config.header_rule);
    let header_words: Vec<String> = header
        .iter()
        .flat_map(|&r| grid.row(r).iter())
        .flat_map(|c| lexicon::words(&c.text).collect::<Vec<_>>())
        .collect();
    let header_inside_suspicion = if header_words.is_empty() {
        0.0
    } else {
        header_words.iter().filter(|w| !lexicon.contains(w)).count() as f64 / header_words.len() as f64
    };

    let header_rect = Rect::bounding(header.iter().flat_map(|&r| grid.row(r).iter().map(|c| c.bbox)));
    let mut lex_hits = 0usize;
    let mut lex_outside = 0usize;
    for t in &tokens {
        let inside = header_rect.is_some_and(|h| h.contains_center_of(&t.bbox));
        for w in lexicon::words(&t.text) {
            if lexicon.contains(&w) {
                lex_hits += 1;
                if !inside {
                    lex_outside += 1;
                }
            }
        }
    }
    let header_outside_suspicion = ratio(lex_outside as f64, lex_hits as f64);

    let internal_whitespace_density = match grid.cells_bounds().and_then(|c| c.intersect(&table)) {
        Some(inner) => {
            let band = table.area() - inner.area();
            if band > 1e-9 * table.area().max(1.0) {
                let ink = union_area_within(&token_boxes, &table) - union_area_within(&token_boxes, &inner);
                ratio(ink, band)
            } else {
                0.0
            }
        }
        None => ratio(union_area_within(&token_boxes, &table), table.area()),
    };

    // Not clipped to the page, so the density does not depend on where the table sits.
    let margin = table.expand(config.margin_fraction * table.width(), config.margin_fraction * table.height());
    let ring = margin.area() - table.area();
    let ink = union_area_within(&token_boxes, &margin) - union_area_within(&token_boxes, &table);
    let margin_whitespace_density = ratio(ink, ring);

    let median_row_height = median(&row_heights);
    let adjacent: Vec<&&&OcrToken> = outside
        .iter()
        .filter(|t| t.bbox.gap(&table) <= median_row_height)
        .collect();
    let mut type_matches = 0usize;
    let mut typed = 0usize;
    let mut aligned = 0usize;
    for t in &adjacent {
        let (tx, _) = t.bbox.center();
        let ty = classify_content_type(&t.text);
        if ty != ContentType::Empty {
            typed += 1;
            let nearest = col_bands
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da = ((a.0 + a.1) * 0.5 - tx).abs();
                    let db = ((b.0 + b.1) * 0.5 - tx).abs();
                    da.total_cmp(&db)
                })
                .map(|(i, _)| i);
            if nearest.and_then(|c| column_modal[c]) == Some(ty) {
                type_matches += 1;
            }
        }
        let w = t.bbox.width();
        if col_bands.iter().any(|&(a, b)| {
            let band = Rect::new(a, t.bbox.y0, b, t.bbox.y1);
            w > 0.0 && band.x_overlap(&t.bbox) >= 0.5 * w
        }) {
            aligned += 1;
        }
    }
    let content_type_transition = ratio(type_matches as f64, typed as f64);
    let content_continuity_out = ratio(aligned as f64, adjacent.len() as f64);

    let f = BaseFeatures {
        height_variation,
        width_variation,
        table_centering,
        relative_position,
        real_estate_usage,
        content_isolation,
        empty_cells_ratio,
        type_inconsistency,
        row_to_cell_ratio,
        column_to_cell_ratio,
        text_length_consistency,
        alignment_inconsistency,
        normalized_row_distances,
        empty_cells_content_below,
        content_continuity_in,
        header_inside_suspicion,
        header_outside_suspicion,
        internal_whitespace_density,
        margin_whitespace_density,
        content_type_transition,
        content_continuity_out,
    };
    debug_assert!(f.to_array().iter().all(|v| v.is_finite()));
    Ok(f)
}

/// Total area of the given tokens, overlaps counted once.
pub fn token_ink(tokens: &[OcrToken]) -> f64 {
    let boxes: Vec<Rect> = tokens.iter().map(|t| t.bbox).collect();
    union_area(&boxes)
}
