//! Cell content-type and alignment classifiers.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::geometry::Rect;

/// Content category of a cell, ordered by tie-break precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContentType {
    Numeric,
    DateLike,
    AmountLike,
    Text,
    Empty,
}

const NUM: &str = r"[+-]?(?:\d{1,3}(?:[,\s]\d{3})+|\d+)(?:\.\d+)?";
const CURRENCY: &str = r"(?:[$€£¥]|USD|EUR|GBP|CHF|JPY|CAD|AUD)";
const MONTH: &str = r"(?:jan|feb|mar|apr|may|jun|jul|aug|sep|sept|oct|nov|dec)[a-z]*\.?";

static NUMERIC: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!("^{NUM}$")).unwrap());

static AMOUNT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i)^(?:[+-]?\s?{CURRENCY}\s?{NUM}|{NUM}\s?{CURRENCY})$"
    ))
    .unwrap()
});

static DATE: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    [
        r"^\d{4}[-/.]\d{1,2}[-/.]\d{1,2}$".to_string(),
        r"^\d{1,2}[-/.]\d{1,2}[-/.]\d{2,4}$".to_string(),
        format!(r"(?i)^\d{{1,2}}\s+{MONTH},?\s+\d{{2,4}}$"),
        format!(r"(?i)^{MONTH}\s+\d{{1,2}},?\s+\d{{2,4}}$"),
        format!(r"(?i)^\d{{1,2}}[-/]{MONTH}[-/]\d{{2,4}}$"),
    ]
    .iter()
    .map(|p| Regex::new(p).unwrap())
    .collect()
});

/// Classify cell text. Total: every string maps to exactly one class.
pub fn classify_content_type(text: &str) -> ContentType {
    let t = text.trim();
    if t.is_empty() {
        ContentType::Empty
    } else if DATE.iter().any(|re| re.is_match(t)) {
        ContentType::DateLike
    } else if AMOUNT.is_match(t) {
        ContentType::AmountLike
    } else if NUMERIC.is_match(t) {
        ContentType::Numeric
    } else {
        ContentType::Text
    }
}

/// Most frequent type among `types`; ties go to the lower variant.
pub fn modal_type(types: impl IntoIterator<Item = ContentType>) -> Option<ContentType> {
    let mut counts = [0usize; 5];
    for t in types {
        counts[t as usize] += 1;
    }
    let (best, &n) = counts
        .iter()
        .enumerate()
        .rev()
        .max_by_key(|&(_, n)| *n)?;
    (n > 0).then(|| ALL_TYPES[best])
}

const ALL_TYPES: [ContentType; 5] = [
    ContentType::Numeric,
    ContentType::DateLike,
    ContentType::AmountLike,
    ContentType::Text,
    ContentType::Empty,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Alignment {
    Left,
    Right,
    Center,
    Unknown,
}

/// Alignment of `text` inside `cell` from the left and right whitespace gaps.
///
/// `tol` is a fraction of the cell width.
pub fn classify_alignment(text: &Rect, cell: &Rect, tol: f64) -> Alignment {
    let width = cell.width();
    if width <= 0.0 {
        return Alignment::Unknown;
    }
    let Some(text) = text.intersect(cell).or_else(|| {
        // zero-height text boxes still carry horizontal information
        let x0 = text.x0.max(cell.x0);
        let x1 = text.x1.min(cell.x1);
        (x0 <= x1).then(|| Rect::new(x0, cell.y0, x1, cell.y1))
    }) else {
        return Alignment::Unknown;
    };
    let t = tol * width;
    let left = text.x0 - cell.x0;
    let right = cell.x1 - text.x1;
    if left <= t && right > t {
        Alignment::Left
    } else if right <= t && left > t {
        Alignment::Right
    } else if (left - right).abs() <= t {
        Alignment::Center
    } else {
        Alignment::Unknown
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ContentType::*;

    #[test]
    fn content_examples() {
        assert_eq!(classify_content_type("12.50"), Numeric);
        assert_eq!(classify_content_type("2023-05-01"), DateLike);
        assert_eq!(classify_content_type("   "), Empty);
        assert_eq!(classify_content_type(""), Empty);
    }

    #[test]
    fn content_patterns() {
        for s in ["1,234.56", "-3", "+0.5", "1 000", "42"] {
            assert_eq!(classify_content_type(s), Numeric, "{s}");
        }
        for s in ["$12.00", "12.00 EUR", "€ 3", "-$5.10", "usd 100"] {
            assert_eq!(classify_content_type(s), AmountLike, "{s}");
        }
        for s in ["01/02/2023", "3 March 2021", "Jan 5, 2020", "05-Jan-21", "2021.12.31"] {
            assert_eq!(classify_content_type(s), DateLike, "{s}");
        }
        for s in ["Qty", "12 apples", "1.2.3.4.5", "12.50 13.00", "$"] {
            assert_eq!(classify_content_type(s), Text, "{s}");
        }
    }

    #[test]
    fn modal_ties_go_to_lower_variant() {
        assert_eq!(modal_type([Text, Numeric]), Some(Numeric));
        assert_eq!(modal_type([Text, Text, Numeric]), Some(Text));
        assert_eq!(modal_type([]), None);
    }

    #[test]
    fn alignment_examples() {
        let cell = Rect::new(0.0, 0.0, 100.0, 10.0);
        let flush_left = Rect::new(0.0, 2.0, 30.0, 8.0);
        assert_eq!(classify_alignment(&flush_left, &cell, 0.1), Alignment::Left);
        let flush_right = Rect::new(75.0, 2.0, 99.0, 8.0);
        assert_eq!(classify_alignment(&flush_right, &cell, 0.1), Alignment::Right);
        let centered = Rect::new(35.0, 2.0, 65.0, 8.0);
        assert_eq!(classify_alignment(&centered, &cell, 0.1), Alignment::Center);
        let off = Rect::new(20.0, 2.0, 50.0, 8.0);
        assert_eq!(classify_alignment(&off, &cell, 0.1), Alignment::Unknown);
        let zero = Rect::new(5.0, 0.0, 5.0, 10.0);
        assert_eq!(classify_alignment(&off, &zero, 0.1), Alignment::Unknown);
    }
}
