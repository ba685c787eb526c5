//! Header-word lexicon learned from ground-truth header cells.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Document;

pub const DEFAULT_MIN_DOC_COUNT: usize = 10;

/// Lowercased words with punctuation stripped.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|w| {
        let w: String = w
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        (!w.is_empty()).then_some(w)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderLexicon {
    pub words: BTreeSet<String>,
    pub min_doc_count: usize,
}

impl Default for HeaderLexicon {
    fn default() -> Self {
        HeaderLexicon {
            words: BTreeSet::new(),
            min_doc_count: DEFAULT_MIN_DOC_COUNT,
        }
    }
}

impl HeaderLexicon {
    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Sorted, newline-delimited.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for w in &self.words {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, min_doc_count: usize) -> Self {
        HeaderLexicon {
            words: text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect(),
            min_doc_count,
        }
    }
}

/// Keep words that occur in ground-truth header cells of at least
/// `min_doc_count` distinct documents.
pub fn derive_header_lexicon<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    min_doc_count: usize,
) -> HeaderLexicon {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut with_headers = 0usize;
    for doc in docs {
        let Some(gt) = &doc.gt_table else { continue };
        let per_doc: BTreeSet<String> = gt
            .cells
            .iter()
            .filter(|c| c.is_header)
            .flat_map(|c| words(&c.text).collect::<Vec<_>>())
            .collect();
        if !per_doc.is_empty() {
            with_headers += 1;
        }
        for w in per_doc {
            *counts.entry(w).or_default() += 1;
        }
    }
    if with_headers == 0 {
        log::warn!("no training documents with header cells; header lexicon is empty");
    }
    HeaderLexicon {
        words: counts
            .into_iter()
            .filter(|&(_, n)| n >= min_doc_count)
            .map(|(w, _)| w)
            .collect(),
        min_doc_count,
    }
}
