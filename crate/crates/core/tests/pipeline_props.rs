mod common;

use std::collections::BTreeSet;

use common::{diagonally_dominant, random_psd, rng, vendi_oracle};
use proptest::prelude::*;
use rand::Rng;
use tabqual::corpus::{split_corpus, AdapterHints, Corpus, Document, SplitRatios, TableGrid};
use tabqual::curation::{curate, Adapters, CurationConfig, Stage, StubFallback, StubOrientation, StubPrimary, StubVlm};
use tabqual::diversity::dpp::dpp_greedy_select;
use tabqual::diversity::kernel::rbf_kernel;
use tabqual::diversity::measures::{int_div, vendi_score};
use tabqual::diversity::select::{select_diverse_subset, SelectionConfig};
use tabqual::features::{derive_header_lexicon, extract_grid_features, FeatureConfig, HeaderLexicon, FEATURE_NAMES};
use tabqual::geometry::Rect;
use tabqual::quality::quality_filter;
use tabqual::transform::{fit_stats, transform, FeatureStats, VECTOR_LEN};
use tabqual::synth::{generate_corpus, SynthSpec};

fn synth(n: usize, seed: u64) -> Vec<Document> {
    generate_corpus(&SynthSpec {
        n_docs: n,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn features_of(doc: &Document, lexicon: &HeaderLexicon) -> [f64; 21] {
    extract_grid_features(doc, doc.gt_table.as_ref().unwrap(), lexicon, &FeatureConfig::default())
        .unwrap()
        .to_array()
}

fn map_geometry(doc: &Document, f: impl Fn(&Rect) -> Rect) -> Document {
    let mut d = doc.clone();
    for t in &mut d.tokens {
        t.bbox = f(&t.bbox);
    }
    let g: &mut TableGrid = d.gt_table.as_mut().unwrap();
    g.bbox = f(&g.bbox);
    for c in &mut g.cells {
        c.bbox = f(&c.bbox);
    }
    d
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn random_points(r: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| r.random_range(-2.0..2.0)).collect()).collect()
}

fn fallback_page(id: &str, conf: f64, answer: &str) -> Document {
    let tokens = (0..30)
        .map(|i| {
            let (x, y) = ((i % 10) as f64 * 10.0, (i / 10) as f64 * 5.0);
            tabqual::corpus::OcrToken::new("w", Rect::new(x, y, x + 8.0, y + 4.0))
        })
        .collect();
    Document {
        id: id.into(),
        page: tabqual::corpus::PageSize {
            width: 100.0,
            height: 100.0,
        },
        tokens,
        gt_table: None,
        orientation: None,
        adapter_hints: Some(AdapterHints {
            primary_table_found: Some(false),
            fallback_confidence: Some(conf),
            vlm_answer: Some(answer.into()),
            fail: false,
        }),
    }
}

const ADAPTERS: Adapters<'static> = Adapters {
    orientation: &StubOrientation,
    primary: &StubPrimary,
    fallback: &StubFallback,
    vlm: &StubVlm,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn features_are_finite_and_ratios_bounded(seed in any::<u64>()) {
        let docs = synth(4, seed);
        let lexicon = derive_header_lexicon(&docs, 1);
        for d in &docs {
            let f = features_of(d, &lexicon);
            prop_assert!(f.iter().all(|v| v.is_finite()));
            let empty = FEATURE_NAMES.iter().position(|n| *n == "empty_cells_ratio").unwrap();
            prop_assert!((0.0..=1.0).contains(&f[empty]));
        }
    }

    #[test]
    fn uniform_scaling_leaves_features_unchanged(seed in any::<u64>(), e in -3i32..=3) {
        let s = 2f64.powi(e);
        let docs = synth(3, seed);
        let lexicon = derive_header_lexicon(&docs, 1);
        for d in &docs {
            let mut scaled = map_geometry(d, |r| r.scale(s));
            scaled.page.width *= s;
            scaled.page.height *= s;
            let (a, b) = (features_of(d, &lexicon), features_of(&scaled, &lexicon));
            for (i, (x, y)) in a.iter().zip(&b).enumerate() {
                prop_assert!(close(*x, *y), "{} moved from {x} to {y} at scale {s}", FEATURE_NAMES[i]);
            }
        }
    }

    #[test]
    fn translating_content_only_moves_page_relative_features(seed in any::<u64>(), dx in -8.0f64..8.0, dy in -8.0f64..8.0) {
        let docs = synth(3, seed);
        let lexicon = derive_header_lexicon(&docs, 1);
        for d in &docs {
            let moved = map_geometry(d, |r| r.translate(dx, dy));
            let (a, b) = (features_of(d, &lexicon), features_of(&moved, &lexicon));
            for (i, (x, y)) in a.iter().zip(&b).enumerate() {
                if matches!(FEATURE_NAMES[i], "table_centering" | "relative_position") {
                    continue;
                }
                prop_assert!(close(*x, *y), "{} moved from {x} to {y}", FEATURE_NAMES[i]);
            }
        }
    }

    #[test]
    fn transform_has_fixed_arity_and_binary_flags(seed in any::<u64>()) {
        let docs = synth(6, seed);
        let lexicon = derive_header_lexicon(&docs, 1);
        let rows: Vec<_> = docs
            .iter()
            .map(|d| extract_grid_features(d, d.gt_table.as_ref().unwrap(), &lexicon, &FeatureConfig::default()).unwrap())
            .collect();
        let stats: FeatureStats<f64> = fit_stats(&rows).unwrap();
        for row in &rows {
            let v = transform(row, &stats, [0.9, 0.8, 0.72]);
            prop_assert_eq!(v.len(), VECTOR_LEN);
            for chunk in v.as_slice()[..VECTOR_LEN - 3].chunks(5) {
                prop_assert!(chunk[3] == 0.0 || chunk[3] == 1.0);
                prop_assert!(chunk[4] == 0.0 || chunk[4] == 1.0);
                prop_assert!(chunk[2] >= 0.0);
            }
        }
        let back: FeatureStats<f64> = serde_json::from_str(&serde_json::to_string(&stats).unwrap()).unwrap();
        prop_assert_eq!(&back, &stats);
    }

    #[test]
    fn kernel_is_symmetric_with_unit_diagonal(seed in any::<u64>(), n in 1usize..12) {
        let pts = random_points(&mut rng(seed), n, 3);
        let k = rbf_kernel(&pts).unwrap();
        for i in 0..n {
            prop_assert_eq!(k.get(i, i), 1.0);
            for j in 0..n {
                prop_assert_eq!(k.get(i, j), k.get(j, i));
                prop_assert!(k.get(i, j) > 0.0 && k.get(i, j) <= 1.0);
            }
        }
    }

    #[test]
    fn vendi_and_int_div_stay_in_range(seed in any::<u64>(), n in 1usize..10) {
        let pts = random_points(&mut rng(seed), n, 4);
        let k = rbf_kernel(&pts).unwrap();
        let vs = vendi_score(&k.matrix).unwrap();
        prop_assert!(vs >= 1.0 - 1e-9 && vs <= n as f64 + 1e-9);
        prop_assert!((vs - vendi_oracle(&k.matrix)).abs() < 1e-6);
        let d = int_div(&k.matrix);
        prop_assert!((0.0..1.0).contains(&d));
    }

    #[test]
    fn greedy_dpp_is_deterministic(seed in any::<u64>(), n in 2usize..9) {
        let mut r = rng(seed);
        let k = random_psd(&mut r, n, n);
        let size = r.random_range(1..=n);
        let a = dpp_greedy_select(&k, size);
        let b = dpp_greedy_select(&k, size);
        prop_assert_eq!(a.is_ok(), b.is_ok());
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), a.len());
        }
        let dd = diagonally_dominant(&mut r, n, 0.1);
        prop_assert_eq!(dpp_greedy_select(&dd, size).unwrap(), dpp_greedy_select(&dd, size).unwrap());
    }

    #[test]
    fn selection_respects_k_max_without_duplicates(seed in any::<u64>(), m in 1usize..12, k_max in 1usize..8) {
        let mut r = rng(seed);
        let train = random_points(&mut r, 5, 3);
        let cands: Vec<(String, Vec<f64>)> = random_points(&mut r, m, 3)
            .into_iter()
            .enumerate()
            .map(|(i, p)| (format!("c{i:02}"), p))
            .collect();
        let cfg = SelectionConfig { k_max, ..SelectionConfig::default() };
        let d = select_diverse_subset(&train, &cands, &cfg).unwrap();
        let chosen = d.selected();
        prop_assert!(chosen.len() <= k_max.min(m));
        prop_assert_eq!(chosen.iter().collect::<BTreeSet<_>>().len(), chosen.len());
        let best = d.best_score().unwrap();
        for s in &d.trace {
            prop_assert!(s.diversity <= best.diversity);
        }
        prop_assert_eq!(&d, &select_diverse_subset(&train, &cands, &cfg).unwrap());
    }

    #[test]
    fn raising_alpha_keeps_a_subset(scores in proptest::collection::vec(0.0f64..=1.0, 0..40), a1 in 0.0f64..=1.0, a2 in 0.0f64..=1.0) {
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let scored: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, &s)| (i.to_string(), s)).collect();
        let low: BTreeSet<&str> = quality_filter(&scored, lo).unwrap().into_iter().collect();
        let high: BTreeSet<&str> = quality_filter(&scored, hi).unwrap().into_iter().collect();
        prop_assert!(high.is_subset(&low));
    }

    #[test]
    fn curation_thresholds_are_monotone(confs in proptest::collection::vec(0.0f64..=1.0, 1..30), h1 in 0.55f64..=1.0, h2 in 0.55f64..=1.0, m1 in 0.0f64..0.5, m2 in 0.0f64..0.5) {
        let docs: Vec<Document> = confs
            .iter()
            .enumerate()
            .map(|(i, &c)| fallback_page(&format!("d{i:03}"), c, if i % 2 == 0 { "True" } else { "False" }))
            .collect();
        let count = |high: f64, mid: f64, stage: Stage| {
            let cfg = CurationConfig { theta_high: high, theta_mid: mid, ..CurationConfig::default() };
            curate(&docs, &cfg, &ADAPTERS).unwrap().1.iter().filter(|v| v.stage == stage).count()
        };
        let (h_lo, h_hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
        let (m_lo, m_hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
        prop_assert!(count(h_hi, 0.5, Stage::FallbackHigh) <= count(h_lo, 0.5, Stage::FallbackHigh));
        prop_assert!(count(0.95, m_lo, Stage::Vlm) >= count(0.95, m_hi, Stage::Vlm));
        let cfg = CurationConfig::default();
        prop_assert_eq!(curate(&docs, &cfg, &ADAPTERS).unwrap().1, curate(&docs, &cfg, &ADAPTERS).unwrap().1);
    }

    #[test]
    fn splits_partition_deterministically(n in 3usize..60, seed in any::<u64>()) {
        let corpus = Corpus::new(synth(n, 1)).unwrap();
        let ratios = SplitRatios::default();
        let s = split_corpus(&corpus, ratios, seed).unwrap();
        prop_assert_eq!(&s, &split_corpus(&corpus, ratios, seed).unwrap());
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
        let all: BTreeSet<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        prop_assert_eq!(all.len(), n);
    }
}
