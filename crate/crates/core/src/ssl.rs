//! The self-training loop. Every iteration retrains the extractor from scratch
//! on the annotated set plus the current pseudo-labels, predicts on the
//! unlabeled pool, keeps the predictions that score at least the threshold,
//! optionally picks a diverse subset of them, and evaluates on the test split.
//! Pseudo-labels are re-selected each round rather than accumulated.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::CommandSpec;
use crate::corpus::{self, Document, ExtractedTable, Prediction};
use crate::diversity::{select_diverse_subset, DiversityDecision, SelectionConfig};
use crate::error::{Error, Result};
use crate::features::{
    derive_header_lexicon, extract_features, extract_grid_features, BaseFeatures, FeatureConfig, HeaderLexicon,
    DEFAULT_MIN_DOC_COUNT,
};
use crate::io;
use crate::metrics::{self, evaluate, grits_con, IterationMetrics};
use crate::quality::{
    evaluate_correlation, feature_importance, predict_quality, train_quality_model, CorrelationReport,
    QualityModel, SearchConfig,
};
use crate::synth::{StubExtractor, StubModel};
use crate::transform::{fit_stats, transform, FeatureStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Score with the quality model, then select a diverse subset.
    Quality,
    /// Score with the extraction confidence; no diversity step.
    Confidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    pub alpha: f64,
    pub max_iterations: usize,
    pub strategy: Strategy,
    pub confidence_threshold: f64,
    pub selection: SelectionConfig,
    pub search: SearchConfig,
    pub features: FeatureConfig,
    pub lexicon_min_docs: usize,
    pub seed: u64,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            alpha: 0.9,
            max_iterations: 10,
            strategy: Strategy::Quality,
            confidence_threshold: 0.9,
            selection: SelectionConfig::default(),
            search: SearchConfig::default(),
            features: FeatureConfig::default(),
            lexicon_min_docs: DEFAULT_MIN_DOC_COUNT,
            seed: 0,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::invalid("alpha and confidence_threshold must lie in [0, 1]"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        Ok(())
    }

    fn threshold(&self) -> f64 {
        match self.strategy {
            Strategy::Quality => self.alpha,
            Strategy::Confidence => self.confidence_threshold,
        }
    }
}

/// Annotated splits plus the unlabeled pool; ground truth of the pool is dropped on construction.
#[derive(Debug, Clone)]
pub struct SslData {
    pub d0: Vec<Document>,
    pub val: Vec<Document>,
    pub test: Vec<Document>,
    pub unlabeled: Vec<Document>,
}

impl SslData {
    pub fn new(d0: Vec<Document>, val: Vec<Document>, test: Vec<Document>, mut unlabeled: Vec<Document>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for d in d0.iter().chain(&val).chain(&test).chain(&unlabeled) {
            if !seen.insert(d.id.as_str()) {
                return Err(Error::DuplicateId(d.id.clone()));
            }
        }
        for (name, set) in [("annotated training", &d0), ("validation", &val), ("test", &test)] {
            if let Some(d) = set.iter().find(|d| d.gt_table.is_none()) {
                return Err(Error::invalid(format!("{name} document {} has no ground-truth table", d.id)));
            }
        }
        if d0.is_empty() || test.is_empty() {
            return Err(Error::invalid("annotated training and test splits must be non-empty"));
        }
        unlabeled.iter_mut().for_each(|d| d.gt_table = None);
        Ok(SslData {
            d0,
            val,
            test,
            unlabeled,
        })
    }
}

/// A table extractor that can be trained from scratch and run on documents.
pub trait Extractor: Sync {
    type Model: Sync;
    fn train(&self, docs: &[Document], seed: u64) -> Result<Self::Model>;
    fn predict(&self, model: &Self::Model, docs: &[Document]) -> Result<BTreeMap<String, Prediction>>;
}

impl Extractor for StubExtractor<'_> {
    type Model = StubModel;

    fn train(&self, docs: &[Document], seed: u64) -> Result<StubModel> {
        StubExtractor::train(self, docs, seed)
    }

    fn predict(&self, model: &StubModel, docs: &[Document]) -> Result<BTreeMap<String, Prediction>> {
        self.predict_all(model, docs)
    }
}

/// External extractor speaking the train/predict directory protocol.
pub struct CommandExtractor {
    pub command: CommandSpec,
    pub workdir: PathBuf,
    calls: AtomicUsize,
}

impl CommandExtractor {
    pub fn new(command: CommandSpec, workdir: PathBuf) -> Self {
        CommandExtractor {
            command,
            workdir,
            calls: AtomicUsize::new(0),
        }
    }

    fn fresh_dir(&self, what: &str) -> Result<PathBuf> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        let dir = self.workdir.join(format!("{what}-{n:04}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

impl Extractor for CommandExtractor {
    type Model = PathBuf;

    fn train(&self, docs: &[Document], seed: u64) -> Result<PathBuf> {
        let dir = self.fresh_dir("train")?;
        let train_dir = dir.join("docs");
        corpus::write_corpus(&train_dir, docs)?;
        let model = dir.join("model.json");
        let seed = seed.to_string();
        let args: [&std::ffi::OsStr; 8] = [
            "train".as_ref(),
            "--train-dir".as_ref(),
            train_dir.as_os_str(),
            "--out-model".as_ref(),
            model.as_os_str(),
            "--seed".as_ref(),
            seed.as_ref(),
            "--from-scratch".as_ref(),
        ];
        self.command.run(&args, None)?;
        if !model.exists() {
            return Err(Error::adapter(self.command.name(), "train wrote no model file"));
        }
        Ok(model)
    }

    fn predict(&self, model: &PathBuf, docs: &[Document]) -> Result<BTreeMap<String, Prediction>> {
        let dir = self.fresh_dir("predict")?;
        let input = dir.join("input");
        let out = dir.join("predictions");
        corpus::write_corpus(&input, docs)?;
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let args: [&std::ffi::OsStr; 7] = [
            "predict".as_ref(),
            "--model".as_ref(),
            model.as_os_str(),
            "--input-dir".as_ref(),
            input.as_os_str(),
            "--out-dir".as_ref(),
            out.as_os_str(),
        ];
        self.command.run(&args, None)?;
        corpus::load_predictions(&out).map_err(|e| Error::adapter(self.command.name(), e.to_string()))
    }
}

fn predict_checked<E: Extractor>(ex: &E, model: &E::Model, docs: &[Document]) -> Result<BTreeMap<String, Prediction>> {
    let preds = ex.predict(model, docs)?;
    if let Some(d) = docs.iter().find(|d| !preds.contains_key(&d.id)) {
        return Err(Error::adapter("extractor", format!("no prediction for document {}", d.id)));
    }
    Ok(preds)
}

/// Frozen scoring artifacts shared by every iteration of a run.
#[derive(Debug, Clone)]
pub struct QualityContext {
    pub lexicon: HeaderLexicon,
    pub stats: FeatureStats<f64>,
    pub model: QualityModel<f64>,
    /// Standardized base features of the annotated ground truth.
    pub train_points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityEvalRow {
    pub doc_id: String,
    pub score: f64,
    pub conf_te: f64,
    pub true_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityEval {
    pub rows: Vec<QualityEvalRow>,
    pub quality: Option<CorrelationReport<f64>>,
    pub confidence: Option<CorrelationReport<f64>>,
}

fn features_of(ctx_lex: &HeaderLexicon, cfg: &FeatureConfig, doc: &Document, t: &ExtractedTable) -> Result<BaseFeatures> {
    extract_features(doc, t, ctx_lex, cfg)
}

/// Fit lexicon, statistics and quality model on baseline predictions for the
/// annotated split; report correlations on the validation split.
pub fn fit_quality_context(
    data: &SslData,
    d0_preds: &BTreeMap<String, Prediction>,
    val_preds: &BTreeMap<String, Prediction>,
    cfg: &SslConfig,
) -> Result<(QualityContext, QualityEval)> {
    let lexicon = derive_header_lexicon(&data.d0, cfg.lexicon_min_docs);
    let labelled = |docs: &[Document], preds: &BTreeMap<String, Prediction>| -> Result<Vec<(String, BaseFeatures, [f64; 3], f64)>> {
        docs.par_iter()
            .filter_map(|d| {
                let t = preds.get(&d.id)?.extracted.as_ref()?;
                Some((d, t))
            })
            .map(|(d, t)| {
                let f = features_of(&lexicon, &cfg.features, d, t)?;
                let gt = d.gt_table.as_ref().expect("annotated");
                let f1 = grits_con(gt, Some(&t.grid))?.f1;
                Ok((d.id.clone(), f, t.confidences(), f1))
            })
            .collect()
    };
    let train_rows = labelled(&data.d0, d0_preds)?;
    let base: Vec<BaseFeatures> = train_rows.iter().map(|r| r.1).collect();
    let stats: FeatureStats<f64> = fit_stats(&base)?;
    let x: Vec<Vec<f64>> = train_rows.iter().map(|r| transform(&r.1, &stats, r.2).into_inner()).collect();
    let y: Vec<f64> = train_rows.iter().map(|r| r.3).collect();
    let mut model = train_quality_model(&x, &y, &SearchConfig { seed: cfg.seed, ..cfg.search })?;
    model.feature_stats_ref = Some(stats.version.clone());

    let train_points = data
        .d0
        .par_iter()
        .map(|d| {
            let f = extract_grid_features(d, d.gt_table.as_ref().expect("annotated"), &lexicon, &cfg.features)?;
            Ok(stats.zscores(&f))
        })
        .collect::<Result<Vec<_>>>()?;

    let val_rows = labelled(&data.val, val_preds)?;
    let rows = val_rows
        .iter()
        .map(|(id, f, c, f1)| {
            Ok(QualityEvalRow {
                doc_id: id.clone(),
                score: predict_quality(&model, &transform(f, &stats, *c))?,
                conf_te: c[2],
                true_f1: *f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = |s: Vec<f64>| -> Option<CorrelationReport<f64>> {
        let t: Vec<f64> = rows.iter().map(|r| r.true_f1).collect();
        evaluate_correlation(&s, &t).ok()
    };
    let mut quality = report(rows.iter().map(|r| r.score).collect());
    if let Some(q) = quality.as_mut() {
        q.importance = feature_importance(&model);
    }
    let confidence = report(rows.iter().map(|r| r.conf_te).collect());
    Ok((
        QualityContext {
            lexicon,
            stats,
            model,
            train_points,
        },
        QualityEval { rows, quality, confidence },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub doc_id: String,
    /// `None` for empty predictions, which are never retained.
    pub score: Option<f64>,
    pub conf_te: f64,
    pub passed: bool,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub training_size: usize,
    pub n_pseudo_labels: usize,
    pub test: IterationMetrics,
    pub unlabeled_empty_rate: f64,
    pub n_candidates: usize,
    pub n_selected: usize,
    /// Fingerprint of the pseudo-label set this iteration produced.
    pub fingerprint: String,
    #[serde(skip)]
    pub scores: Vec<ScoredPrediction>,
    #[serde(skip)]
    pub decision: Option<DiversityDecision<f64>>,
    #[serde(skip)]
    pub training_ids: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct SslState {
    pub t: usize,
    pub d0: BTreeSet<String>,
    /// Pseudo-labels for the next training round, by document id.
    pub selected: BTreeMap<String, ExtractedTable>,
    pub history: Vec<IterationRecord>,
}

impl SslState {
    pub fn new(data: &SslData) -> Self {
        SslState {
            t: 0,
            d0: data.d0.iter().map(|d| d.id.clone()).collect(),
            selected: BTreeMap::new(),
            history: Vec::new(),
        }
    }
}

/// Hex digest prefix of the sorted ids.
pub fn fingerprint<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut v: Vec<&str> = ids.into_iter().collect();
    v.sort_unstable();
    let mut h = Sha256::new();
    for id in v {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(&h.finalize()[..8])
}

fn training_set(data: &SslData, state: &SslState) -> Result<Vec<Document>> {
    let mut docs: Vec<Document> = data.d0.clone();
    for d in &data.unlabeled {
        if let Some(t) = state.selected.get(&d.id) {
            let mut p = d.clone();
            p.gt_table = Some(t.grid.clone());
            docs.push(p);
        }
    }
    if docs.len() != data.d0.len() + state.selected.len() {
        return Err(Error::invalid("selected pseudo-labels reference documents outside the unlabeled pool"));
    }
    Ok(docs)
}

struct Scored {
    rows: Vec<ScoredPrediction>,
    features: BTreeMap<String, BaseFeatures>,
}

fn score_predictions(
    data: &SslData,
    preds: &BTreeMap<String, Prediction>,
    cfg: &SslConfig,
    ctx: &QualityContext,
) -> Result<Scored> {
    let threshold = cfg.threshold();
    let scored: Vec<(ScoredPrediction, Option<BaseFeatures>)> = data
        .unlabeled
        .par_iter()
        .map(|d| {
            let p = &preds[&d.id];
            let Some(t) = p.extracted.as_ref() else {
                return Ok((
                    ScoredPrediction {
                        doc_id: d.id.clone(),
                        score: None,
                        conf_te: 0.0,
                        passed: false,
                        selected: false,
                    },
                    None,
                ));
            };
            let (score, f) = match cfg.strategy {
                Strategy::Quality => {
                    let f = features_of(&ctx.lexicon, &cfg.features, d, t)?;
                    let s = predict_quality(&ctx.model, &transform(&f, &ctx.stats, t.confidences()))?;
                    (s, Some(f))
                }
                Strategy::Confidence => (t.conf_te, None),
            };
            Ok((
                ScoredPrediction {
                    doc_id: d.id.clone(),
                    score: Some(score),
                    conf_te: t.conf_te,
                    passed: score >= threshold,
                    selected: false,
                },
                f,
            ))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(scored.len());
    let mut features = BTreeMap::new();
    for (r, f) in scored {
        if let Some(f) = f {
            features.insert(r.doc_id.clone(), f);
        }
        rows.push(r);
    }
    Ok(Scored { rows, features })
}

fn run_with_model<E: Extractor>(
    state: &SslState,
    cfg: &SslConfig,
    data: &SslData,
    ctx: &QualityContext,
    extractor: &E,
    model: &E::Model,
    training_ids: Vec<String>,
    baseline: Option<&IterationMetrics>,
) -> Result<IterationOutput> {
    let u_preds = predict_checked(extractor, model, &data.unlabeled)?;
    let test_preds = predict_checked(extractor, model, &data.test)?;
    let mut scored = score_predictions(data, &u_preds, cfg, ctx)?;

    let passed: Vec<&ScoredPrediction> = scored.rows.iter().filter(|r| r.passed).collect();
    let (chosen, decision): (BTreeSet<String>, Option<DiversityDecision<f64>>) = match cfg.strategy {
        Strategy::Confidence => (passed.iter().map(|r| r.doc_id.clone()).collect(), None),
        Strategy::Quality => {
            let candidates: Vec<(String, Vec<f64>)> = passed
                .iter()
                .map(|r| (r.doc_id.clone(), ctx.stats.zscores(&scored.features[&r.doc_id])))
                .collect();
            let d = select_diverse_subset(&ctx.train_points, &candidates, &cfg.selection)?;
            (d.selected().iter().cloned().collect(), Some(d))
        }
    };
    let n_candidates = passed.len();
    for r in &mut scored.rows {
        r.selected = chosen.contains(&r.doc_id);
    }
    let selected: BTreeMap<String, ExtractedTable> = chosen
        .iter()
        .map(|id| (id.clone(), u_preds[id].extracted.clone().expect("selected predictions are non-empty")))
        .collect();
    debug_assert!(selected.keys().all(|id| !state.d0.contains(id)));

    let mut test = evaluate(&data.test, &test_preds)?;
    if let Some(b) = baseline {
        test = test.with_baseline(b)?;
    }
    let record = IterationRecord {
        t: state.t,
        training_size: training_ids.len(),
        n_pseudo_labels: state.selected.len(),
        unlabeled_empty_rate: metrics::empty_rate(u_preds.values())?,
        test,
        n_candidates,
        n_selected: selected.len(),
        fingerprint: fingerprint(selected.keys().map(String::as_str)),
        scores: scored.rows,
        decision,
        training_ids,
    };
    let mut history = state.history.clone();
    history.push(record);
    Ok((
        SslState {
            t: state.t + 1,
            d0: state.d0.clone(),
            selected,
            history,
        },
        u_preds,
        test_preds,
    ))
}

/// One round: train on `D_0` plus the current pseudo-labels, predict, score,
/// filter, select and evaluate. On error the input state is left untouched.
pub fn run_iteration<E: Extractor>(
    state: &SslState,
    cfg: &SslConfig,
    data: &SslData,
    ctx: &QualityContext,
    extractor: &E,
) -> Result<SslState> {
    let (next, _, _) = iterate(state, cfg, data, ctx, extractor)?;
    Ok(next)
}

type IterationOutput = (SslState, BTreeMap<String, Prediction>, BTreeMap<String, Prediction>);

fn iterate<E: Extractor>(
    state: &SslState,
    cfg: &SslConfig,
    data: &SslData,
    ctx: &QualityContext,
    extractor: &E,
) -> Result<IterationOutput> {
    let train = training_set(data, state)?;
    let ids: Vec<String> = train.iter().map(|d| d.id.clone()).collect();
    let model = extractor.train(&train, cfg.seed)?;
    let baseline = state.history.first().map(|r| &r.test);
    run_with_model(state, cfg, data, ctx, extractor, &model, ids, baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslReport {
    pub strategy: Strategy,
    pub history: Vec<IterationRecord>,
    pub best_iteration: usize,
    pub baseline_f1: f64,
    pub best_f1: f64,
    /// `(earlier, later)` iterations that produced the same pseudo-label set.
    pub loop_detected: Option<(usize, usize)>,
    pub quality_eval: QualityEval,
}

/// Index of the highest test F1; ties go to the earliest iteration.
pub fn best_iteration(history: &[IterationRecord]) -> Option<usize> {
    (0..history.len()).reduce(|b, i| if history[i].test.mean_f1 > history[b].test.mean_f1 { i } else { b })
}

/// Baseline on `D_0` alone, then up to `max_iterations` rounds, stopping early
/// when a pseudo-label set repeats. Artifacts go to `out` when given.
pub fn run_ssl<E: Extractor>(
    cfg: &SslConfig,
    data: &SslData,
    extractor: &E,
    out: Option<&Path>,
) -> Result<(SslReport, QualityContext)> {
    cfg.validate()?;
    let state0 = SslState::new(data);
    let base_model = extractor.train(&data.d0, cfg.seed)?;
    let d0_preds = predict_checked(extractor, &base_model, &data.d0)?;
    let val_preds = predict_checked(extractor, &base_model, &data.val)?;
    let (ctx, quality_eval) = fit_quality_context(data, &d0_preds, &val_preds, cfg)?;
    if let Some(out) = out {
        artifacts::write_quality(out, &ctx, &quality_eval)?;
    }
    log::info!(
        "quality model fitted: val pearson r = {:?}, conf_te r = {:?}",
        quality_eval.quality.as_ref().and_then(|q| q.pearson_r),
        quality_eval.confidence.as_ref().and_then(|q| q.pearson_r)
    );

    let ids: Vec<String> = data.d0.iter().map(|d| d.id.clone()).collect();
    let (mut state, u, t) = run_with_model(&state0, cfg, data, &ctx, extractor, &base_model, ids, None)?;
    if let Some(out) = out {
        artifacts::write_iteration(out, &state, &u, &t)?;
    }
    let mut loop_detected = None;
    while state.t <= cfg.max_iterations {
        let (next, u, t) = iterate(&state, cfg, data, &ctx, extractor)?;
        state = next;
        if let Some(out) = out {
            artifacts::write_iteration(out, &state, &u, &t)?;
        }
        let last = state.history.last().expect("iteration recorded");
        log::info!(
            "iteration {}: test F1 {:.4}, empty {:.1}%, {} candidates, {} selected",
            last.t,
            last.test.mean_f1,
            last.test.empty_rate,
            last.n_candidates,
            last.n_selected
        );
        if let Some(prev) = state.history[..state.history.len() - 1].iter().find(|r| r.fingerprint == last.fingerprint) {
            log::warn!("loop detected: iteration {} repeats the pseudo-label set of iteration {}", last.t, prev.t);
            loop_detected = Some((prev.t, last.t));
            break;
        }
    }
    let best = best_iteration(&state.history).expect("baseline recorded");
    let report = SslReport {
        strategy: cfg.strategy,
        baseline_f1: state.history[0].test.mean_f1,
        best_f1: state.history[best].test.mean_f1,
        best_iteration: best,
        loop_detected,
        history: state.history,
        quality_eval,
    };
    if let Some(out) = out {
        io::write_json_atomic(&out.join("summary.json"), &report)?;
    }
    Ok((report, ctx))
}

/// Per-iteration and run-level output files.
pub mod artifacts {
    use super::*;

    pub const QUALITY_DIR: &str = "quality";
    pub const QUALITY_EVAL_CSV: &str = "quality_eval.csv";
    pub const DECISION_TRACE_CSV: &str = "decision_trace.csv";

    pub fn iteration_dir(out: &Path, t: usize) -> PathBuf {
        out.join(format!("it{t}"))
    }

    pub fn write_quality(out: &Path, ctx: &QualityContext, eval: &QualityEval) -> Result<()> {
        let dir = out.join(QUALITY_DIR);
        io::write_atomic(&dir.join("lexicon.txt"), ctx.lexicon.to_text().as_bytes())?;
        io::write_json_atomic(&dir.join("stats.json"), &ctx.stats)?;
        io::write_json_atomic(&dir.join("model.json"), &ctx.model)?;
        write_importance_csv(&dir.join("importance.csv"), &feature_importance(&ctx.model))?;
        io::write_csv_atomic(&dir.join(QUALITY_EVAL_CSV), |w| {
            w.write_record(["doc_id", "score", "conf_te", "true_f1"])?;
            for r in &eval.rows {
                w.write_record([r.doc_id.clone(), r.score.to_string(), r.conf_te.to_string(), r.true_f1.to_string()])?;
            }
            Ok(())
        })?;
        io::write_json_atomic(&dir.join("correlation.json"), eval)
    }

    pub fn write_importance_csv(path: &Path, imp: &[crate::quality::FeatureImportance<f64>]) -> Result<()> {
        io::write_csv_atomic(path, |w| {
            w.write_record(["rank", "feature", "index", "importance"])?;
            for (rank, i) in imp.iter().enumerate() {
                w.write_record([(rank + 1).to_string(), i.name.clone(), i.index.to_string(), i.importance.to_string()])?;
            }
            Ok(())
        })
    }

    pub fn write_decision_trace(path: &Path, decision: Option<&DiversityDecision<f64>>) -> Result<()> {
        io::write_csv_atomic(path, |w| {
            w.write_record(["k", "vendi", "int_div", "diversity", "chosen", "ids"])?;
            if let Some(d) = decision {
                for (i, s) in d.trace.iter().enumerate() {
                    w.write_record([
                        s.k.to_string(),
                        s.vendi.to_string(),
                        s.int_div.to_string(),
                        s.diversity.to_string(),
                        u8::from(d.best == Some(i)).to_string(),
                        s.ids.join(" "),
                    ])?;
                }
            }
            Ok(())
        })
    }

    #[derive(Serialize)]
    struct Manifest<'a> {
        t: usize,
        from_scratch: bool,
        labeled: Vec<&'a str>,
        pseudo_labeled: Vec<&'a str>,
    }

    /// Files for the latest record of `state`.
    pub fn write_iteration(
        out: &Path,
        state: &SslState,
        unlabeled_preds: &BTreeMap<String, Prediction>,
        test_preds: &BTreeMap<String, Prediction>,
    ) -> Result<()> {
        let rec = state.history.last().expect("iteration recorded");
        let dir = iteration_dir(out, rec.t);
        let (labeled, pseudo): (Vec<&str>, Vec<&str>) =
            rec.training_ids.iter().map(String::as_str).partition(|id| state.d0.contains(*id));
        io::write_json_atomic(
            &dir.join("training_manifest.json"),
            &Manifest {
                t: rec.t,
                from_scratch: true,
                labeled,
                pseudo_labeled: pseudo,
            },
        )?;
        corpus::write_predictions(&dir.join("predictions_unlabeled"), unlabeled_preds.values())?;
        corpus::write_predictions(&dir.join("predictions_test"), test_preds.values())?;
        io::write_csv_atomic(&dir.join("scores.csv"), |w| {
            w.write_record(["doc_id", "score", "conf_te", "passed", "selected"])?;
            for s in &rec.scores {
                w.write_record([
                    s.doc_id.clone(),
                    s.score.map(|v| v.to_string()).unwrap_or_default(),
                    s.conf_te.to_string(),
                    u8::from(s.passed).to_string(),
                    u8::from(s.selected).to_string(),
                ])?;
            }
            Ok(())
        })?;
        write_decision_trace(&dir.join(DECISION_TRACE_CSV), rec.decision.as_ref())?;
        metrics::write_per_doc_csv(&dir.join("per_doc.csv"), &rec.test.per_doc)?;
        io::write_json_atomic(&dir.join("metrics.json"), rec)
    }
}
