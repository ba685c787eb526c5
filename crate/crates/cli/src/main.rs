//! `tabqual` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 adapter error.

mod run;
mod synth_cmd;
mod tables;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use tabqual::corpus::{load_corpus, load_predictions};
use tabqual::curation::{write_verdicts_csv, CurationConfig};
use tabqual::diversity::{select_diverse_subset, SelectionConfig};
use tabqual::features::{derive_header_lexicon, extract_features, FeatureConfig, HeaderLexicon, DEFAULT_MIN_DOC_COUNT};
use tabqual::io;
use tabqual::metrics::{evaluate, read_per_doc_csv, write_per_doc_csv};
use tabqual::quality::{feature_importance, predict_quality, quality_filter, train_quality_model, QualityModel, SearchConfig};
use tabqual::ssl::artifacts::{write_decision_trace, write_importance_csv};
use tabqual::transform::{fit_stats, transform, FeatureStats};

use tables::{read_features, read_keyed, read_vectors, write_features, write_ids, write_vectors, FeatureRow};

#[derive(Parser, Debug)]
#[command(name = "tabqual", version, about = "Quality-aware pseudo-label selection for table extraction")]
struct Cli {
    /// Worker threads for parallel stages (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Base features of every non-empty prediction, as CSV.
    Features(FeaturesArgs),
    /// Fit per-feature statistics on a base-feature CSV.
    FitStats {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand base features into 108-column vectors.
    Transform {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the quality regressor with seeded hyperparameter search.
    TrainQuality(TrainQualityArgs),
    /// Predict quality scores in [0, 1].
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep documents whose score is at least alpha.
    Filter {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick the most diverse subset of candidates relative to a training set.
    Diversify(DiversifyArgs),
    /// Filter an unlabeled corpus through the table-presence cascade.
    Curate(CurateArgs),
    /// Content-level precision, recall and F1 plus empty-prediction rate.
    Eval(EvalArgs),
    /// Synthetic corpora, corruptions and the stub extractor.
    #[command(subcommand)]
    Synth(synth_cmd::SynthCommand),
    /// Full self-training loop driven by a JSON config.
    RunSsl(run::RunSslArgs),
    /// Tabulate a finished run: correlation data, iteration history, decision traces.
    Report(run::ReportArgs),
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Header lexicon, one word per line; derived from the corpus ground truth when omitted.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_DOC_COUNT)]
    lexicon_min_docs: usize,
    /// Also write the lexicon that was used.
    #[arg(long)]
    write_lexicon: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainQualityArgs {
    #[arg(long)]
    vectors: PathBuf,
    /// CSV with `doc_id` and `true_f1` (or `f1`, as written by `eval`).
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional gain-importance ranking.
    #[arg(long)]
    importance: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DiversifyArgs {
    /// Base-feature CSV of the training set.
    #[arg(long)]
    train_features: PathBuf,
    /// Base-feature CSV of the candidates.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    exhaustive_max: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CurateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    theta_high: Option<f64>,
    #[arg(long)]
    theta_mid: Option<f64>,
    #[arg(long)]
    min_tokens: Option<usize>,
    /// Command adapters; the built-in stubs answer from document hints otherwise.
    #[arg(long)]
    orientation_cmd: Option<String>,
    #[arg(long)]
    primary_cmd: Option<String>,
    #[arg(long)]
    fallback_cmd: Option<String>,
    #[arg(long)]
    vlm_cmd: Option<String>,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Per-document CSV of an earlier evaluation, for the net document change.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Misuse of flags detected after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn features(a: FeaturesArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let preds = load_predictions(&a.predictions)?;
    let lexicon = match &a.lexicon {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            HeaderLexicon::from_text(&text, a.lexicon_min_docs)
        }
        None => derive_header_lexicon(corpus.docs(), a.lexicon_min_docs),
    };
    if let Some(p) = &a.write_lexicon {
        io::write_atomic(p, lexicon.to_text().as_bytes())?;
    }
    let cfg = FeatureConfig::default();
    let mut pairs = Vec::new();
    for p in preds.values() {
        let doc = corpus
            .get(&p.doc_id)
            .with_context(|| format!("prediction for unknown document {}", p.doc_id))?;
        match &p.extracted {
            Some(t) => pairs.push((doc, t)),
            None => log::info!("{}: empty prediction, no features", p.doc_id),
        }
    }
    let rows = pairs
        .par_iter()
        .map(|(d, t)| {
            Ok(FeatureRow {
                doc_id: d.id.clone(),
                base: extract_features(d, t, &lexicon, &cfg)?,
                confs: t.confidences(),
            })
        })
        .collect::<tabqual::Result<Vec<_>>>()?;
    write_features(&a.out, &rows)?;
    log::info!("wrote features of {} predictions", rows.len());
    Ok(())
}

fn fit_stats_cmd(features: PathBuf, out: PathBuf) -> Result<()> {
    let rows = read_features(&features)?;
    let base: Vec<_> = rows.iter().map(|r| r.base).collect();
    let stats: FeatureStats<f64> = fit_stats(&base)?;
    io::write_json_atomic(&out, &stats)?;
    Ok(())
}

fn transform_cmd(features: PathBuf, stats: PathBuf, out: PathBuf) -> Result<()> {
    let rows = read_features(&features)?;
    let stats: FeatureStats<f64> = io::read_json(&stats)?;
    let vectors: Vec<_> = rows
        .iter()
        .map(|r| (r.doc_id.clone(), transform(&r.base, &stats, r.confs)))
        .collect();
    write_vectors(&out, &vectors)
}

fn train_quality(a: TrainQualityArgs) -> Result<()> {
    let vectors = read_vectors(&a.vectors)?;
    let labels = read_keyed(&a.labels, &["true_f1", "f1"])?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (id, v) in vectors {
        let f1 = labels.get(&id).with_context(|| format!("no label for {id}"))?;
        x.push(v.into_inner());
        y.push(*f1);
    }
    let mut search = SearchConfig {
        seed: a.seed,
        ..Default::default()
    };
    if let Some(t) = a.trials {
        search.n_trials = t;
    }
    if let Some(f) = a.folds {
        search.folds = f;
    }
    let model = train_quality_model(&x, &y, &search)?;
    if let Some(s) = &model.search {
        log::info!("best trial {} with cross-validated R^2 {:.4}", s.best_trial, s.cv_r2);
    }
    io::write_json_atomic(&a.out, &model)?;
    if let Some(p) = &a.importance {
        write_importance_csv(p, &feature_importance(&model))?;
    }
    Ok(())
}

fn score(model: PathBuf, vectors: PathBuf, out: PathBuf) -> Result<()> {
    let model: QualityModel<f64> = io::read_json(&model)?;
    model.check_version()?;
    let rows = read_vectors(&vectors)?;
    let scores = rows
        .iter()
        .map(|(id, v)| Ok((id.clone(), predict_quality(&model, v)?)))
        .collect::<tabqual::Result<Vec<_>>>()?;
    io::write_csv_atomic(&out, |w| {
        w.write_record(["doc_id", "score"])?;
        for (id, s) in &scores {
            w.write_record([id.clone(), s.to_string()])?;
        }
        Ok(())
    })?;
    Ok(())
}

fn filter(scores: PathBuf, alpha: f64, out: PathBuf) -> Result<()> {
    let scored: Vec<(String, f64)> = read_keyed(&scores, &["score"])?.into_iter().collect();
    let kept = quality_filter(&scored, alpha)?;
    let by_id: BTreeMap<&str, f64> = scored.iter().map(|(i, s)| (i.as_str(), *s)).collect();
    io::write_csv_atomic(&out, |w| {
        w.write_record(["doc_id", "score"])?;
        for id in &kept {
            w.write_record([id.to_string(), by_id[id].to_string()])?;
        }
        Ok(())
    })?;
    log::info!("kept {} of {} at alpha {alpha}", kept.len(), scored.len());
    Ok(())
}

fn diversify(a: DiversifyArgs) -> Result<()> {
    let stats: FeatureStats<f64> = io::read_json(&a.stats)?;
    let train: Vec<Vec<f64>> = read_features(&a.train_features)?
        .iter()
        .map(|r| stats.zscores(&r.base))
        .collect();
    let candidates: Vec<(String, Vec<f64>)> = read_features(&a.candidates)?
        .iter()
        .map(|r| (r.doc_id.clone(), stats.zscores(&r.base)))
        .collect();
    let mut cfg = SelectionConfig::default();
    if let Some(k) = a.k_max {
        cfg.k_max = k;
    }
    if let Some(e) = a.exhaustive_max {
        cfg.exhaustive_max = e;
    }
    let decision = select_diverse_subset(&train, &candidates, &cfg)?;
    let selected: Vec<&str> = decision.selected().iter().map(String::as_str).collect();
    io::with_staged_dir(&a.out, |dir| {
        write_decision_trace(&dir.join("decision_trace.csv"), Some(&decision))?;
        io::write_json_atomic(&dir.join("decision.json"), &decision)?;
        write_ids(&dir.join("selected.txt"), &selected)
    })?;
    log::info!("selected {} of {} candidates", selected.len(), candidates.len());
    Ok(())
}

fn curate_cmd(a: CurateArgs, workers: usize) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let mut cfg = CurationConfig::default();
    if let Some(v) = a.theta_high {
        cfg.theta_high = v;
    }
    if let Some(v) = a.theta_mid {
        cfg.theta_mid = v;
    }
    if let Some(v) = a.min_tokens {
        cfg.min_tokens = v;
    }
    cfg.fan_out = cfg.fan_out.min(workers).max(1);
    let cmds = run::AdapterCommands {
        orientation: a.orientation_cmd,
        primary: a.primary_cmd,
        fallback: a.fallback_cmd,
        vlm: a.vlm_cmd,
        timeout_secs: Some(a.timeout_secs),
    };
    let (kept, verdicts) = run::curate_docs(corpus.docs(), &cfg, &cmds)?;
    let ids: Vec<&str> = kept.iter().map(|d| d.id.as_str()).collect();
    io::with_staged_dir(&a.out, |dir| {
        write_verdicts_csv(&dir.join("verdicts.csv"), &verdicts)?;
        write_ids(&dir.join("kept.txt"), &ids)
    })?;
    println!("kept {} of {} documents", kept.len(), corpus.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let preds = load_predictions(&a.predictions)?;
    let mut metrics = evaluate(corpus.docs(), &preds)?;
    if let Some(b) = &a.baseline {
        let before: BTreeMap<String, f64> = read_per_doc_csv(b)?.into_iter().map(|d| (d.doc_id, d.f1)).collect();
        metrics.net_document_change = Some(tabqual::metrics::net_document_change(&before, &metrics.f1_by_doc())?);
    }
    io::with_staged_dir(&a.out, |dir| {
        write_per_doc_csv(&dir.join("per_doc.csv"), &metrics.per_doc)?;
        io::write_json_atomic(&dir.join("metrics.json"), &metrics)
    })?;
    println!(
        "docs {}  precision {:.4}  recall {:.4}  f1 {:.4}  empty {:.2}%{}",
        metrics.n_docs,
        metrics.mean_precision,
        metrics.mean_recall,
        metrics.mean_f1,
        metrics.empty_rate,
        metrics
            .net_document_change
            .map(|c| format!("  net change {c:+.2}%"))
            .unwrap_or_default()
    );
    Ok(())
}

fn dispatch(cli: Cli, workers: usize) -> Result<()> {
    match cli.command {
        Command::Features(a) => features(a),
        Command::FitStats { features, out } => fit_stats_cmd(features, out),
        Command::Transform { features, stats, out } => transform_cmd(features, stats, out),
        Command::TrainQuality(a) => train_quality(a),
        Command::Score { model, vectors, out } => score(model, vectors, out),
        Command::Filter { scores, alpha, out } => filter(scores, alpha, out),
        Command::Diversify(a) => diversify(a),
        Command::Curate(a) => curate_cmd(a, workers),
        Command::Eval(a) => eval(a),
        Command::Synth(c) => synth_cmd::run(c),
        Command::RunSsl(a) => run::run_ssl_cmd(a),
        Command::Report(a) => run::report(a),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    let adapter = e
        .chain()
        .any(|c| c.downcast_ref::<tabqual::Error>().is_some_and(tabqual::Error::is_adapter));
    if adapter {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "warn" } else { "info" }))
        .format_timestamp(None)
        .init();
    let result = (|| -> Result<()> {
        let workers = match cli.workers {
            Some(0) => bail!(UsageError("--workers must be at least 1".into())),
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("configuring worker threads")?;
        dispatch(cli, workers)
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
