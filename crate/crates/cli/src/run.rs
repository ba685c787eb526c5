//! `run-ssl` and `report`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use tabqual::adapter::CommandSpec;
use tabqual::corpus::{load_corpus, split_corpus, Corpus, Document, SplitRatios};
use tabqual::curation::{
    curate, write_verdicts_csv, Adapters, CommandAdapter, CurationConfig, Detector, OrientationCheck, StubFallback,
    StubOrientation, StubPrimary, StubVlm, Vlm,
};
use tabqual::io;
use tabqual::ssl::{artifacts, run_ssl, CommandExtractor, SslConfig, SslData, SslReport, Strategy};
use tabqual::synth::{oracle_of, StubExtractor, StubProfile};

use crate::tables::Table;

fn default_timeout() -> u64 {
    600
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ExtractorConfig {
    /// In-process stub; the hidden truth comes from the ground truth present in the input corpora.
    Stub {
        #[serde(default)]
        profile: StubProfile,
    },
    Command {
        command: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

/// Adapter command lines; missing entries use the built-in stubs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterCommands {
    pub orientation: Option<String>,
    pub primary: Option<String>,
    pub fallback: Option<String>,
    pub vlm: Option<String>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationSection {
    pub enabled: bool,
    pub thresholds: CurationConfig,
    pub adapters: AdapterCommands,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Annotated corpus, split into the training, validation and test sets.
    pub labeled_dir: PathBuf,
    pub unlabeled_dir: PathBuf,
    #[serde(default)]
    pub splits: SplitRatios,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub ssl: SslConfig,
    #[serde(default)]
    pub curation: CurationSection,
    pub extractor: ExtractorConfig,
}

impl RunConfig {
    /// Resolve relative paths against the directory of the config file.
    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.labeled_dir, &mut self.unlabeled_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(o) = self.out_dir.as_mut().filter(|o| o.is_relative()) {
            *o = base.join(&*o);
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum StrategyArg {
    Quality,
    Confidence,
}

#[derive(Args, Debug)]
pub struct RunSslArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub confidence_threshold: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hyperparameter-search trials for the quality model.
    #[arg(long)]
    pub search_trials: Option<usize>,
    #[arg(long)]
    pub theta_high: Option<f64>,
    #[arg(long)]
    pub theta_mid: Option<f64>,
}

fn load_config(a: &RunSslArgs) -> Result<RunConfig> {
    let mut cfg: RunConfig = io::read_json(&a.config)?;
    cfg.rebase(a.config.parent().unwrap_or(Path::new(".")));
    if let Some(o) = &a.out {
        cfg.out_dir = Some(o.clone());
    }
    let s = &mut cfg.ssl;
    if let Some(v) = a.alpha {
        s.alpha = v;
    }
    if let Some(v) = a.confidence_threshold {
        s.confidence_threshold = v;
    }
    if let Some(v) = a.max_iterations {
        s.max_iterations = v;
    }
    if let Some(v) = a.strategy {
        s.strategy = match v {
            StrategyArg::Quality => Strategy::Quality,
            StrategyArg::Confidence => Strategy::Confidence,
        };
    }
    if let Some(v) = a.k_max {
        s.selection.k_max = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.search_trials {
        s.search.n_trials = v;
    }
    if let Some(v) = a.theta_high {
        cfg.curation.thresholds.theta_high = v;
    }
    if let Some(v) = a.theta_mid {
        cfg.curation.thresholds.theta_mid = v;
    }
    Ok(cfg)
}

/// Run the curation cascade with command adapters where configured.
pub fn curate_docs<'d>(
    docs: &'d [Document],
    thresholds: &CurationConfig,
    cmds: &AdapterCommands,
) -> Result<(Vec<&'d Document>, Vec<tabqual::curation::CurationVerdict>)> {
    let t = cmds.timeout_secs.unwrap_or(60);
    let mk = |line: &Option<String>| -> Result<Option<CommandAdapter>> {
        Ok(match line {
            Some(l) => Some(CommandAdapter {
                command: CommandSpec::parse(l, t)?,
            }),
            None => None,
        })
    };
    let (o, p, f, v) = (mk(&cmds.orientation)?, mk(&cmds.primary)?, mk(&cmds.fallback)?, mk(&cmds.vlm)?);
    let adapters = Adapters {
        orientation: o.as_ref().map_or(&StubOrientation as &dyn OrientationCheck, |c| c as &dyn OrientationCheck),
        primary: p.as_ref().map_or(&StubPrimary as &dyn Detector, |c| c as &dyn Detector),
        fallback: f.as_ref().map_or(&StubFallback as &dyn Detector, |c| c as &dyn Detector),
        vlm: v.as_ref().map_or(&StubVlm as &dyn Vlm, |c| c as &dyn Vlm),
    };
    Ok(curate(docs, thresholds, &adapters)?)
}

fn split_labeled(corpus: Corpus, ratios: SplitRatios, seed: u64) -> Result<(Vec<Document>, Vec<Document>, Vec<Document>)> {
    let split = split_corpus(&corpus, ratios, seed)?;
    let mut sets = (Vec::new(), Vec::new(), Vec::new());
    for d in corpus.into_docs() {
        if split.train.contains(&d.id) {
            sets.0.push(d);
        } else if split.val.contains(&d.id) {
            sets.1.push(d);
        } else {
            sets.2.push(d);
        }
    }
    Ok(sets)
}

pub fn run_ssl_cmd(a: RunSslArgs) -> Result<()> {
    let cfg = load_config(&a)?;
    cfg.ssl.validate()?;
    let labeled = load_corpus(&cfg.labeled_dir)?;
    let unlabeled = load_corpus(&cfg.unlabeled_dir)?;
    let mut oracle = oracle_of(labeled.docs());
    oracle.extend(oracle_of(unlabeled.docs()));
    let (d0, val, test) = split_labeled(labeled, cfg.splits, cfg.split_seed)?;

    let unlabeled = unlabeled.into_docs();
    let mut verdicts = None;
    let pool: Vec<Document> = if cfg.curation.enabled {
        let (kept, v) = curate_docs(&unlabeled, &cfg.curation.thresholds, &cfg.curation.adapters)?;
        log::info!("curation kept {} of {} unlabeled documents", kept.len(), unlabeled.len());
        let kept = kept.into_iter().cloned().collect();
        verdicts = Some(v);
        kept
    } else {
        unlabeled
    };
    let data = SslData::new(d0, val, test, pool)?;
    log::info!(
        "annotated {} / validation {} / test {} / unlabeled {}",
        data.d0.len(),
        data.val.len(),
        data.test.len(),
        data.unlabeled.len()
    );

    let work = tempfile::tempdir().context("creating extractor work directory")?;
    let run = |out: Option<&Path>| -> tabqual::Result<SslReport> {
        if let Some(out) = out {
            io::write_json_atomic(&out.join("config.json"), &cfg)?;
            if let Some(v) = &verdicts {
                write_verdicts_csv(&out.join("curation_verdicts.csv"), v)?;
            }
        }
        Ok(match &cfg.extractor {
            ExtractorConfig::Stub { profile } => {
                let stub = StubExtractor {
                    profile: *profile,
                    oracle: &oracle,
                };
                run_ssl(&cfg.ssl, &data, &stub, out)?.0
            }
            ExtractorConfig::Command { command, timeout_secs } => {
                let ex = CommandExtractor::new(CommandSpec::parse(command, *timeout_secs)?, work.path().to_path_buf());
                run_ssl(&cfg.ssl, &data, &ex, out)?.0
            }
        })
    };
    let report = match &cfg.out_dir {
        Some(out) => io::with_staged_dir(out, |dir| run(Some(dir)))?,
        None => run(None)?,
    };
    for r in &report.history {
        println!(
            "it{}\tf1 {:.4}\tempty {:.2}%\tcandidates {}\tselected {}",
            r.t, r.test.mean_f1, r.test.empty_rate, r.n_candidates, r.n_selected
        );
    }
    println!(
        "best iteration {} (f1 {:.4}, baseline {:.4}){}",
        report.best_iteration,
        report.best_f1,
        report.baseline_f1,
        match report.loop_detected {
            Some((a, b)) => format!("; loop detected: it{b} repeats it{a}"),
            None => String::new(),
        }
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Output directory of `run-ssl`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn report(a: ReportArgs) -> Result<()> {
    let summary: SslReport = io::read_json(&a.run.join("summary.json"))?;
    let qdir = a.run.join(artifacts::QUALITY_DIR);
    let eval_path = qdir.join(artifacts::QUALITY_EVAL_CSV);
    let eval = Table::read(&eval_path)?;
    let cols = ["doc_id", "score", "conf_te", "true_f1"]
        .iter()
        .map(|c| eval.require(c, &eval_path))
        .collect::<Result<Vec<_>>>()?;
    let mut traces: Vec<(usize, Table)> = Vec::new();
    for r in &summary.history {
        let p = artifacts::iteration_dir(&a.run, r.t).join(artifacts::DECISION_TRACE_CSV);
        traces.push((r.t, Table::read(&p)?));
    }
    if traces.is_empty() {
        bail!("{}: summary lists no iterations", a.run.display());
    }
    let importance = std::fs::read(qdir.join("importance.csv")).ok();
    io::with_staged_dir(&a.out, |dir| {
        if let Some(bytes) = &importance {
            io::write_atomic(&dir.join("importance.csv"), bytes)?;
        }
        io::write_csv_atomic(&dir.join("correlation.csv"), |w| {
            w.write_record(["doc_id", "score", "true_f1"])?;
            for row in &eval.rows {
                w.write_record([&row[cols[0]], &row[cols[1]], &row[cols[3]]])?;
            }
            Ok(())
        })?;
        io::write_csv_atomic(&dir.join("confidence_correlation.csv"), |w| {
            w.write_record(["doc_id", "conf_te", "true_f1"])?;
            for row in &eval.rows {
                w.write_record([&row[cols[0]], &row[cols[2]], &row[cols[3]]])?;
            }
            Ok(())
        })?;
        io::write_csv_atomic(&dir.join("history.csv"), |w| {
            w.write_record([
                "t",
                "mean_f1",
                "mean_precision",
                "mean_recall",
                "empty_rate",
                "net_document_change",
                "training_size",
                "n_pseudo_labels",
                "n_candidates",
                "n_selected",
                "fingerprint",
            ])?;
            for r in &summary.history {
                w.write_record([
                    r.t.to_string(),
                    r.test.mean_f1.to_string(),
                    r.test.mean_precision.to_string(),
                    r.test.mean_recall.to_string(),
                    r.test.empty_rate.to_string(),
                    r.test.net_document_change.map(|v| v.to_string()).unwrap_or_default(),
                    r.training_size.to_string(),
                    r.n_pseudo_labels.to_string(),
                    r.n_candidates.to_string(),
                    r.n_selected.to_string(),
                    r.fingerprint.clone(),
                ])?;
            }
            Ok(())
        })?;
        io::write_csv_atomic(&dir.join("decision_traces.csv"), |w| {
            let mut head = vec!["t".to_owned()];
            head.extend(traces[0].1.headers.iter().cloned());
            w.write_record(&head)?;
            for (t, table) in &traces {
                for row in &table.rows {
                    let mut rec = vec![t.to_string()];
                    rec.extend(row.iter().cloned());
                    w.write_record(rec)?;
                }
            }
            Ok(())
        })?;
        let summary_line: BTreeMap<&str, serde_json::Value> = BTreeMap::from([
            ("strategy", serde_json::to_value(summary.strategy).expect("enum serializes")),
            ("best_iteration", summary.best_iteration.into()),
            ("baseline_f1", summary.baseline_f1.into()),
            ("best_f1", summary.best_f1.into()),
            (
                "quality_pearson_r",
                summary.quality_eval.quality.as_ref().and_then(|q| q.pearson_r).into(),
            ),
            (
                "confidence_pearson_r",
                summary.quality_eval.confidence.as_ref().and_then(|q| q.pearson_r).into(),
            ),
        ]);
        io::write_json_atomic(&dir.join("report.json"), &summary_line)
    })?;
    log::info!("report written to {}", a.out.display());
    Ok(())
}
