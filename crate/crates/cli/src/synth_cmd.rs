//! `synth` subcommands: corpus generation, corruption and the stub extractor.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tabqual::corpus::{load_corpus, write_corpus, write_predictions, Prediction, TableGrid};
use tabqual::io;
use tabqual::synth::{
    corrupt, generate_corpus, oracle_of, random_kind, Corruption, CorruptionKind, StubExtractor, StubModel,
    StubProfile, SynthSpec,
};

#[derive(Subcommand, Debug)]
pub enum SynthCommand {
    /// Generate documents with ground-truth tables.
    Generate(GenerateArgs),
    /// Turn ground-truth tables into degraded predictions.
    Corrupt(CorruptArgs),
    /// Deterministic extractor speaking the train/predict adapter protocol.
    StubExtractor(StubArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_docs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Start from a JSON generation spec; flags override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub id_prefix: Option<String>,
    /// Attach answers for the built-in curation stubs.
    #[arg(long)]
    pub hints: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum KindArg {
    Random,
    DropColumn,
    DropRow,
    MergeRows,
    SplitRow,
    ShiftTableBbox,
    BlankCells,
    GarbleText,
}

impl KindArg {
    fn fixed(self) -> Option<CorruptionKind> {
        Some(match self {
            KindArg::Random => return None,
            KindArg::DropColumn => CorruptionKind::DropColumn,
            KindArg::DropRow => CorruptionKind::DropRow,
            KindArg::MergeRows => CorruptionKind::MergeRows,
            KindArg::SplitRow => CorruptionKind::SplitRow,
            KindArg::ShiftTableBbox => CorruptionKind::ShiftTableBbox,
            KindArg::BlankCells => CorruptionKind::BlankCells,
            KindArg::GarbleText => CorruptionKind::GarbleText,
        })
    }
}

#[derive(Args, Debug)]
pub struct CorruptArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "random")]
    pub kind: KindArg,
    /// Fixed severity in [0, 1]; drawn uniformly per document when omitted.
    #[arg(long)]
    pub severity: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.15)]
    pub conf_noise: f64,
}

#[derive(Args, Debug)]
pub struct StubArgs {
    /// Corpus holding the hidden ground truth for prediction and label grading.
    #[arg(long)]
    pub oracle_dir: Option<PathBuf>,
    /// JSON error profile used by `train`.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Ignore the training set size (every model behaves the same).
    #[arg(long)]
    pub frozen: bool,
    #[command(subcommand)]
    pub action: StubAction,
}

#[derive(Subcommand, Debug)]
pub enum StubAction {
    Train {
        #[arg(long)]
        train_dir: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Accepted for protocol compatibility; the stub always starts fresh.
        #[arg(long)]
        from_scratch: bool,
    },
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Model file of the stub: the profile travels with the fitted state.
#[derive(Serialize, Deserialize)]
struct StubModelFile {
    profile: StubProfile,
    model: StubModel,
}

pub fn run(cmd: SynthCommand) -> Result<()> {
    match cmd {
        SynthCommand::Generate(a) => generate(a),
        SynthCommand::Corrupt(a) => corrupt_cmd(a),
        SynthCommand::StubExtractor(a) => stub(a),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => io::read_json(p)?,
        None => SynthSpec::default(),
    };
    if let Some(n) = a.n_docs {
        spec.n_docs = n;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(p) = a.id_prefix {
        spec.id_prefix = p;
    }
    spec.adapter_hints |= a.hints;
    let docs = generate_corpus(&spec)?;
    io::with_staged_dir(&a.out, |dir| write_corpus(dir, &docs))?;
    log::info!("wrote {} documents to {}", docs.len(), a.out.display());
    Ok(())
}

fn corrupt_cmd(a: CorruptArgs) -> Result<()> {
    if let Some(s) = a.severity {
        if !(0.0..=1.0).contains(&s) {
            bail!("severity {s} outside [0, 1]");
        }
    }
    let corpus = load_corpus(&a.corpus)?;
    let mut preds = Vec::new();
    for (i, d) in corpus.docs().iter().enumerate() {
        let gt = d
            .gt_table
            .as_ref()
            .with_context(|| format!("document {} has no ground-truth table", d.id))?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        rng.set_stream(i as u64);
        let kind = a.kind.fixed().unwrap_or_else(|| random_kind(gt, &mut rng));
        let severity = a.severity.unwrap_or_else(|| rng.random());
        let extracted = corrupt(gt, &Corruption { kind, severity }, rng.random(), a.conf_noise)
            .with_context(|| format!("document {}", d.id))?;
        preds.push(Prediction {
            doc_id: d.id.clone(),
            extracted: Some(extracted),
        });
    }
    io::with_staged_dir(&a.out, |dir| write_predictions(dir, &preds))?;
    log::info!("wrote {} predictions to {}", preds.len(), a.out.display());
    Ok(())
}

fn load_oracle(dir: Option<&Path>) -> Result<BTreeMap<String, TableGrid>> {
    match dir {
        Some(d) => Ok(oracle_of(load_corpus(d)?.docs())),
        None => Ok(BTreeMap::new()),
    }
}

fn stub(a: StubArgs) -> Result<()> {
    let oracle = load_oracle(a.oracle_dir.as_deref())?;
    match a.action {
        StubAction::Train {
            train_dir,
            out_model,
            seed,
            from_scratch: _,
        } => {
            let mut profile: StubProfile = match &a.profile {
                Some(p) => io::read_json(p)?,
                None => StubProfile::default(),
            };
            profile.frozen |= a.frozen;
            let docs = load_corpus(&train_dir)?.into_docs();
            let model = StubExtractor {
                profile,
                oracle: &oracle,
            }
            .train(&docs, seed)?;
            log::info!(
                "stub trained on {} documents (effective size {:.1}, mean severity {:.3})",
                model.n_docs,
                model.effective_size,
                model.mean_severity
            );
            io::write_json_atomic(&out_model, &StubModelFile { profile, model })?;
        }
        StubAction::Predict {
            model,
            input_dir,
            out_dir,
        } => {
            let file: StubModelFile = io::read_json(&model)?;
            let docs = load_corpus(&input_dir)?.into_docs();
            let preds = StubExtractor {
                profile: file.profile,
                oracle: &oracle,
            }
            .predict_all(&file.model, &docs)?;
            write_predictions(&out_dir, preds.values())?;
        }
    }
    Ok(())
}
