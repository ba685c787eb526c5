//! Cascade that decides which unlabeled pages are worth pseudo-labeling:
//! empty-page check, orientation check, primary table detector, fallback
//! detector confidence and a yes/no vision-language question.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::CommandSpec;
use crate::corpus::{Document, Orientation};
use crate::error::{Error, Result};
use crate::features::token_ink;
use crate::io;

/// Prompt sent to the vision-language adapter, verbatim.
pub const VLM_PROMPT: &str = "Is there a table of items in the image? Respond only with True or False.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    pub theta_high: f64,
    pub theta_mid: f64,
    /// Pages with fewer tokens are empty.
    pub min_tokens: usize,
    /// Pages whose token area covers less than this fraction are empty.
    pub min_ink_fraction: f64,
    /// Maximum number of documents in flight at once.
    pub fan_out: usize,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            theta_high: 0.95,
            theta_mid: 0.5,
            min_tokens: 5,
            min_ink_fraction: 0.001,
            fan_out: 4,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.theta_mid && self.theta_mid < self.theta_high && self.theta_high <= 1.0) {
            return Err(Error::invalid(format!(
                "need 0 <= theta_mid < theta_high <= 1, got {} and {}",
                self.theta_mid, self.theta_high
            )));
        }
        if self.fan_out == 0 {
            return Err(Error::invalid("fan_out must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub table_found: bool,
    pub confidence: f64,
}

pub trait Detector: Sync {
    fn detect(&self, doc: &Document) -> Result<Detection>;
}

pub trait Vlm: Sync {
    /// Raw answer to `prompt` about the document image.
    fn ask(&self, doc: &Document, prompt: &str) -> Result<String>;
}

pub trait OrientationCheck: Sync {
    fn is_upright(&self, doc: &Document) -> Result<bool>;
}

pub struct Adapters<'a> {
    pub orientation: &'a dyn OrientationCheck,
    pub primary: &'a dyn Detector,
    pub fallback: &'a dyn Detector,
    pub vlm: &'a dyn Vlm,
}

/// Stub orientation check: reads the document's `orientation` field (upright when absent).
pub struct StubOrientation;

/// Stub primary detector: reads `adapter_hints.primary_table_found` (false when absent).
pub struct StubPrimary;

/// Stub fallback detector: reads `adapter_hints.fallback_confidence` (0 when absent).
pub struct StubFallback;

/// Stub VLM: reads `adapter_hints.vlm_answer` ("False" when absent).
pub struct StubVlm;

fn stub_fail(doc: &Document, which: &str) -> Result<()> {
    if doc.adapter_hints.as_ref().is_some_and(|h| h.fail) {
        return Err(Error::adapter(which, format!("configured failure for {}", doc.id)));
    }
    Ok(())
}

impl OrientationCheck for StubOrientation {
    fn is_upright(&self, doc: &Document) -> Result<bool> {
        stub_fail(doc, "stub-orientation")?;
        Ok(doc.orientation.unwrap_or(Orientation::Upright) == Orientation::Upright)
    }
}

impl Detector for StubPrimary {
    fn detect(&self, doc: &Document) -> Result<Detection> {
        stub_fail(doc, "stub-primary")?;
        let found = doc.adapter_hints.as_ref().and_then(|h| h.primary_table_found).unwrap_or(false);
        Ok(Detection {
            table_found: found,
            confidence: if found { 1.0 } else { 0.0 },
        })
    }
}

impl Detector for StubFallback {
    fn detect(&self, doc: &Document) -> Result<Detection> {
        stub_fail(doc, "stub-fallback")?;
        let c = doc.adapter_hints.as_ref().and_then(|h| h.fallback_confidence).unwrap_or(0.0);
        Ok(Detection {
            table_found: c > 0.0,
            confidence: c,
        })
    }
}

impl Vlm for StubVlm {
    fn ask(&self, doc: &Document, _prompt: &str) -> Result<String> {
        stub_fail(doc, "stub-vlm")?;
        Ok(doc
            .adapter_hints
            .as_ref()
            .and_then(|h| h.vlm_answer.clone())
            .unwrap_or_else(|| "False".into()))
    }
}

/// External adapter: the document is written to a temporary JSON file whose
/// path is the command's sole extra argument; the reply is one JSON line.
pub struct CommandAdapter {
    pub command: CommandSpec,
}

impl CommandAdapter {
    fn call<T: serde::de::DeserializeOwned>(&self, doc: &Document, stdin: Option<&str>) -> Result<T> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let path = dir.path().join(format!("{}.json", sanitize(&doc.id)));
        io::write_json_atomic(&path, doc)?;
        self.command.run_json(&[path.as_os_str()], stdin)
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[derive(Deserialize)]
struct OrientationReply {
    upright: bool,
}

#[derive(Deserialize)]
struct VlmReply {
    answer: String,
}

impl OrientationCheck for CommandAdapter {
    fn is_upright(&self, doc: &Document) -> Result<bool> {
        Ok(self.call::<OrientationReply>(doc, None)?.upright)
    }
}

impl Detector for CommandAdapter {
    fn detect(&self, doc: &Document) -> Result<Detection> {
        let d: Detection = self.call(doc, None)?;
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(Error::adapter(
                self.command.name(),
                format!("confidence {} outside [0, 1]", d.confidence),
            ));
        }
        Ok(d)
    }
}

impl Vlm for CommandAdapter {
    fn ask(&self, doc: &Document, prompt: &str) -> Result<String> {
        Ok(self.call::<VlmReply>(doc, Some(prompt))?.answer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Empty,
    Orientation,
    PrimaryDetector,
    FallbackHigh,
    Vlm,
    BelowMid,
    AdapterError,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Empty => "empty",
            Stage::Orientation => "orientation",
            Stage::PrimaryDetector => "primary_detector",
            Stage::FallbackHigh => "fallback_high",
            Stage::Vlm => "vlm",
            Stage::BelowMid => "below_mid",
            Stage::AdapterError => "adapter_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationVerdict {
    pub doc_id: String,
    pub kept: bool,
    pub stage: Stage,
    pub fallback_confidence: Option<f64>,
    /// Adapter error message for `adapter_error` verdicts.
    pub detail: Option<String>,
}

/// Fewer than `min_tokens` tokens, or token area below `min_ink_fraction` of the page.
pub fn is_empty_page(doc: &Document, min_tokens: usize, min_ink_fraction: f64) -> bool {
    if doc.tokens.len() < min_tokens {
        return true;
    }
    let page = doc.page.width * doc.page.height;
    token_ink(&doc.tokens) < min_ink_fraction * page
}

fn cascade(doc: &Document, cfg: &CurationConfig, ad: &Adapters) -> Result<(bool, Stage, Option<f64>)> {
    if is_empty_page(doc, cfg.min_tokens, cfg.min_ink_fraction) {
        return Ok((false, Stage::Empty, None));
    }
    if !ad.orientation.is_upright(doc)? {
        return Ok((false, Stage::Orientation, None));
    }
    if ad.primary.detect(doc)?.table_found {
        return Ok((true, Stage::PrimaryDetector, None));
    }
    let conf = ad.fallback.detect(doc)?.confidence;
    if conf >= cfg.theta_high {
        return Ok((true, Stage::FallbackHigh, Some(conf)));
    }
    if conf > cfg.theta_mid {
        let answer = ad.vlm.ask(doc, VLM_PROMPT)?;
        return Ok((answer == "True", Stage::Vlm, Some(conf)));
    }
    Ok((false, Stage::BelowMid, Some(conf)))
}

/// Run the cascade on every document. Adapter failures discard the document
/// (stage `adapter_error`). Verdicts are sorted by document id.
pub fn curate<'d>(
    docs: &'d [Document],
    config: &CurationConfig,
    adapters: &Adapters,
) -> Result<(Vec<&'d Document>, Vec<CurationVerdict>)> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.fan_out)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let mut verdicts: Vec<(usize, CurationVerdict)> = pool.install(|| {
        docs.par_iter()
            .enumerate()
            .map(|(i, d)| {
                let v = match cascade(d, config, adapters) {
                    Ok((kept, stage, fallback_confidence)) => CurationVerdict {
                        doc_id: d.id.clone(),
                        kept,
                        stage,
                        fallback_confidence,
                        detail: None,
                    },
                    Err(e) if e.is_adapter() => {
                        log::warn!("discarding {}: {e}", d.id);
                        CurationVerdict {
                            doc_id: d.id.clone(),
                            kept: false,
                            stage: Stage::AdapterError,
                            fallback_confidence: None,
                            detail: Some(e.to_string()),
                        }
                    }
                    Err(e) => return Err(e),
                };
                Ok((i, v))
            })
            .collect::<Result<_>>()
    })?;
    verdicts.sort_by(|a, b| a.1.doc_id.cmp(&b.1.doc_id));
    let kept = verdicts.iter().filter(|(_, v)| v.kept).map(|&(i, _)| &docs[i]).collect();
    Ok((kept, verdicts.into_iter().map(|(_, v)| v).collect()))
}

pub fn write_verdicts_csv(path: &Path, verdicts: &[CurationVerdict]) -> Result<()> {
    io::write_csv_atomic(path, |w| {
        w.write_record(["doc_id", "decision", "stage", "fallback_confidence", "detail"])?;
        for v in verdicts {
            w.write_record([
                v.doc_id.as_str(),
                if v.kept { "kept" } else { "discarded" },
                v.stage.as_str(),
                &v.fallback_confidence.map(|c| c.to_string()).unwrap_or_default(),
                v.detail.as_deref().unwrap_or(""),
            ])?;
        }
        Ok(())
    })
}
