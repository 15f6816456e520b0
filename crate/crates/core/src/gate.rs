//! The local-to-global NLI filter and the model-as-judge quality audit.
//!
//! Local filtering scores the source passage's entailment of `question ⊕ " "
//! ⊕ answer` and keeps examples strictly above the local threshold. Global
//! filtering retrieves the top-k passages for the question, max-pools their
//! entailment scores, and applies the global threshold. The stages run in
//! sequence: an example failing locally never costs a retrieval.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{Passage, SyntheticExample};
use crate::index::{self, IndexSnapshot};
use crate::lang::LangRules;
use crate::svc::{Client, JudgeFacet, JudgeInput, SvcError};

#[derive(Debug, Error)]
pub enum GateError {
    #[error("unknown passage id: {0}")]
    UnknownPassage(String),
    #[error(transparent)]
    Service(#[from] SvcError),
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
    #[error("empty sample")]
    EmptySample,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    pub local_threshold: f64,
    pub global_threshold: f64,
    pub global_k: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            local_threshold: 0.5,
            global_threshold: 0.8,
            global_k: 10,
        }
    }
}

/// Per-passage entailment scores backing a global-filter decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntailmentScores {
    pub per_passage: Vec<(String, f64)>,
}

impl EntailmentScores {
    pub fn max(&self) -> f64 {
        self.per_passage
            .iter()
            .map(|(_, s)| *s)
            .fold(0.0, f64::max)
    }
}

/// Passage text lookup used for entailment premises.
pub trait PassageTexts {
    fn text_of(&self, id: &str) -> Option<&str>;
}

impl PassageTexts for BTreeMap<String, Passage> {
    fn text_of(&self, id: &str) -> Option<&str> {
        self.get(id).map(|p| p.text.as_str())
    }
}

fn hypothesis(ex: &SyntheticExample) -> String {
    format!("{} {}", ex.question, ex.answer)
}

/// Entailment of the example by its own source passage. Keeps iff the score
/// strictly exceeds the local threshold.
pub fn local_filter(
    ex: &SyntheticExample,
    source_text: &str,
    nli: &Client,
    cfg: &FilterConfig,
) -> Result<(bool, f64), GateError> {
    let scores = nli.nli(source_text, &hypothesis(ex))?;
    let score = scores.entail;
    Ok((score > cfg.local_threshold, score))
}

/// Max-pooled entailment over the top-k retrieved passages. Empty retrieval
/// drops the example with a diagnostic.
pub fn global_filter(
    ex: &SyntheticExample,
    snapshot: &IndexSnapshot,
    passages: &dyn PassageTexts,
    embedding: &Client,
    nli: &Client,
    cfg: &FilterConfig,
    rules: &LangRules,
) -> Result<(bool, f64, EntailmentScores), GateError> {
    let query = index::format_query(&ex.question, &ex.language, rules)?;
    let vectors = embedding.embed(std::slice::from_ref(&query))?;
    let result = index::search(snapshot, &vectors[0], cfg.global_k.max(1))?;
    if result.hits.is_empty() {
        log::warn!("example {}: empty retrieval, dropping", ex.id);
        return Ok((false, 0.0, EntailmentScores { per_passage: vec![] }));
    }
    let hyp = hypothesis(ex);
    let mut per_passage = Vec::with_capacity(result.hits.len());
    for hit in &result.hits {
        let text = passages
            .text_of(&hit.id)
            .ok_or_else(|| GateError::UnknownPassage(hit.id.clone()))?;
        let scores = nli.nli(text, &hyp)?;
        per_passage.push((hit.id.clone(), scores.entail));
    }
    let scores = EntailmentScores { per_passage };
    let score = scores.max();
    Ok((score > cfg.global_threshold, score, scores))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GateCounts {
    pub attempted: usize,
    pub local_pass: usize,
    pub retained: usize,
    pub success_rate: Option<f64>,
}

impl GateCounts {
    fn finish(&mut self) {
        self.success_rate = if self.attempted > 0 {
            Some(self.retained as f64 / self.attempted as f64)
        } else {
            None
        };
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub attempted: usize,
    pub local_pass: usize,
    pub retained: usize,
    /// retained / attempted; null for an empty batch.
    pub success_rate: Option<f64>,
    pub undecided: Vec<String>,
    pub per_language: BTreeMap<String, GateCounts>,
}

/// Dependencies for a gating run.
pub struct GateDeps<'a> {
    pub nli: &'a Client,
    pub embedding: &'a Client,
    pub snapshot: Arc<IndexSnapshot>,
    pub passages: &'a (dyn PassageTexts + Sync),
    pub rules: &'a LangRules,
    /// Worker threads; service in-flight caps still bound outstanding calls.
    pub workers: usize,
}

enum Verdict {
    Retained(SyntheticExample),
    LocalFail,
    GlobalFail,
    Undecided,
}

/// Run local-then-global filtering over a batch.
///
/// Examples are scored independently (concurrently up to `deps.workers`);
/// the retained set and report are folded over ids in ascending order, so
/// output is independent of batch order and scheduling.
pub fn run_gate(
    batch: &[SyntheticExample],
    deps: &GateDeps<'_>,
    cfg: &FilterConfig,
) -> Result<(Vec<SyntheticExample>, FilterReport), GateError> {
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|a, b| batch[*a].id.cmp(&batch[*b].id));

    let results: Vec<Mutex<Option<Verdict>>> =
        (0..batch.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = deps.workers.max(1).min(batch.len().max(1));

    let score_one = |ex: &SyntheticExample| -> Verdict {
        let Some(source_text) = deps.passages.text_of(&ex.source_passage_id) else {
            log::warn!("example {}: unknown source passage {}", ex.id, ex.source_passage_id);
            return Verdict::Undecided;
        };
        let (local_keep, local_score) = match local_filter(ex, source_text, deps.nli, cfg) {
            Ok(outcome) => outcome,
            Err(e) => {
                log::warn!("example {}: local filter undecided: {e}", ex.id);
                return Verdict::Undecided;
            }
        };
        let mut ex = ex.clone();
        ex.local_score = Some(local_score);
        if !local_keep {
            return Verdict::LocalFail;
        }
        match global_filter(
            &ex,
            &deps.snapshot,
            deps.passages,
            deps.embedding,
            deps.nli,
            cfg,
            deps.rules,
        ) {
            Ok((true, score, _)) => {
                ex.global_score = Some(score);
                Verdict::Retained(ex)
            }
            Ok((false, _, _)) => Verdict::GlobalFail,
            Err(e) => {
                log::warn!("example {}: global filter undecided: {e}", ex.id);
                Verdict::Undecided
            }
        }
    };

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= batch.len() {
                    break;
                }
                let verdict = score_one(&batch[i]);
                *results[i].lock().expect("gate result poisoned") = Some(verdict);
            });
        }
    });

    let mut retained = Vec::new();
    let mut report = FilterReport {
        attempted: batch.len(),
        ..Default::default()
    };
    for &i in &order {
        let verdict = results[i]
            .lock()
            .expect("gate result poisoned")
            .take()
            .expect("every example scored");
        let lang = report
            .per_language
            .entry(batch[i].language.clone())
            .or_default();
        lang.attempted += 1;
        match verdict {
            Verdict::Retained(ex) => {
                report.local_pass += 1;
                report.retained += 1;
                lang.local_pass += 1;
                lang.retained += 1;
                retained.push(ex);
            }
            Verdict::GlobalFail => {
                report.local_pass += 1;
                lang.local_pass += 1;
            }
            Verdict::LocalFail => {}
            Verdict::Undecided => report.undecided.push(batch[i].id.clone()),
        }
    }
    report.success_rate = if report.attempted > 0 {
        Some(report.retained as f64 / report.attempted as f64)
    } else {
        None
    };
    for counts in report.per_language.values_mut() {
        counts.finish();
    }
    Ok((retained, report))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FacetStats {
    /// Counts of ratings 0, 1, 2.
    pub histogram: [usize; 3],
    pub mean: Option<f64>,
    /// Unparsable judge responses, excluded from the mean.
    pub errors: usize,
}

impl FacetStats {
    fn add(&mut self, rating: u8) {
        self.histogram[rating as usize] += 1;
    }

    fn finish(&mut self) {
        let n: usize = self.histogram.iter().sum();
        self.mean = if n > 0 {
            let total: usize = self
                .histogram
                .iter()
                .enumerate()
                .map(|(rating, count)| rating * count)
                .sum();
            Some(total as f64 / n as f64)
        } else {
            None
        };
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LanguageAudit {
    pub fluency: FacetStats,
    pub relevance: FacetStats,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub per_language: BTreeMap<String, LanguageAudit>,
}

/// Rate a sample on fluency and relevance with the judge client, per
/// language. Parse failures are counted separately, never folded into means.
pub fn quality_audit(
    sample: &[SyntheticExample],
    judge: &Client,
    passages: &dyn PassageTexts,
) -> Result<AuditReport, GateError> {
    if sample.is_empty() {
        return Err(GateError::EmptySample);
    }
    let mut report = AuditReport::default();
    for ex in sample {
        let paragraph = passages
            .text_of(&ex.source_passage_id)
            .ok_or_else(|| GateError::UnknownPassage(ex.source_passage_id.clone()))?;
        let input = JudgeInput {
            question: &ex.question,
            answer: &ex.answer,
            paragraph,
        };
        let audit = report.per_language.entry(ex.language.clone()).or_default();
        for (facet, stats) in [
            (JudgeFacet::Fluency, &mut audit.fluency),
            (JudgeFacet::Relevance, &mut audit.relevance),
        ] {
            match judge.judge(&input, facet) {
                Ok(rating) => stats.add(rating),
                Err(SvcError::JudgeParse { raw }) => {
                    log::warn!("example {}: unparsable {facet:?} rating: {raw:?}", ex.id);
                    stats.errors += 1;
                }
                Err(other) => return Err(other.into()),
            }
        }
    }
    for audit in report.per_language.values_mut() {
        audit.fluency.finish();
        audit.relevance.finish();
    }
    Ok(report)
}
