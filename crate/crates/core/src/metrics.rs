//! Retrieval and QA evaluation metrics.
//!
//! Retrieval: token-budget recall (a hit when any gold answer appears within
//! the first N tokens of retrieved passages), any-language top-k recall, and
//! nDCG with graded relevance. QA: exact match, token-multiset F1, and
//! smoothed sentence BLEU, all computed per language after NFC, lowercase,
//! and punctuation-strip normalization, then macro-averaged unweighted across
//! languages.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::lang::{nfc_contains, normalize_for_qa, LangRules};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("query {0} has no gold answers and no relevant passages")]
    EmptyJudgment(String),
    #[error("query {0} has no relevant passages for nDCG")]
    NoRelevantPassages(String),
    #[error("unknown passage id: {0}")]
    UnknownPassage(String),
    #[error("golds list is empty")]
    NoGolds,
}

/// Ranked passages for one query, scores non-increasing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    /// (passage id, score), best first.
    pub ranked: Vec<(String, f64)>,
}

/// Per-passage metadata the metrics need from the corpus.
#[derive(Debug, Clone)]
pub struct PassageInfo {
    pub text: String,
    pub token_count: usize,
    pub language: String,
}

pub trait PassageLookup {
    fn passage(&self, id: &str) -> Option<&PassageInfo>;
}

impl PassageLookup for BTreeMap<String, PassageInfo> {
    fn passage(&self, id: &str) -> Option<&PassageInfo> {
        self.get(id)
    }
}

/// Gold answers, either language-agnostic or keyed by language.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoldAnswers {
    Flat(Vec<String>),
    PerLanguage(BTreeMap<String, Vec<String>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryJudgments {
    pub query_id: String,
    pub gold_answers: GoldAnswers,
    /// passage id -> graded relevance.
    #[serde(default)]
    pub relevant_passages: BTreeMap<String, f64>,
}

impl QueryJudgments {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.all_answers().next().is_none() && self.relevant_passages.is_empty() {
            return Err(MetricsError::EmptyJudgment(self.query_id.clone()));
        }
        Ok(())
    }

    pub fn all_answers(&self) -> Box<dyn Iterator<Item = &str> + '_> {
        match &self.gold_answers {
            GoldAnswers::Flat(list) => Box::new(list.iter().map(|s| s.as_str())),
            GoldAnswers::PerLanguage(map) => {
                Box::new(map.values().flatten().map(|s| s.as_str()))
            }
        }
    }

    /// Answers applicable to passages in `language`: the language's own list
    /// for per-language golds, everything for flat golds.
    pub fn answers_for(&self, language: &str) -> Vec<&str> {
        match &self.gold_answers {
            GoldAnswers::Flat(list) => list.iter().map(|s| s.as_str()).collect(),
            GoldAnswers::PerLanguage(map) => map
                .get(language)
                .map(|v| v.iter().map(|s| s.as_str()).collect())
                .unwrap_or_default(),
        }
    }
}

/// Recall at a token budget: passages are considered while their starting
/// token offset is below `token_budget` (the first passage always qualifies,
/// its offset being 0); a hit means some considered passage contains some
/// applicable gold answer after NFC normalization.
pub fn recall_at_kt(
    res: &RetrievalResult,
    judg: &QueryJudgments,
    corpus: &dyn PassageLookup,
    token_budget: usize,
) -> Result<bool, MetricsError> {
    judg.validate()?;
    let mut offset = 0usize;
    for (passage_id, _) in &res.ranked {
        if offset >= token_budget {
            break;
        }
        let info = corpus
            .passage(passage_id)
            .ok_or_else(|| MetricsError::UnknownPassage(passage_id.clone()))?;
        let answers = judg.answers_for(&info.language);
        if answers.iter().any(|a| nfc_contains(&info.text, a)) {
            return Ok(true);
        }
        offset += info.token_count;
    }
    Ok(false)
}

/// Any-language recall: a hit when the top-k of any language's ranking
/// contains a gold answer of the matching language.
pub fn recall_multi(
    res_per_language: &BTreeMap<String, RetrievalResult>,
    judg: &QueryJudgments,
    corpus: &dyn PassageLookup,
    k: usize,
) -> Result<bool, MetricsError> {
    judg.validate()?;
    for res in res_per_language.values() {
        for (passage_id, _) in res.ranked.iter().take(k) {
            let info = corpus
                .passage(passage_id)
                .ok_or_else(|| MetricsError::UnknownPassage(passage_id.clone()))?;
            let answers = judg.answers_for(&info.language);
            if answers.iter().any(|a| nfc_contains(&info.text, a)) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// nDCG@k with linear gain and `log2(rank + 1)` discount.
pub fn ndcg_at_k(
    res: &RetrievalResult,
    judg: &QueryJudgments,
    k: usize,
) -> Result<f64, MetricsError> {
    if judg.relevant_passages.is_empty() {
        return Err(MetricsError::NoRelevantPassages(judg.query_id.clone()));
    }
    let dcg: f64 = res
        .ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (id, _))| {
            let rel = judg.relevant_passages.get(id).copied().unwrap_or(0.0);
            rel / ((i + 2) as f64).log2()
        })
        .sum();
    let mut gains: Vec<f64> = judg.relevant_passages.values().copied().collect();
    gains.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let idcg: f64 = gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, rel)| rel / ((i + 2) as f64).log2())
        .sum();
    Ok(if idcg > 0.0 { dcg / idcg } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QaScores {
    pub em: u8,
    pub f1: f64,
    pub bleu: f64,
}

fn tokens(text: &str, language: &str, rules: &LangRules) -> Vec<String> {
    rules.tokenize(&normalize_for_qa(text), language)
}

fn multiset_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut gold_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in gold {
        *gold_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(count) = gold_counts.get_mut(t.as_str()) {
            if *count > 0 {
                *count -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts: BTreeMap<&[String], usize> = BTreeMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU up to 4-grams with add-one smoothing on every n-gram
/// precision and the standard brevity penalty.
fn sentence_bleu(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let pred_ngrams = ngram_counts(pred, n);
        let gold_ngrams = ngram_counts(gold, n);
        let total: usize = pred_ngrams.values().sum();
        let matched: usize = pred_ngrams
            .iter()
            .map(|(gram, count)| (*count).min(gold_ngrams.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = (matched + 1) as f64 / (total + 1) as f64;
        log_sum += precision.ln() / 4.0;
    }
    let bp = if pred.len() < gold.len() {
        (1.0 - gold.len() as f64 / pred.len() as f64).exp()
    } else {
        1.0
    };
    bp * log_sum.exp()
}

/// EM, F1, and BLEU of one prediction against its gold answers, taking the
/// max over golds for F1 and BLEU.
pub fn qa_scores(
    prediction: &str,
    golds: &[String],
    language: &str,
    rules: &LangRules,
) -> Result<QaScores, MetricsError> {
    if golds.is_empty() {
        return Err(MetricsError::NoGolds);
    }
    let pred_tokens = tokens(prediction, language, rules);
    let mut em = 0u8;
    let mut f1: f64 = 0.0;
    let mut bleu: f64 = 0.0;
    for gold in golds {
        let gold_tokens = tokens(gold, language, rules);
        if pred_tokens == gold_tokens {
            em = 1;
        }
        f1 = f1.max(multiset_f1(&pred_tokens, &gold_tokens));
        bleu = bleu.max(sentence_bleu(&pred_tokens, &gold_tokens));
    }
    Ok(QaScores { em, f1, bleu })
}

/// Per-language means plus the unweighted macro average across languages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_language: BTreeMap<String, f64>,
    pub macro_avg: Option<f64>,
}

/// Aggregate `(language, score)` pairs: mean within each language, then the
/// unweighted mean of the per-language means.
pub fn aggregate(per_query: &[(String, f64)]) -> MetricReport {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (language, score) in per_query {
        let entry = sums.entry(language.clone()).or_insert((0.0, 0));
        entry.0 += score;
        entry.1 += 1;
    }
    let per_language: BTreeMap<String, f64> = sums
        .into_iter()
        .map(|(lang, (sum, n))| (lang, sum / n as f64))
        .collect();
    let macro_avg = if per_language.is_empty() {
        None
    } else {
        Some(per_language.values().sum::<f64>() / per_language.len() as f64)
    };
    MetricReport {
        per_language,
        macro_avg,
    }
}
