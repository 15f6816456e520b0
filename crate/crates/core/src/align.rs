//! Structure raw generations into examples and identify positive passages.
//!
//! Covers three concerns: parsing the model's completion for each prompt kind
//! back into `(question, answer)` records, enforcing the span-answer
//! constraint against the source passage, and finding monolingual plus
//! cross-lingual positive passages by exact containment with a lexical-overlap
//! fallback.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::kb::{KnowledgeBase, Triple};
use crate::lang::{nfc, nfc_contains, LangRules, YesNo};
use crate::prompt::PromptKind;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unknown language code: {0}")]
    UnknownLanguage(String),
}

pub type ParseResult<T> = Result<T, AlignError>;

/// A corpus text unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub page_id: String,
    /// Entity whose page this passage belongs to, when known.
    #[serde(default)]
    pub entity_id: Option<String>,
    pub title: String,
    pub text: String,
    pub language: String,
    #[serde(default)]
    pub token_count: usize,
}

impl Passage {
    /// Recompute `token_count` under the language's tokenizer.
    pub fn with_token_count(mut self, rules: &LangRules) -> Self {
        self.token_count = rules.tokenize(&self.text, &self.language).len();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    Span,
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleOrigin {
    Wikidata,
    Fewshot,
    Crosslingual,
    ZeroshotEn,
    ZeroshotMl,
}

/// A generated question/answer record tied to its source passage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticExample {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub answer_type: AnswerType,
    pub language: String,
    pub source_passage_id: String,
    pub origin: ExampleOrigin,
    /// (question, answer) in English for cross-lingually generated examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paired_english: Option<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Partial,
}

/// Positive passages identified for one example.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositiveSet {
    pub example_id: String,
    pub monolingual: Vec<PositiveEntry>,
    pub crosslingual: Vec<CrosslingualPositive>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositiveEntry {
    pub passage_id: String,
    pub match_kind: MatchKind,
    /// Lexical-overlap score, present on partial matches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrosslingualPositive {
    pub language: String,
    pub passage_id: String,
    pub match_kind: MatchKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<f64>,
}

/// Metadata the parser cannot recover from the raw completion.
#[derive(Debug, Clone)]
pub struct GenerationContext {
    pub example_id: String,
    pub language: String,
    pub source_passage_id: String,
    pub origin: ExampleOrigin,
}

fn parse_err(offset: usize, message: impl Into<String>) -> AlignError {
    AlignError::Parse {
        offset,
        message: message.into(),
    }
}

/// Locate `marker` in `raw` and return (offset after marker, text up to the
/// next `stop` marker or end of line block).
fn capture<'a>(raw: &'a str, marker: &str) -> Option<(usize, &'a str)> {
    let start = raw.find(marker)? + marker.len();
    Some((start, &raw[start..]))
}

fn trim_line(text: &str) -> &str {
    match text.find('\n') {
        Some(end) => text[..end].trim(),
        None => text.trim(),
    }
}

/// Split `text` on the first `=>`, returning trimmed halves.
fn split_arrow(text: &str, offset: usize) -> ParseResult<(&str, &str)> {
    match text.split_once("=>") {
        Some((l, r)) => Ok((l.trim(), r.trim())),
        None => Err(parse_err(offset, "missing `=>` separator")),
    }
}

/// Strip a leading `{label}:` from `text`, tolerating surrounding whitespace.
fn strip_label<'a>(text: &'a str, label: &str, offset: usize) -> ParseResult<&'a str> {
    let trimmed = text.trim_start();
    trimmed
        .strip_prefix(label)
        .map(|rest| rest.trim_start_matches(':').trim())
        .ok_or_else(|| parse_err(offset, format!("expected `{label}:` label")))
}

/// Parse a raw completion into a structured example.
///
/// The caller prepends the prompt's open slot (e.g. `Question:`) when the
/// service returns only the continuation, so the full surface form with its
/// markers is always visible here.
pub fn parse_generation(
    raw: &str,
    kind: PromptKind,
    ctx: &GenerationContext,
    rules: &LangRules,
) -> ParseResult<SyntheticExample> {
    let lang_name = rules
        .display_name(&ctx.language)
        .map_err(|_| AlignError::UnknownLanguage(ctx.language.clone()))?;

    let (question, answer, paired_english) = match kind {
        PromptKind::TripleIcl => {
            let (q_off, q_rest) =
                capture(raw, "Question:").ok_or_else(|| parse_err(0, "missing `Question:` marker"))?;
            let question = trim_line(q_rest);
            let (a_off, a_rest) = capture(raw, "Answer:")
                .ok_or_else(|| parse_err(q_off, "missing `Answer:` marker"))?;
            let answer = trim_line(a_rest);
            if answer.is_empty() {
                return Err(parse_err(a_off, "empty answer"));
            }
            (question.to_string(), answer.to_string(), None)
        }
        PromptKind::FewshotInlang => {
            let (q_off, q_rest) =
                capture(raw, "Question:").ok_or_else(|| parse_err(0, "missing `Question:` marker"))?;
            let line = trim_line(q_rest);
            let (question, rest) = split_arrow(line, q_off)?;
            let answer = strip_label(rest, "Answer", q_off)?;
            if answer.is_empty() {
                return Err(parse_err(q_off, "empty answer"));
            }
            (question.to_string(), answer.to_string(), None)
        }
        PromptKind::CrosslingualEn => {
            let (q_off, q_rest) =
                capture(raw, "Question:").ok_or_else(|| parse_err(0, "missing `Question:` marker"))?;
            let q_line = trim_line(q_rest);
            let (q_en_part, q_l_part) = split_arrow(q_line, q_off)?;
            let q_en = strip_label(q_en_part, "English", q_off)?;
            let q_l = strip_label(q_l_part, lang_name, q_off)?;
            let (a_off, a_rest) = capture(raw, "Answer:")
                .ok_or_else(|| parse_err(q_off, "missing `Answer:` marker"))?;
            let a_line = trim_line(a_rest);
            let (a_en_part, a_l_part) = split_arrow(a_line, a_off)?;
            let a_en = strip_label(a_en_part, "English", a_off)?;
            let a_l = strip_label(a_l_part, lang_name, a_off)?;
            if a_l.is_empty() {
                return Err(parse_err(a_off, "empty answer"));
            }
            (
                q_l.to_string(),
                a_l.to_string(),
                Some((q_en.to_string(), a_en.to_string())),
            )
        }
        PromptKind::ZeroshotEnglish | PromptKind::ZeroshotMultilingual => {
            let q_marker = format!("{lang_name} Question:");
            let a_marker = format!("{lang_name} Answer");
            let (q_off, q_rest) = capture(raw, &q_marker)
                .ok_or_else(|| parse_err(0, format!("missing `{q_marker}` marker")))?;
            let line = trim_line(q_rest);
            let (question, rest) = split_arrow(line, q_off)?;
            let answer = strip_label(rest, &a_marker, q_off)?;
            if answer.is_empty() {
                return Err(parse_err(q_off, "empty answer"));
            }
            (question.to_string(), answer.to_string(), None)
        }
        PromptKind::TripleCurationSpan | PromptKind::TripleCurationYesno => {
            return Err(parse_err(
                0,
                "curation completions are question lists, not QA records",
            ));
        }
    };

    if question.is_empty() {
        return Err(parse_err(0, "empty question"));
    }

    let (answer, answer_type) = canonicalize_answer(&answer, &ctx.language, rules);
    Ok(SyntheticExample {
        id: ctx.example_id.clone(),
        question: nfc(&question),
        answer,
        answer_type,
        language: ctx.language.clone(),
        source_passage_id: ctx.source_passage_id.clone(),
        origin: ctx.origin,
        paired_english: paired_english.map(|(q, a)| (nfc(&q), nfc(&a))),
        local_score: None,
        global_score: None,
    })
}

fn canonicalize_answer(answer: &str, language: &str, rules: &LangRules) -> (String, AnswerType) {
    match rules.canonical_yes_no(answer, language) {
        Some(YesNo::Yes) => (rules.yes_no_forms(language).0.to_string(), AnswerType::Yes),
        Some(YesNo::No) => (rules.yes_no_forms(language).1.to_string(), AnswerType::No),
        None => (nfc(answer.trim()), AnswerType::Span),
    }
}

/// True iff the example's answer respects the span constraint: non-span
/// answers pass trivially, span answers must occur contiguously in the source
/// passage after NFC normalization.
pub fn validate_span(ex: &SyntheticExample, passage: &Passage) -> bool {
    debug_assert_eq!(ex.source_passage_id, passage.id);
    match ex.answer_type {
        AnswerType::Yes | AnswerType::No => true,
        AnswerType::Span => nfc_contains(&passage.text, &ex.answer),
    }
}

/// Token-level F1 between the answer and a passage, used as the lexical
/// overlap score for partial positive matching.
pub fn lexical_overlap(answer: &str, passage_text: &str, language: &str, rules: &LangRules) -> f64 {
    let a_tokens = rules.tokenize(&nfc(answer), language);
    let p_tokens = rules.tokenize(&nfc(passage_text), language);
    if a_tokens.is_empty() || p_tokens.is_empty() {
        return 0.0;
    }
    let mut p_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &p_tokens {
        *p_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    let mut a_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &a_tokens {
        *a_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    for (tok, a_n) in &a_counts {
        if let Some(p_n) = p_counts.get(tok) {
            overlap += a_n.min(p_n);
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / a_tokens.len() as f64;
    let recall = overlap as f64 / p_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Find positive passages for an answer on one entity page.
///
/// Exact containment wins: every passage containing the answer is returned
/// with `MatchKind::Exact`. Otherwise the single passage with the highest
/// lexical overlap is returned as `MatchKind::Partial`; ties break toward the
/// earliest passage on the page.
pub fn find_positives(answer: &str, page: &[Passage], rules: &LangRules) -> Vec<PositiveEntry> {
    let exact: Vec<PositiveEntry> = page
        .iter()
        .filter(|p| nfc_contains(&p.text, answer))
        .map(|p| PositiveEntry {
            passage_id: p.id.clone(),
            match_kind: MatchKind::Exact,
            overlap: None,
        })
        .collect();
    if !exact.is_empty() {
        return exact;
    }
    let mut best: Option<(f64, &Passage)> = None;
    for p in page {
        let score = lexical_overlap(answer, &p.text, &p.language, rules);
        let better = match best {
            None => true,
            Some((s, _)) => score > s,
        };
        if better {
            best = Some((score, p));
        }
    }
    match best {
        Some((score, p)) if score > 0.0 => vec![PositiveEntry {
            passage_id: p.id.clone(),
            match_kind: MatchKind::Partial,
            overlap: Some(score),
        }],
        _ => Vec::new(),
    }
}

/// Lookup of an entity's page passages per language.
pub trait PageCorpus {
    /// Passages of the page linked by `entity_id` in `language`, in page
    /// order; empty when no sitelink exists.
    fn entity_page(&self, entity_id: &str, language: &str) -> Vec<Passage>;
}

/// Cross-lingual positives: for each language where the triple translates and
/// the subject has a linked page, search that page for the translated answer.
pub fn gather_crosslingual_positives(
    triple: &Triple,
    languages: &[String],
    kb: &KnowledgeBase,
    corpus: &dyn PageCorpus,
    rules: &LangRules,
) -> Vec<CrosslingualPositive> {
    let mut out = Vec::new();
    for lang in languages {
        if *lang == triple.language {
            continue;
        }
        let Some(translated) = kb.translate_triple(triple, lang) else {
            continue;
        };
        let page = corpus.entity_page(&translated.subject_id, lang);
        if page.is_empty() {
            continue;
        }
        for entry in find_positives(&translated.object_label, &page, rules) {
            out.push(CrosslingualPositive {
                language: lang.clone(),
                passage_id: entry.passage_id,
                match_kind: entry.match_kind,
                overlap: entry.overlap,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::LangRules;

    fn ctx(lang: &str) -> GenerationContext {
        GenerationContext {
            example_id: "ex1".into(),
            language: lang.into(),
            source_passage_id: "p1".into(),
            origin: ExampleOrigin::Fewshot,
        }
    }

    fn passage(id: &str, text: &str, lang: &str) -> Passage {
        Passage {
            id: id.into(),
            page_id: "page1".into(),
            entity_id: None,
            title: "t".into(),
            text: text.into(),
            language: lang.into(),
            token_count: 0,
        }
    }

    #[test]
    fn parses_icl_two_line_form() {
        let raw = "Question: 何が壊血病につながるのか\nAnswer: ビタミンC欠乏症";
        let ex = parse_generation(raw, PromptKind::TripleIcl, &ctx("ja"), &LangRules::default())
            .unwrap();
        assert_eq!(ex.question, "何が壊血病につながるのか");
        assert_eq!(ex.answer, "ビタミンC欠乏症");
        assert_eq!(ex.answer_type, AnswerType::Span);
    }

    #[test]
    fn parses_inlang_arrow_form() {
        let raw = "Question: 資本主義の提唱者は誰？ => Answer: アダム・スミス";
        let ex = parse_generation(raw, PromptKind::FewshotInlang, &ctx("ja"), &LangRules::default())
            .unwrap();
        assert_eq!(ex.question, "資本主義の提唱者は誰？");
        assert_eq!(ex.answer, "アダム・スミス");
    }

    #[test]
    fn parses_crosslingual_paired_lines() {
        let raw = "Question: English: Did Napoleon die because of malaria? => Japanese: ナポレオンが死んだのはマラリアのせい？\nAnswer: English: no => Japanese: no";
        let ex = parse_generation(raw, PromptKind::CrosslingualEn, &ctx("ja"), &LangRules::default())
            .unwrap();
        assert_eq!(ex.answer_type, AnswerType::No);
        assert_eq!(ex.answer, "no");
        let (q_en, a_en) = ex.paired_english.unwrap();
        assert_eq!(q_en, "Did Napoleon die because of malaria?");
        assert_eq!(a_en, "no");
    }

    #[test]
    fn parses_zeroshot_language_labeled_form() {
        let raw = "Japanese Question: モンロー郡はいつ設立されましたか? => Japanese Answer: 1815年6月29日";
        let ex = parse_generation(
            raw,
            PromptKind::ZeroshotEnglish,
            &ctx("ja"),
            &LangRules::default(),
        )
        .unwrap();
        assert_eq!(ex.question, "モンロー郡はいつ設立されましたか?");
        assert_eq!(ex.answer, "1815年6月29日");
    }

    #[test]
    fn missing_answer_marker_is_parse_error() {
        let raw = "Question: 何が壊血病につながるのか";
        let err = parse_generation(raw, PromptKind::TripleIcl, &ctx("ja"), &LangRules::default())
            .unwrap_err();
        assert!(err.to_string().contains("Answer"));
    }

    #[test]
    fn yes_answer_is_canonicalized() {
        let raw = "Question: フィリピンは政教分離を原則としている？ => Answer: Yes";
        let ex = parse_generation(raw, PromptKind::FewshotInlang, &ctx("ja"), &LangRules::default())
            .unwrap();
        assert_eq!(ex.answer_type, AnswerType::Yes);
        assert_eq!(ex.answer, "yes");
    }

    #[test]
    fn span_validation_requires_containment() {
        let rules = LangRules::default();
        let p = passage("p1", "アダム・スミスは資本主義の最初の理論家です。", "ja");
        let raw = "Question: 資本主義の提唱者は誰？ => Answer: アダム・スミス";
        let ex = parse_generation(raw, PromptKind::FewshotInlang, &ctx("ja"), &rules).unwrap();
        assert!(validate_span(&ex, &p));

        let raw2 = "Question: 誰？ => Answer: カール・マルクス";
        let ex2 = parse_generation(raw2, PromptKind::FewshotInlang, &ctx("ja"), &rules).unwrap();
        assert!(!validate_span(&ex2, &p));
    }

    #[test]
    fn span_validation_bridges_nfc_forms() {
        let rules = LangRules::default();
        // Passage text in NFD (decomposed voicing marks), answer in NFC.
        let p = passage("p1", "ハ\u{3099}イオリンの歴史について。", "ja");
        let ex = SyntheticExample {
            id: "e".into(),
            question: "q".into(),
            answer: "バイオリン".into(),
            answer_type: AnswerType::Span,
            language: "ja".into(),
            source_passage_id: "p1".into(),
            origin: ExampleOrigin::Fewshot,
            paired_english: None,
            local_score: None,
            global_score: None,
        };
        assert!(validate_span(&ex, &p));
    }

    #[test]
    fn exact_positives_collect_all_hits() {
        let rules = LangRules::default();
        let page = vec![
            passage("p1", "London is the capital of England.", "en"),
            passage("p2", "The club was formed in London in 1818.", "en"),
            passage("p3", "Rowing is a popular sport.", "en"),
            passage("p4", "Its headquarters remain in London today.", "en"),
            passage("p5", "Membership requires an invitation.", "en"),
        ];
        let hits = find_positives("London", &page, &rules);
        let ids: Vec<_> = hits.iter().map(|h| h.passage_id.as_str()).collect();
        assert_eq!(ids, vec!["p1", "p2", "p4"]);
        assert!(hits.iter().all(|h| h.match_kind == MatchKind::Exact));
    }

    #[test]
    fn partial_positive_takes_highest_overlap() {
        let rules = LangRules::default();
        let page = vec![
            passage("p1", "completely unrelated text here", "en"),
            passage("p2", "the smith wealth treatise", "en"),
            passage("p3", "nations of wealth discussed in a treatise", "en"),
        ];
        let hits = find_positives("wealth of nations", &page, &rules);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].passage_id, "p3");
        assert_eq!(hits[0].match_kind, MatchKind::Partial);
        assert!(hits[0].overlap.unwrap() > 0.0);
    }

    #[test]
    fn partial_tie_breaks_to_earliest_passage() {
        let rules = LangRules::default();
        let page = vec![
            passage("p1", "alpha beta", "en"),
            passage("p2", "alpha beta", "en"),
        ];
        let hits = find_positives("alpha gamma", &page, &rules);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].passage_id, "p1");
        assert_eq!(hits[0].match_kind, MatchKind::Partial);
    }

    #[test]
    fn no_overlap_yields_no_positive() {
        let rules = LangRules::default();
        let page = vec![passage("p1", "alpha beta", "en")];
        assert!(find_positives("gamma", &page, &rules).is_empty());
    }
}
