//! Deterministic prompt rendering.
//!
//! Every builder is a pure function of its inputs: templates are versioned
//! assets compiled into the crate (see `templates/README.md`), example and
//! target blocks are joined with a single blank line, and the trailing open
//! slot ends with no newline. Language display names come from [`LangRules`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{AnswerType, Passage};
use crate::kb::Triple;
use crate::lang::LangRules;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("triple curation kind `{kind}` requires is_false = {expected}")]
    TruthFlagMismatch { kind: &'static str, expected: bool },
    #[error("empty {0} label")]
    EmptyField(&'static str),
    #[error("no in-context examples supplied")]
    NoExamples,
    #[error("example {index} is in language `{found}`, expected `{expected}`")]
    LanguageMismatch {
        index: usize,
        found: String,
        expected: String,
    },
    #[error("example {index} has property `{found}`, expected `{expected}`")]
    PropertyMismatch {
        index: usize,
        found: String,
        expected: String,
    },
    #[error("example {index} lacks the English translation required here")]
    MissingTranslation { index: usize },
    #[error("few-shot set must have exactly 5 examples (3 span, 1 yes, 1 no), got {0}")]
    BadFewShotShape(String),
    #[error("zero-shot source must span at least two languages in multilingual mode")]
    NotMultilingual,
    #[error("zero-shot source contains excluded language `{0}`")]
    ExclusionViolated(String),
    #[error("zero-shot source example {index} is in `{found}`, but english mode requires `en`")]
    NotEnglish { index: usize, found: String },
    #[error("unknown language code: {0}")]
    UnknownLanguage(String),
}

/// A rendered prompt: ordered chat messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub messages: Vec<PromptMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
}

impl PromptText {
    pub fn user(content: String) -> Self {
        PromptText {
            messages: vec![PromptMessage {
                role: Role::User,
                content,
            }],
        }
    }

    /// Canonical plain-text form: a lone user message renders bare; role
    /// labels are kept otherwise. This is the byte layout pinned by the
    /// golden snapshot tests.
    pub fn to_plain_text(&self) -> String {
        match self.messages.as_slice() {
            [one] if one.role == Role::User => one.content.clone(),
            messages => messages
                .iter()
                .map(|m| {
                    let label = match m.role {
                        Role::System => "System:",
                        Role::User => "User:",
                    };
                    format!("{label}\n{}", m.content)
                })
                .collect::<Vec<_>>()
                .join("\n"),
        }
    }
}

/// The seven template variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    TripleCurationSpan,
    TripleCurationYesno,
    TripleIcl,
    FewshotInlang,
    CrosslingualEn,
    ZeroshotEnglish,
    ZeroshotMultilingual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurationKind {
    Span,
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroshotMode {
    English,
    Multilingual,
}

/// A curated triple-to-question pair used as an in-context example.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CuratedExample {
    pub subject_label: String,
    pub property_id: String,
    pub property_label: String,
    pub object_label: String,
    pub question: String,
    /// Object label, or "yes"/"no".
    pub answer: String,
    pub language: String,
}

/// English translation of a few-shot example, including its document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnglishPair {
    pub question: String,
    pub answer: String,
    pub document: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FewShotExample {
    pub question: String,
    pub answer: String,
    pub passage: String,
    pub answer_type: AnswerType,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub english: Option<EnglishPair>,
}

/// Exactly five language-specific examples: three span answers plus one yes
/// and one no. The shape is enforced here, never at render time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<FewShotExample>", into = "Vec<FewShotExample>")]
pub struct FewShotSet {
    examples: Vec<FewShotExample>,
}

impl FewShotSet {
    pub fn new(examples: Vec<FewShotExample>) -> Result<Self, PromptError> {
        let mut span = 0;
        let mut yes = 0;
        let mut no = 0;
        for ex in &examples {
            match ex.answer_type {
                AnswerType::Span => span += 1,
                AnswerType::Yes => yes += 1,
                AnswerType::No => no += 1,
            }
        }
        if examples.len() != 5 || span != 3 || yes != 1 || no != 1 {
            return Err(PromptError::BadFewShotShape(format!(
                "{} examples ({span} span, {yes} yes, {no} no)",
                examples.len()
            )));
        }
        Ok(FewShotSet { examples })
    }

    pub fn examples(&self) -> &[FewShotExample] {
        &self.examples
    }

    pub fn language(&self) -> &str {
        &self.examples[0].language
    }
}

impl TryFrom<Vec<FewShotExample>> for FewShotSet {
    type Error = PromptError;
    fn try_from(examples: Vec<FewShotExample>) -> Result<Self, Self::Error> {
        FewShotSet::new(examples)
    }
}

impl From<FewShotSet> for Vec<FewShotExample> {
    fn from(set: FewShotSet) -> Self {
        set.examples
    }
}

/// A (question, answer, document, language) record for zero-shot prompting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZeroshotExample {
    pub question: String,
    pub answer: String,
    pub document: String,
    pub language: String,
}

const TRIPLE_CURATION_SPAN: &str = include_str!("../templates/triple_curation_span.txt");
const TRIPLE_CURATION_YESNO: &str = include_str!("../templates/triple_curation_yesno.txt");
const TRIPLE_ICL_EXAMPLE: &str = include_str!("../templates/triple_icl_example.txt");
const TRIPLE_ICL_TARGET: &str = include_str!("../templates/triple_icl_target.txt");
const FEWSHOT_EXAMPLE: &str = include_str!("../templates/fewshot_example.txt");
const FEWSHOT_TARGET: &str = include_str!("../templates/fewshot_target.txt");
const CROSSLINGUAL_EXAMPLE: &str = include_str!("../templates/crosslingual_example.txt");
const CROSSLINGUAL_TARGET: &str = include_str!("../templates/crosslingual_target.txt");
const ZEROSHOT_EXAMPLE: &str = include_str!("../templates/zeroshot_example.txt");
const ZEROSHOT_TARGET: &str = include_str!("../templates/zeroshot_target.txt");
const JUDGE_RELEVANCE: &str = include_str!("../templates/judge_relevance.txt");
const JUDGE_FLUENCY: &str = include_str!("../templates/judge_fluency.txt");

/// Trim the single trailing newline editors add to template files.
fn asset(template: &str) -> &str {
    template.strip_suffix('\n').unwrap_or(template)
}

/// Replace every `{key}` occurrence. Values are inserted verbatim.
fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = asset(template).to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

fn join_blocks(blocks: &[String]) -> String {
    blocks.join("\n\n")
}

fn display_name<'a>(rules: &'a LangRules, code: &str) -> Result<&'a str, PromptError> {
    rules
        .display_name(code)
        .map_err(|_| PromptError::UnknownLanguage(code.to_string()))
}

/// Parse `System:` / `User:` sections of a curation template into messages.
fn parse_role_sections(text: &str) -> Vec<PromptMessage> {
    let mut messages = Vec::new();
    let mut current: Option<(Role, Vec<&str>)> = None;
    for line in text.lines() {
        let role = match line {
            "System:" => Some(Role::System),
            "User:" => Some(Role::User),
            _ => None,
        };
        if let Some(role) = role {
            if let Some((r, lines)) = current.take() {
                messages.push(PromptMessage {
                    role: r,
                    content: lines.join("\n"),
                });
            }
            current = Some((role, Vec::new()));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        }
    }
    if let Some((r, lines)) = current {
        messages.push(PromptMessage {
            role: r,
            content: lines.join("\n"),
        });
    }
    messages
}

/// Two-message prompt asking for three rewrites of one triple.
///
/// Span prompts request the object label as the answer; yes/no prompts use
/// the shared yes/no template (answer literal `"yes"`, all triplet elements
/// required in the question) — `no` questions differ only in being built from
/// a verified-false triple.
pub fn build_triple_curation_prompt(
    triple: &Triple,
    language: &str,
    kind: CurationKind,
    rules: &LangRules,
) -> Result<PromptText, PromptError> {
    let expected_false = matches!(kind, CurationKind::No);
    if triple.is_false != expected_false {
        return Err(PromptError::TruthFlagMismatch {
            kind: match kind {
                CurationKind::Span => "span",
                CurationKind::Yes => "yes",
                CurationKind::No => "no",
            },
            expected: expected_false,
        });
    }
    if triple.subject_label.is_empty() {
        return Err(PromptError::EmptyField("subject"));
    }
    if triple.property_label.is_empty() {
        return Err(PromptError::EmptyField("property"));
    }
    if triple.object_label.is_empty() {
        return Err(PromptError::EmptyField("object"));
    }
    let lang_name = display_name(rules, language)?;
    let rendered = match kind {
        CurationKind::Span => render(
            TRIPLE_CURATION_SPAN,
            &[
                ("subject", &triple.subject_label),
                ("property", &triple.property_label),
                ("object", &triple.object_label),
                ("language", lang_name),
                ("answer", &triple.object_label),
            ],
        ),
        CurationKind::Yes | CurationKind::No => render(
            TRIPLE_CURATION_YESNO,
            &[
                ("subject", &triple.subject_label),
                ("property", &triple.property_label),
                ("object", &triple.object_label),
                ("language", lang_name),
            ],
        ),
    };
    Ok(PromptText {
        messages: parse_role_sections(&rendered),
    })
}

/// `Triple/Question/Answer` blocks followed by the target triple with an open
/// `Question:` slot.
pub fn build_triple_icl_prompt(
    curated: &[CuratedExample],
    target: &Triple,
) -> Result<PromptText, PromptError> {
    if curated.is_empty() {
        return Err(PromptError::NoExamples);
    }
    for (index, ex) in curated.iter().enumerate() {
        if ex.language != target.language {
            return Err(PromptError::LanguageMismatch {
                index,
                found: ex.language.clone(),
                expected: target.language.clone(),
            });
        }
        if ex.property_id != target.property_id {
            return Err(PromptError::PropertyMismatch {
                index,
                found: ex.property_id.clone(),
                expected: target.property_id.clone(),
            });
        }
    }
    let mut blocks: Vec<String> = curated
        .iter()
        .map(|ex| {
            render(
                TRIPLE_ICL_EXAMPLE,
                &[
                    ("subject", &ex.subject_label),
                    ("property", &ex.property_label),
                    ("object", &ex.object_label),
                    ("question", &ex.question),
                    ("answer", &ex.answer),
                ],
            )
        })
        .collect();
    blocks.push(render(
        TRIPLE_ICL_TARGET,
        &[
            ("subject", &target.subject_label),
            ("property", &target.property_label),
            ("object", &target.object_label),
        ],
    ));
    Ok(PromptText::user(join_blocks(&blocks)))
}

/// Five `Document/Question/Answer` blocks then the sampled passage with an
/// open question slot.
pub fn build_fewshot_qa_prompt(
    set: &FewShotSet,
    passage: &Passage,
) -> Result<PromptText, PromptError> {
    for (index, ex) in set.examples().iter().enumerate() {
        if ex.language != passage.language {
            return Err(PromptError::LanguageMismatch {
                index,
                found: ex.language.clone(),
                expected: passage.language.clone(),
            });
        }
    }
    let mut blocks: Vec<String> = set
        .examples()
        .iter()
        .map(|ex| {
            render(
                FEWSHOT_EXAMPLE,
                &[
                    ("document", &ex.passage),
                    ("question", &ex.question),
                    ("answer", &ex.answer),
                ],
            )
        })
        .collect();
    blocks.push(render(FEWSHOT_TARGET, &[("document", passage.text.as_str())]));
    Ok(PromptText::user(join_blocks(&blocks)))
}

/// English-document blocks pairing `English:`/`{Lang}:` question and answer
/// lines, then the target English passage with an open slot.
pub fn build_crosslingual_prompt(
    set: &FewShotSet,
    en_passage: &Passage,
    rules: &LangRules,
) -> Result<PromptText, PromptError> {
    let lang_name = display_name(rules, set.language())?;
    let mut blocks = Vec::with_capacity(set.examples().len() + 1);
    for (index, ex) in set.examples().iter().enumerate() {
        let english = ex
            .english
            .as_ref()
            .ok_or(PromptError::MissingTranslation { index })?;
        blocks.push(render(
            CROSSLINGUAL_EXAMPLE,
            &[
                ("document", english.document.as_str()),
                ("question_en", english.question.as_str()),
                ("question", ex.question.as_str()),
                ("answer_en", english.answer.as_str()),
                ("answer", ex.answer.as_str()),
                ("language", lang_name),
            ],
        ));
    }
    blocks.push(render(
        CROSSLINGUAL_TARGET,
        &[("document", en_passage.text.as_str())],
    ));
    Ok(PromptText::user(join_blocks(&blocks)))
}

/// Language-labeled `Document/Question/Answer` blocks then the
/// target-language document with an open slot.
pub fn build_zeroshot_prompt(
    source: &[ZeroshotExample],
    target_passage: &Passage,
    mode: ZeroshotMode,
    exclusion: &str,
    rules: &LangRules,
) -> Result<PromptText, PromptError> {
    if source.is_empty() {
        return Err(PromptError::NoExamples);
    }
    match mode {
        ZeroshotMode::English => {
            for (index, ex) in source.iter().enumerate() {
                if ex.language != "en" {
                    return Err(PromptError::NotEnglish {
                        index,
                        found: ex.language.clone(),
                    });
                }
            }
        }
        ZeroshotMode::Multilingual => {
            if let Some(ex) = source.iter().find(|ex| ex.language == exclusion) {
                return Err(PromptError::ExclusionViolated(ex.language.clone()));
            }
            let mut langs: Vec<&str> = source.iter().map(|ex| ex.language.as_str()).collect();
            langs.sort_unstable();
            langs.dedup();
            if langs.len() < 2 {
                return Err(PromptError::NotMultilingual);
            }
        }
    }
    let mut blocks = Vec::with_capacity(source.len() + 1);
    for ex in source {
        let name = display_name(rules, &ex.language)?;
        blocks.push(render(
            ZEROSHOT_EXAMPLE,
            &[
                ("language", name),
                ("document", ex.document.as_str()),
                ("question", ex.question.as_str()),
                ("answer", ex.answer.as_str()),
            ],
        ));
    }
    let target_name = display_name(rules, &target_passage.language)?;
    blocks.push(render(
        ZEROSHOT_TARGET,
        &[
            ("language", target_name),
            ("document", target_passage.text.as_str()),
        ],
    ));
    Ok(PromptText::user(join_blocks(&blocks)))
}

/// Judge prompt for rating the relevance of a Q&A pair to its paragraph.
pub fn build_judge_relevance_prompt(paragraph: &str, question: &str, answer: &str) -> PromptText {
    PromptText::user(render(
        JUDGE_RELEVANCE,
        &[
            ("paragraph", paragraph),
            ("question", question),
            ("answer", answer),
        ],
    ))
}

/// Judge prompt for rating a question's fluency; contains the question only.
pub fn build_judge_fluency_prompt(question: &str) -> PromptText {
    PromptText::user(render(JUDGE_FLUENCY, &[("question", question)]))
}

/// The `Answer in {Language}` instruction appended to retrieval queries.
pub fn answer_instruction(language: &str, rules: &LangRules) -> Result<String, PromptError> {
    Ok(format!("Answer in {}", display_name(rules, language)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{AnswerType, Passage};

    fn rules() -> LangRules {
        LangRules::default()
    }

    fn ja_triple() -> Triple {
        Triple {
            subject_id: "Q1".into(),
            subject_label: "テリー・ジャックス".into(),
            property_id: "P19".into(),
            property_label: "出生地".into(),
            object_label: "ウィニペグ".into(),
            object_id: Some("Q2".into()),
            language: "ja".into(),
            is_false: false,
        }
    }

    fn passage(text: &str, lang: &str) -> Passage {
        Passage {
            id: "p1".into(),
            page_id: "page1".into(),
            entity_id: None,
            title: "t".into(),
            text: text.into(),
            language: lang.into(),
            token_count: 0,
        }
    }

    fn fewshot_set(lang: &str, with_english: bool) -> FewShotSet {
        let mk = |i: usize, ty: AnswerType, answer: &str| FewShotExample {
            question: format!("質問{i}"),
            answer: answer.into(),
            passage: format!("文書{i}"),
            answer_type: ty,
            language: lang.into(),
            english: with_english.then(|| EnglishPair {
                question: format!("question {i}"),
                answer: if matches!(ty, AnswerType::Span) {
                    format!("answer {i}")
                } else {
                    answer.to_string()
                },
                document: format!("document {i}"),
            }),
        };
        FewShotSet::new(vec![
            mk(1, AnswerType::Span, "答え1"),
            mk(2, AnswerType::Span, "答え2"),
            mk(3, AnswerType::Span, "答え3"),
            mk(4, AnswerType::No, "no"),
            mk(5, AnswerType::Yes, "yes"),
        ])
        .unwrap()
    }

    #[test]
    fn curation_span_prompt_contains_triplet_and_answer() {
        let prompt =
            build_triple_curation_prompt(&ja_triple(), "ja", CurationKind::Span, &rules()).unwrap();
        let text = prompt.to_plain_text();
        assert!(text.contains("(テリー・ジャックス, 出生地, ウィニペグ)"));
        assert!(text.contains("whose answer is \"ウィニペグ\""));
        assert!(text.contains("natural Japanese"));
        assert!(text.starts_with("System:\n"));
        assert_eq!(prompt.messages.len(), 2);
    }

    #[test]
    fn curation_yes_prompt_requests_yes_and_all_elements() {
        let prompt =
            build_triple_curation_prompt(&ja_triple(), "ja", CurationKind::Yes, &rules()).unwrap();
        let text = prompt.to_plain_text();
        assert!(text.contains("whose answer is \"yes\""));
        assert!(text.contains("All elements in the triplet should be included in the question."));
    }

    #[test]
    fn curation_no_requires_false_triple() {
        let err = build_triple_curation_prompt(&ja_triple(), "ja", CurationKind::No, &rules())
            .unwrap_err();
        assert!(matches!(err, PromptError::TruthFlagMismatch { .. }));
        let mut fake = ja_triple();
        fake.is_false = true;
        assert!(build_triple_curation_prompt(&fake, "ja", CurationKind::No, &rules()).is_ok());
    }

    #[test]
    fn curation_rejects_empty_object() {
        let mut t = ja_triple();
        t.object_label.clear();
        let err =
            build_triple_curation_prompt(&t, "ja", CurationKind::Span, &rules()).unwrap_err();
        assert!(matches!(err, PromptError::EmptyField("object")));
    }

    #[test]
    fn icl_prompt_layout_ends_with_open_question() {
        let curated: Vec<CuratedExample> = (0..3)
            .map(|i| CuratedExample {
                subject_label: format!("主語{i}"),
                property_id: "P828".into(),
                property_label: "原因".into(),
                object_label: format!("目的{i}"),
                question: format!("質問{i}？"),
                answer: format!("目的{i}"),
                language: "ja".into(),
            })
            .collect();
        let mut target = ja_triple();
        target.property_id = "P828".into();
        let prompt = build_triple_icl_prompt(&curated, &target).unwrap();
        let text = prompt.to_plain_text();
        assert!(text.ends_with("Question:"));
        assert_eq!(text.matches("Triple: (").count(), 4);
        assert_eq!(text.matches("\n\n").count(), 3);
    }

    #[test]
    fn icl_prompt_rejects_empty_and_mismatched_examples() {
        let target = ja_triple();
        assert!(matches!(
            build_triple_icl_prompt(&[], &target),
            Err(PromptError::NoExamples)
        ));
        let wrong_lang = vec![CuratedExample {
            subject_label: "s".into(),
            property_id: "P19".into(),
            property_label: "r".into(),
            object_label: "o".into(),
            question: "q".into(),
            answer: "o".into(),
            language: "fi".into(),
        }];
        assert!(matches!(
            build_triple_icl_prompt(&wrong_lang, &target),
            Err(PromptError::LanguageMismatch { .. })
        ));
    }

    #[test]
    fn prompts_are_byte_deterministic() {
        let set = fewshot_set("ja", false);
        let p = passage("対象となる文書です。", "ja");
        let a = build_fewshot_qa_prompt(&set, &p).unwrap().to_plain_text();
        let b = build_fewshot_qa_prompt(&set, &p).unwrap().to_plain_text();
        assert_eq!(a, b);
    }

    #[test]
    fn fewshot_prompt_has_six_documents() {
        let set = fewshot_set("ja", false);
        let p = passage("対象となる文書です。", "ja");
        let text = build_fewshot_qa_prompt(&set, &p).unwrap().to_plain_text();
        assert_eq!(text.matches("Document: ").count(), 6);
        assert!(text.ends_with("Question:"));
    }

    #[test]
    fn fewshot_prompt_rejects_language_mismatch() {
        let set = fewshot_set("ja", false);
        let p = passage("An English passage.", "en");
        assert!(matches!(
            build_fewshot_qa_prompt(&set, &p),
            Err(PromptError::LanguageMismatch { .. })
        ));
    }

    #[test]
    fn fewshot_set_enforces_shape() {
        let mk = |ty| FewShotExample {
            question: "q".into(),
            answer: "a".into(),
            passage: "d".into(),
            answer_type: ty,
            language: "ja".into(),
            english: None,
        };
        let four = vec![
            mk(AnswerType::Span),
            mk(AnswerType::Span),
            mk(AnswerType::Yes),
            mk(AnswerType::No),
        ];
        assert!(FewShotSet::new(four).is_err());
        let five_all_span = vec![
            mk(AnswerType::Span),
            mk(AnswerType::Span),
            mk(AnswerType::Span),
            mk(AnswerType::Span),
            mk(AnswerType::Span),
        ];
        assert!(FewShotSet::new(five_all_span).is_err());
    }

    #[test]
    fn crosslingual_prompt_pairs_languages() {
        let set = fewshot_set("ja", true);
        let p = passage("An English target passage.", "en");
        let text = build_crosslingual_prompt(&set, &p, &rules()).unwrap().to_plain_text();
        assert!(text.contains("Question: English: question 1 => Japanese: 質問1"));
        assert!(text.contains("Answer: English: no => Japanese: no"));
        assert!(text.ends_with("Question:"));
    }

    #[test]
    fn crosslingual_prompt_names_untranslated_example() {
        let mut set = fewshot_set("ja", true);
        set.examples[2].english = None;
        let p = passage("An English target passage.", "en");
        let err = build_crosslingual_prompt(&set, &p, &rules()).unwrap_err();
        assert!(matches!(err, PromptError::MissingTranslation { index: 2 }));
    }

    fn zeroshot_source(langs: &[&str]) -> Vec<ZeroshotExample> {
        langs
            .iter()
            .enumerate()
            .map(|(i, lang)| ZeroshotExample {
                question: format!("question {i}"),
                answer: format!("answer {i}"),
                document: format!("document {i}"),
                language: lang.to_string(),
            })
            .collect()
    }

    #[test]
    fn zeroshot_english_prompt_ends_with_target_language_slot() {
        let source = zeroshot_source(&["en"; 5]);
        let target = passage("対象の文書。", "ja");
        let text =
            build_zeroshot_prompt(&source, &target, ZeroshotMode::English, "ja", &rules())
                .unwrap()
                .to_plain_text();
        assert!(text.contains("English Document: document 0"));
        assert!(text.ends_with("Japanese Question:"));
    }

    #[test]
    fn zeroshot_english_mode_rejects_non_english_source() {
        let source = zeroshot_source(&["en", "fi", "en", "en", "en"]);
        let target = passage("対象の文書。", "ja");
        assert!(matches!(
            build_zeroshot_prompt(&source, &target, ZeroshotMode::English, "ja", &rules()),
            Err(PromptError::NotEnglish { index: 1, .. })
        ));
    }

    #[test]
    fn zeroshot_multilingual_enforces_exclusion_and_diversity() {
        let target = passage("対象の文書。", "ja");
        let with_ja = zeroshot_source(&["fi", "ru", "ja", "ko", "ar"]);
        assert!(matches!(
            build_zeroshot_prompt(&with_ja, &target, ZeroshotMode::Multilingual, "ja", &rules()),
            Err(PromptError::ExclusionViolated(_))
        ));
        let single = zeroshot_source(&["fi"; 5]);
        assert!(matches!(
            build_zeroshot_prompt(&single, &target, ZeroshotMode::Multilingual, "ja", &rules()),
            Err(PromptError::NotMultilingual)
        ));
        let ok = zeroshot_source(&["fi", "ru", "bn", "ar", "ko"]);
        let text =
            build_zeroshot_prompt(&ok, &target, ZeroshotMode::Multilingual, "ja", &rules())
                .unwrap()
                .to_plain_text();
        assert!(text.contains("Finnish Document:"));
        assert!(text.contains("Russian Question:"));
        assert!(text.ends_with("Japanese Question:"));
    }

    #[test]
    fn each_example_question_and_answer_appears_exactly_once() {
        let set = fewshot_set("ja", false);
        let p = passage("対象となる文書です。", "ja");
        let text = build_fewshot_qa_prompt(&set, &p).unwrap().to_plain_text();
        for ex in set.examples() {
            assert_eq!(text.matches(ex.question.as_str()).count(), 1);
            assert_eq!(text.matches(ex.passage.as_str()).count(), 1);
        }
    }

    #[test]
    fn judge_fluency_prompt_contains_only_the_question() {
        let text = build_judge_fluency_prompt("資本主義の提唱者は誰？").to_plain_text();
        assert!(text.contains("Question: 資本主義の提唱者は誰？"));
        assert!(!text.contains("Paragraph:"));
    }

    #[test]
    fn answer_instruction_formats_language_name() {
        let rules = rules();
        assert_eq!(answer_instruction("ja", &rules).unwrap(), "Answer in Japanese");
        assert!(answer_instruction("xx", &rules).is_err());
    }
}
