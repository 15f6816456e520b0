//! Language metadata: display names, tokenization rules, normalization, and
//! canonical yes/no forms.
//!
//! Tokenization is whitespace-based for space-delimited languages and
//! per-character for languages written without word separators (`ja`, `zh`,
//! `th`, `km` by default). Both tables are extensible at runtime so configs
//! can add languages without a code change.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum LangError {
    #[error("unknown language code: {0}")]
    UnknownLanguage(String),
}

/// Built-in code -> English display name table. Configs may extend it.
const LANGUAGE_NAMES: &[(&str, &str)] = &[
    ("ar", "Arabic"),
    ("bn", "Bengali"),
    ("da", "Danish"),
    ("de", "German"),
    ("en", "English"),
    ("es", "Spanish"),
    ("fa", "Persian"),
    ("fi", "Finnish"),
    ("fr", "French"),
    ("he", "Hebrew"),
    ("hi", "Hindi"),
    ("hu", "Hungarian"),
    ("id", "Indonesian"),
    ("it", "Italian"),
    ("ja", "Japanese"),
    ("km", "Khmer"),
    ("ko", "Korean"),
    ("ms", "Malay"),
    ("nl", "Dutch"),
    ("no", "Norwegian"),
    ("pl", "Polish"),
    ("pt", "Portuguese"),
    ("ru", "Russian"),
    ("sv", "Swedish"),
    ("sw", "Swahili"),
    ("te", "Telugu"),
    ("th", "Thai"),
    ("tr", "Turkish"),
    ("vi", "Vietnamese"),
    ("yo", "Yoruba"),
    ("zh", "Chinese"),
];

/// Languages tokenized per character instead of on whitespace.
const CHAR_TOKENIZED: &[&str] = &["ja", "km", "th", "zh"];

/// Punctuation stripped during QA-metric normalization. ASCII punctuation is
/// handled separately; this list covers the fullwidth/CJK/Arabic/Indic marks
/// seen in the supported languages.
const EXTRA_PUNCT: &[char] = &[
    '、', '。', '〃', '〈', '〉', '《', '》', '「', '」', '『', '』', '【', '】', '〔', '〕',
    '・', '！', '？', '：', '；', '，', '．', '（', '）', '［', '］', '｛', '｝', '｡', '｢',
    '｣', '､', '･', '…', '‥', '“', '”', '‘', '’', '«', '»', '—', '–', '،', '؛', '؟', '۔',
    '।', '॥',
];

/// Runtime language rules: display names plus tokenization overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LangRules {
    /// code -> English display name; merged over the built-in table.
    #[serde(default)]
    pub names: BTreeMap<String, String>,
    /// codes tokenized per character; merged over the built-in set.
    #[serde(default)]
    pub char_tokenized: Vec<String>,
    /// code -> (yes form, no form) used when canonicalizing answers; the
    /// built-in default keeps Latin-script "yes"/"no" for every language.
    #[serde(default)]
    pub yes_no: BTreeMap<String, (String, String)>,
}

impl Default for LangRules {
    fn default() -> Self {
        LangRules {
            names: BTreeMap::new(),
            char_tokenized: Vec::new(),
            yes_no: BTreeMap::new(),
        }
    }
}

impl LangRules {
    /// English display name for a language code.
    pub fn display_name(&self, code: &str) -> Result<&str, LangError> {
        if let Some(name) = self.names.get(code) {
            return Ok(name);
        }
        LANGUAGE_NAMES
            .iter()
            .find(|(c, _)| *c == code)
            .map(|(_, n)| *n)
            .ok_or_else(|| LangError::UnknownLanguage(code.to_string()))
    }

    pub fn is_char_tokenized(&self, code: &str) -> bool {
        self.char_tokenized.iter().any(|c| c == code) || CHAR_TOKENIZED.contains(&code)
    }

    /// Tokenize `text` under the language's rules. Char-tokenized languages
    /// yield one token per non-whitespace character; everything else splits
    /// on Unicode whitespace.
    pub fn tokenize(&self, text: &str, code: &str) -> Vec<String> {
        if self.is_char_tokenized(code) {
            text.chars()
                .filter(|c| !c.is_whitespace())
                .map(|c| c.to_string())
                .collect()
        } else {
            text.split_whitespace().map(|s| s.to_string()).collect()
        }
    }

    /// Canonical yes/no surface forms for a language.
    pub fn yes_no_forms(&self, code: &str) -> (&str, &str) {
        self.yes_no
            .get(code)
            .map(|(y, n)| (y.as_str(), n.as_str()))
            .unwrap_or(("yes", "no"))
    }

    /// Map an answer string to its canonical yes/no form if it is one,
    /// comparing case-insensitively after NFC normalization.
    pub fn canonical_yes_no(&self, answer: &str, code: &str) -> Option<YesNo> {
        let norm = nfc(answer.trim()).to_lowercase();
        let (yes, no) = self.yes_no_forms(code);
        if norm == nfc(yes).to_lowercase() {
            Some(YesNo::Yes)
        } else if norm == nfc(no).to_lowercase() {
            Some(YesNo::No)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YesNo {
    Yes,
    No,
}

/// NFC-normalize a string.
pub fn nfc(text: &str) -> String {
    text.nfc().collect()
}

/// True if `needle` occurs in `haystack` after NFC normalization of both.
pub fn nfc_contains(haystack: &str, needle: &str) -> bool {
    nfc(haystack).contains(&nfc(needle))
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || EXTRA_PUNCT.contains(&c)
}

/// QA-metric normalization: NFC, lowercase, punctuation stripped.
pub fn normalize_for_qa(text: &str) -> String {
    nfc(text)
        .to_lowercase()
        .chars()
        .map(|c| if is_punct(c) { ' ' } else { c })
        .collect()
}
