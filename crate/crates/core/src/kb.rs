//! Knowledge-base ingestion and triple harvesting.
//!
//! The KB is loaded once from a line-delimited entity dump and is immutable
//! afterwards; every operation here is a pure function of `(kb, seed)`.
//! Properties are ordinary entity records (ids like `P19`) carrying their own
//! per-language labels, which drives both label translation and the rule that
//! a property missing in a target language is silently skipped.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use thiserror::Error;

use crate::jsonl;
use crate::lang::nfc;

#[derive(Debug, Error)]
pub enum KbError {
    #[error(transparent)]
    Io(#[from] jsonl::JsonlError),
    #[error("{path}:{line}: {message}")]
    MalformedRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error("unknown property id: {0}")]
    UnknownProperty(String),
    #[error("no valid perturbation exists for triple ({subject}, {property}, {object})")]
    NoValidPerturbation {
        subject: String,
        property: String,
        object: String,
    },
    #[error("cannot perturb a triple already marked false")]
    AlreadyFalse,
}

/// One entity record in the dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    /// language code -> surface label.
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    /// language code -> page identifier.
    #[serde(default)]
    pub sitelinks: BTreeMap<String, String>,
    #[serde(default)]
    pub claims: Vec<Claim>,
}

/// A claim's object: another entity or a literal value compared by its
/// normalized string form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClaimObject {
    Entity { object_id: String },
    Literal { literal: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Claim {
    pub property: String,
    #[serde(flatten)]
    pub object: ClaimObject,
}

/// A fully labeled fact (or deliberately false fact) in one language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub subject_id: String,
    pub subject_label: String,
    pub property_id: String,
    pub property_label: String,
    pub object_label: String,
    /// Present when the object is an entity; literals carry no id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<String>,
    pub language: String,
    #[serde(default)]
    pub is_false: bool,
}

/// The manually selected properties used for harvesting, with their English
/// descriptions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropertySet {
    pub entries: Vec<(String, String)>,
}

/// The default 50-property selection.
const DEFAULT_PROPERTIES: &[(&str, &str)] = &[
    ("P264", "record label"),
    ("P175", "performer"),
    ("P176", "manufacturer"),
    ("P112", "founded by"),
    ("P127", "owned by"),
    ("P840", "narrative location"),
    ("P495", "country of origin"),
    ("P20", "place of death"),
    ("P407", "language of work or name"),
    ("P582", "end time"),
    ("P69", "educated at"),
    ("P159", "headquarters location"),
    ("P740", "location of formation"),
    ("P17", "country"),
    ("P136", "genre"),
    ("P800", "notable work"),
    ("P36", "capital"),
    ("P570", "date of death"),
    ("P190", "twinned administrative body"),
    ("P4552", "mountain range"),
    ("P915", "filming location"),
    ("P3086", "speed limit"),
    ("P84", "architect"),
    ("P2046", "area"),
    ("P569", "date of birth"),
    ("P86", "composer"),
    ("P515", "phase of matter"),
    ("P2048", "height"),
    ("P40", "child"),
    ("P580", "start time"),
    ("P828", "has cause"),
    ("P50", "author"),
    ("P2067", "mass"),
    ("P108", "employer"),
    ("P170", "creator"),
    ("P2049", "width"),
    ("P364", "original language of film or TV show"),
    ("P277", "programmed in"),
    ("P276", "location"),
    ("P413", "position played on team / speciality"),
    ("P131", "located in the administrative territorial entity"),
    ("P26", "spouse"),
    ("P106", "occupation"),
    ("P607", "conflict"),
    ("P942", "theme music"),
    ("P571", "inception"),
    ("P6", "head of government"),
    ("P19", "place of birth"),
    ("P1830", "owner of"),
    ("P61", "discoverer or inventor"),
];

impl PropertySet {
    /// The built-in 50-property selection.
    pub fn default_set() -> Self {
        PropertySet {
            entries: DEFAULT_PROPERTIES
                .iter()
                .map(|(id, desc)| (id.to_string(), desc.to_string()))
                .collect(),
        }
    }

    pub fn from_ids(ids: &[String]) -> Self {
        let defaults = PropertySet::default_set();
        PropertySet {
            entries: ids
                .iter()
                .map(|id| {
                    let desc = defaults
                        .entries
                        .iter()
                        .find(|(pid, _)| pid == id)
                        .map(|(_, d)| d.clone())
                        .unwrap_or_default();
                    (id.clone(), desc)
                })
                .collect(),
        }
    }
}

/// How `load_kb` treats malformed dump lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnMalformed {
    Abort,
    Skip,
}

/// Immutable in-memory knowledge base.
#[derive(Debug)]
pub struct KnowledgeBase {
    entities: BTreeMap<String, Entity>,
    /// (subject, property, object) membership set; literal objects keyed by
    /// normalized string form.
    facts: HashSet<(String, String, ClaimObject)>,
    /// property -> (subject, object) pairs in dump order.
    by_property: BTreeMap<String, Vec<(String, ClaimObject)>>,
    /// (language, label) -> entity ids.
    by_label: BTreeMap<(String, String), Vec<String>>,
    /// Warnings collected during a skip-mode load.
    pub load_warnings: Vec<String>,
}

fn normalize_object(object: &ClaimObject) -> ClaimObject {
    match object {
        ClaimObject::Entity { object_id } => ClaimObject::Entity {
            object_id: object_id.clone(),
        },
        ClaimObject::Literal { literal } => ClaimObject::Literal {
            literal: nfc(literal.trim()),
        },
    }
}

/// Load a line-delimited entity dump.
pub fn load_kb(dump_path: &Path, on_malformed: OnMalformed) -> Result<KnowledgeBase, KbError> {
    let (records, warnings): (Vec<Entity>, Vec<(usize, String)>) = match on_malformed {
        OnMalformed::Abort => (jsonl::read_all(dump_path)?, Vec::new()),
        OnMalformed::Skip => jsonl::read_skipping(dump_path)?,
    };
    let mut kb = KnowledgeBase {
        entities: BTreeMap::new(),
        facts: HashSet::new(),
        by_property: BTreeMap::new(),
        by_label: BTreeMap::new(),
        load_warnings: warnings
            .into_iter()
            .map(|(line, msg)| format!("{}:{line}: skipped malformed line: {msg}", dump_path.display()))
            .collect(),
    };
    for entity in records {
        if entity.id.is_empty() {
            return Err(KbError::MalformedRecord {
                path: dump_path.display().to_string(),
                line: 0,
                message: "entity with empty id".into(),
            });
        }
        for claim in &entity.claims {
            let object = normalize_object(&claim.object);
            kb.facts
                .insert((entity.id.clone(), claim.property.clone(), object.clone()));
            kb.by_property
                .entry(claim.property.clone())
                .or_default()
                .push((entity.id.clone(), object));
        }
        for (lang, label) in &entity.labels {
            kb.by_label
                .entry((lang.clone(), label.clone()))
                .or_default()
                .push(entity.id.clone());
        }
        kb.entities.insert(entity.id.clone(), entity);
    }
    Ok(kb)
}

impl KnowledgeBase {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn entities_by_label(&self, label: &str, language: &str) -> &[String] {
        self.by_label
            .get(&(language.to_string(), label.to_string()))
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// True iff (subject, property, object) is a fact in the loaded KB.
    pub fn membership(&self, subject_id: &str, property_id: &str, object: &ClaimObject) -> bool {
        self.facts.contains(&(
            subject_id.to_string(),
            property_id.to_string(),
            normalize_object(object),
        ))
    }

    fn label(&self, entity_id: &str, language: &str) -> Option<&str> {
        self.entities
            .get(entity_id)
            .and_then(|e| e.labels.get(language))
            .map(|s| s.as_str())
    }

    fn property_known(&self, property_id: &str) -> bool {
        self.by_property.contains_key(property_id) || self.entities.contains_key(property_id)
    }

    /// Render a claim as a fully labeled triple in `language`, or `None` when
    /// any element lacks a label there.
    fn labeled_triple(
        &self,
        subject_id: &str,
        property_id: &str,
        object: &ClaimObject,
        language: &str,
    ) -> Option<Triple> {
        let subject_label = self.label(subject_id, language)?;
        let property_label = self.label(property_id, language)?;
        let (object_label, object_id) = match object {
            ClaimObject::Entity { object_id } => {
                (self.label(object_id, language)?.to_string(), Some(object_id.clone()))
            }
            ClaimObject::Literal { literal } => (literal.clone(), None),
        };
        Some(Triple {
            subject_id: subject_id.to_string(),
            subject_label: subject_label.to_string(),
            property_id: property_id.to_string(),
            property_label: property_label.to_string(),
            object_label,
            object_id,
            language: language.to_string(),
            is_false: false,
        })
    }

    /// All triples of `property_id` fully labeled in `language`, in a stable
    /// order.
    fn language_triples(&self, property_id: &str, language: &str) -> Vec<Triple> {
        let Some(pairs) = self.by_property.get(property_id) else {
            return Vec::new();
        };
        let mut triples: Vec<Triple> = pairs
            .iter()
            .filter_map(|(s, o)| self.labeled_triple(s, property_id, o, language))
            .collect();
        triples.sort_by(|a, b| {
            (&a.subject_id, &a.object_label, &a.object_id)
                .cmp(&(&b.subject_id, &b.object_label, &b.object_id))
        });
        triples.dedup();
        triples
    }

    /// Sample up to `n` distinct triples of the given properties labeled in
    /// `language`. Deterministic for a fixed seed.
    pub fn sample_triples(
        &self,
        props: &PropertySet,
        language: &str,
        n: usize,
        rng_seed: u64,
    ) -> Result<Vec<Triple>, KbError> {
        let mut candidates = Vec::new();
        for (property_id, _) in &props.entries {
            if !self.property_known(property_id) {
                return Err(KbError::UnknownProperty(property_id.clone()));
            }
            candidates.extend(self.language_triples(property_id, language));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        // Partial Fisher-Yates: the first min(n, len) slots become the sample.
        let take = n.min(candidates.len());
        for i in 0..take {
            let j = rng.gen_range(i..candidates.len());
            candidates.swap(i, j);
        }
        candidates.truncate(take);
        Ok(candidates)
    }

    /// Re-label a triple in `target` through language links. Present iff the
    /// subject, property, and (entity) object all have target-language
    /// labels; literal objects pass through unchanged.
    pub fn translate_triple(&self, triple: &Triple, target: &str) -> Option<Triple> {
        let object = match &triple.object_id {
            Some(id) => ClaimObject::Entity { object_id: id.clone() },
            None => ClaimObject::Literal {
                literal: triple.object_label.clone(),
            },
        };
        let mut translated =
            self.labeled_triple(&triple.subject_id, &triple.property_id, &object, target)?;
        translated.is_false = triple.is_false;
        Some(translated)
    }

    /// Candidate replacement entities for one side of a triple: entities
    /// occupying the same slot of the same property, labeled in `language`,
    /// ranked by trigram cosine similarity to the original label (ties by
    /// ascending id), the original excluded.
    fn perturbation_candidates(
        &self,
        property_id: &str,
        side: PerturbSide,
        original_id: Option<&str>,
        original_label: &str,
        language: &str,
    ) -> Vec<PerturbCandidate> {
        let Some(pairs) = self.by_property.get(property_id) else {
            return Vec::new();
        };
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut out = Vec::new();
        for (subject, object) in pairs {
            match side {
                PerturbSide::Head => {
                    if Some(subject.as_str()) == original_id || seen.contains(subject) {
                        continue;
                    }
                    if let Some(label) = self.label(subject, language) {
                        seen.insert(subject.clone());
                        out.push(PerturbCandidate {
                            key: subject.clone(),
                            label: label.to_string(),
                            object: None,
                            similarity: trigram_cosine(original_label, label),
                        });
                    }
                }
                PerturbSide::Tail => match object {
                    ClaimObject::Entity { object_id } => {
                        if Some(object_id.as_str()) == original_id || seen.contains(object_id) {
                            continue;
                        }
                        if let Some(label) = self.label(object_id, language) {
                            seen.insert(object_id.clone());
                            out.push(PerturbCandidate {
                                key: object_id.clone(),
                                label: label.to_string(),
                                object: Some(object.clone()),
                                similarity: trigram_cosine(original_label, label),
                            });
                        }
                    }
                    ClaimObject::Literal { literal } => {
                        if literal == original_label || seen.contains(literal) {
                            continue;
                        }
                        seen.insert(literal.clone());
                        out.push(PerturbCandidate {
                            key: literal.clone(),
                            label: literal.clone(),
                            object: Some(object.clone()),
                            similarity: trigram_cosine(original_label, literal),
                        });
                    }
                },
            }
        }
        out.sort_by(|a, b| {
            b.similarity
                .partial_cmp(&a.similarity)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.key.cmp(&b.key))
        });
        out
    }

    fn try_perturb_side(&self, triple: &Triple, side: PerturbSide) -> Option<Triple> {
        let (original_id, original_label) = match side {
            PerturbSide::Head => (Some(triple.subject_id.as_str()), triple.subject_label.as_str()),
            PerturbSide::Tail => (triple.object_id.as_deref(), triple.object_label.as_str()),
        };
        let candidates = self.perturbation_candidates(
            &triple.property_id,
            side,
            original_id,
            original_label,
            &triple.language,
        );
        for cand in candidates {
            let mut fake = triple.clone();
            match side {
                PerturbSide::Head => {
                    fake.subject_id = cand.key.clone();
                    fake.subject_label = cand.label.clone();
                }
                PerturbSide::Tail => {
                    fake.object_label = cand.label.clone();
                    fake.object_id = match &cand.object {
                        Some(ClaimObject::Entity { object_id }) => Some(object_id.clone()),
                        _ => None,
                    };
                }
            }
            let object = match &fake.object_id {
                Some(id) => ClaimObject::Entity { object_id: id.clone() },
                None => ClaimObject::Literal {
                    literal: fake.object_label.clone(),
                },
            };
            if !self.membership(&fake.subject_id, &fake.property_id, &object) {
                fake.is_false = true;
                return Some(fake);
            }
        }
        None
    }

    /// Manufacture a verified-false triple by replacing the head or tail with
    /// the most similar same-property entity whose substitution is not a fact.
    /// The side is a seeded coin flip; if it fails, the other side is tried.
    pub fn perturb_triple(&self, triple: &Triple, rng_seed: u64) -> Result<Triple, KbError> {
        if triple.is_false {
            return Err(KbError::AlreadyFalse);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let first = if rng.gen::<bool>() {
            PerturbSide::Head
        } else {
            PerturbSide::Tail
        };
        let second = first.other();
        self.try_perturb_side(triple, first)
            .or_else(|| self.try_perturb_side(triple, second))
            .ok_or_else(|| KbError::NoValidPerturbation {
                subject: triple.subject_label.clone(),
                property: triple.property_id.clone(),
                object: triple.object_label.clone(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PerturbSide {
    Head,
    Tail,
}

impl PerturbSide {
    fn other(self) -> Self {
        match self {
            PerturbSide::Head => PerturbSide::Tail,
            PerturbSide::Tail => PerturbSide::Head,
        }
    }
}

struct PerturbCandidate {
    key: String,
    label: String,
    object: Option<ClaimObject>,
    similarity: f64,
}

/// Cosine similarity over character-trigram count vectors. Labels shorter
/// than three characters contribute their whole text as a single gram.
pub fn trigram_cosine(a: &str, b: &str) -> f64 {
    let grams = |s: &str| -> BTreeMap<String, usize> {
        let chars: Vec<char> = nfc(s).chars().collect();
        let mut counts = BTreeMap::new();
        if chars.len() < 3 {
            if !chars.is_empty() {
                counts.insert(chars.iter().collect::<String>(), 1);
            }
            return counts;
        }
        for window in chars.windows(3) {
            *counts.entry(window.iter().collect::<String>()).or_insert(0) += 1;
        }
        counts
    };
    let ga = grams(a);
    let gb = grams(b);
    let dot: f64 = ga
        .iter()
        .filter_map(|(g, ca)| gb.get(g).map(|cb| (*ca * *cb) as f64))
        .sum();
    let norm = |g: &BTreeMap<String, usize>| -> f64 {
        g.values().map(|c| (*c * *c) as f64).sum::<f64>().sqrt()
    };
    let denom = norm(&ga) * norm(&gb);
    if denom == 0.0 {
        0.0
    } else {
        dot / denom
    }
}
