//! Supervised token-labelling baseline.
//!
//! A unigram most-frequent-label tagger trained on descriptions whose tokens
//! carry property labels. It stands in for the neural sequence tagger the
//! heuristic parser is usually compared against; it is not that tagger.
//! The tagger sees no structure: everything it emits belongs to the target.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Property, TaggedProperty};
use crate::lexicon::{AlignedSpan, Language, TrainingItem};
use crate::parser::{AnnotationResult, Discarded, Match, MatchKind, Segment};

pub const MODEL_FORMAT: &str = "refanno-tagger/1";

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("no training examples")]
    Empty,
    #[error("example {index}: {tokens} tokens but {labels} labels")]
    LengthMismatch {
        index: usize,
        tokens: usize,
        labels: usize,
    },
    #[error("unsupported model format `{0}`")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `None` is the null label.
pub type Label = Option<Property>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub tokens: Vec<String>,
    pub labels: Vec<Label>,
    pub language: Language,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaggerModel {
    counts: BTreeMap<(Language, String), BTreeMap<Label, usize>>,
}

#[derive(Serialize, Deserialize)]
struct LabelCount {
    label: Label,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelRow {
    language: Language,
    token: String,
    counts: Vec<LabelCount>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    rows: Vec<ModelRow>,
}

pub fn train_tagger(examples: &[LabeledExample]) -> Result<TaggerModel, TaggerError> {
    if examples.is_empty() {
        return Err(TaggerError::Empty);
    }
    let mut model = TaggerModel::default();
    for (index, ex) in examples.iter().enumerate() {
        if ex.tokens.len() != ex.labels.len() {
            return Err(TaggerError::LengthMismatch {
                index,
                tokens: ex.tokens.len(),
                labels: ex.labels.len(),
            });
        }
        for (tok, label) in ex.tokens.iter().zip(&ex.labels) {
            *model
                .counts
                .entry((ex.language, tok.clone()))
                .or_default()
                .entry(label.clone())
                .or_default() += 1;
        }
    }
    Ok(model)
}

impl TaggerModel {
    /// Most frequent label of `token`; ties go to the smallest label, and
    /// the null label sorts first.
    pub fn label(&self, token: &str, language: Language) -> Option<&Property> {
        let counts = self.counts.get(&(language, token.to_string()))?;
        let mut best: Option<(&Label, usize)> = None;
        for (label, &n) in counts {
            if best.is_none_or(|(_, m)| n > m) {
                best = Some((label, n));
            }
        }
        best.and_then(|(l, _)| l.as_ref())
    }

    /// Every non-null label seen in training.
    pub fn known_labels(&self) -> impl Iterator<Item = &Property> {
        self.counts.values().flat_map(|c| c.keys()).flatten()
    }

    pub fn to_json(&self) -> Result<String, TaggerError> {
        let rows = self
            .counts
            .iter()
            .map(|((language, token), counts)| ModelRow {
                language: *language,
                token: token.clone(),
                counts: counts
                    .iter()
                    .map(|(label, count)| LabelCount {
                        label: label.clone(),
                        count: *count,
                    })
                    .collect(),
            })
            .collect();
        let doc = ModelDocument {
            format: MODEL_FORMAT.to_string(),
            rows,
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self, TaggerError> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT {
            return Err(TaggerError::Format(doc.format));
        }
        let mut model = TaggerModel::default();
        for row in doc.rows {
            let entry = model.counts.entry((row.language, row.token)).or_default();
            for c in row.counts {
                *entry.entry(c.label).or_default() += c.count;
            }
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, TaggerError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), TaggerError> {
        crate::corpus::write_atomic(path, self.to_json()?.as_bytes())?;
        Ok(())
    }
}

/// Labels `tokens` one by one. The result has a single target segment.
pub fn tag(tokens: &[String], language: Language, model: &TaggerModel) -> AnnotationResult {
    let mut result = AnnotationResult {
        segments: vec![Segment {
            role: crate::domain::TARGET_ROLE.to_string(),
            trigger: None,
            trigger_span: None,
            span: 0..tokens.len(),
            tokens: tokens.to_vec(),
        }],
        ..Default::default()
    };
    for (i, tok) in tokens.iter().enumerate() {
        match model.label(tok, language) {
            Some(p) => {
                let tagged = TaggedProperty::target(p.clone());
                result.properties.insert(tagged.clone());
                result.matches.push(Match {
                    span: i..i + 1,
                    property: tagged,
                    kind: MatchKind::Word,
                });
            }
            None => result.discarded.push(Discarded {
                token: tok.clone(),
                position: i,
            }),
        }
    }
    result
}

/// Per-token labels from a training alignment; every token of an aligned
/// span carries the span's property.
pub fn labeled_examples(items: &[TrainingItem], alignments: &[Vec<AlignedSpan>]) -> Vec<LabeledExample> {
    items
        .iter()
        .zip(alignments)
        .map(|(item, spans)| {
            let mut labels: Vec<Label> = vec![None; item.tokens.len()];
            for s in spans {
                for l in &mut labels[s.start..s.start + s.len] {
                    *l = Some(s.property.property.clone());
                }
            }
            LabeledExample {
                tokens: item.tokens.clone(),
                labels,
                language: item.language,
            }
        })
        .collect()
}
