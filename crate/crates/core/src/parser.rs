//! Heuristic shallow parser.
//!
//! Descriptions are cut into one segment per referent at relational words
//! (`near`, `on top of`), then every word is looked up together with its
//! nearest head noun and, failing that, on its own. English input is read
//! back to front so the head noun comes before its modifiers, as it does in
//! Portuguese surface order.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::domain::{DomainSchema, Property, PropertySet, TaggedProperty, TARGET_ROLE};
use crate::lexicon::{normalize, Language, MappingTable};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionInput {
    pub tokens: Vec<String>,
    pub language: Language,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
}

impl DescriptionInput {
    pub fn from_text(raw: &str, language: Language) -> Self {
        DescriptionInput {
            tokens: tokenize(raw, language),
            language,
            scene_id: None,
        }
    }
}

/// The part of a description that talks about one referent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    /// `target` for the first segment, `lm`, `lm2`, ... afterwards.
    pub role: String,
    /// Relational property whose words opened this segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<Property>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger_span: Option<Range<usize>>,
    /// Surface positions covered by the segment (trigger words excluded).
    pub span: Range<usize>,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MatchKind {
    /// Relational words that separate two referents.
    Trigger,
    /// Multi-word surface form.
    Phrase,
    /// Word read together with its head noun.
    Pair { noun: String },
    Word,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub span: Range<usize>,
    pub property: TaggedProperty,
    #[serde(flatten)]
    pub kind: MatchKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discarded {
    pub token: String,
    pub position: usize,
}

/// Output of the parser: the property set `L` plus the structure behind it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub properties: BTreeSet<TaggedProperty>,
    pub segments: Vec<Segment>,
    pub matches: Vec<Match>,
    pub discarded: Vec<Discarded>,
}

impl AnnotationResult {
    /// All properties with role tags dropped.
    pub fn property_set(&self) -> PropertySet {
        self.properties.iter().map(|t| t.property.clone()).collect()
    }

    pub fn role_properties(&self, role: &str) -> PropertySet {
        self.properties
            .iter()
            .filter(|t| t.role == role)
            .map(|t| t.property.clone())
            .collect()
    }

    pub fn target_properties(&self) -> PropertySet {
        self.role_properties(TARGET_ROLE)
    }

    /// Number of surface tokens consumed by matches (triggers included).
    pub fn consumed_tokens(&self) -> usize {
        self.matches.iter().map(|m| m.span.len()).sum()
    }

    pub fn unknown_tokens(&self) -> Vec<String> {
        self.discarded.iter().map(|d| d.token.clone()).collect()
    }
}

/// Splits on whitespace and normalizes every token, dropping empty ones.
pub fn tokenize(raw: &str, _language: Language) -> Vec<String> {
    raw.split_whitespace()
        .map(normalize)
        .filter(|t| !t.is_empty())
        .collect()
}

/// Puts the head noun first: English is reversed, Portuguese kept as is.
pub fn orient<T: Clone>(tokens: &[T], language: Language) -> Vec<T> {
    let mut out = tokens.to_vec();
    if language == Language::English {
        out.reverse();
    }
    out
}

fn landmark_role(base: &str, ordinal: usize) -> String {
    if ordinal == 1 {
        base.to_string()
    } else {
        format!("{base}{ordinal}")
    }
}

/// Cuts `tokens` (surface order) at every relational match.
///
/// The first segment describes the target; each relational match opens a
/// new landmark segment whose role is the matched value, numbered from the
/// second landmark on (`lm`, `lm2`, `lm3`).
pub fn split_on_relations(
    tokens: &[String],
    language: Language,
    lexicon: &MappingTable,
    schema: &DomainSchema,
) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut current = Segment {
        role: TARGET_ROLE.to_string(),
        trigger: None,
        trigger_span: None,
        span: 0..0,
        tokens: Vec::new(),
    };
    let mut landmarks = 0;
    let mut pos = 0;
    while pos < tokens.len() {
        let relation = lexicon
            .lookup_multiword(tokens, pos, language)
            .filter(|(p, _)| schema.is_relational(p).unwrap_or(false));
        match relation {
            Some((p, len)) => {
                current.span.end = pos;
                current.tokens = tokens[current.span.clone()].to_vec();
                segments.push(current);
                landmarks += 1;
                let role = landmark_role(&p.value, landmarks);
                current = Segment {
                    trigger: Some(Property::new(p.attribute.clone(), role.clone())),
                    role,
                    trigger_span: Some(pos..pos + len),
                    span: pos + len..pos + len,
                    tokens: Vec::new(),
                };
                pos += len;
            }
            None => pos += 1,
        }
    }
    current.span.end = tokens.len();
    current.tokens = tokens[current.span.clone()].to_vec();
    segments.push(current);
    segments
}

/// Closest noun to `position` inside `oriented`, looking at earlier
/// positions before later ones at equal distance.
pub fn nearest_noun<'a>(
    position: usize,
    oriented: &'a [String],
    language: Language,
    lexicon: &MappingTable,
) -> Option<&'a str> {
    (1..oriented.len())
        .flat_map(|d| [position.checked_sub(d), position.checked_add(d)])
        .flatten()
        .filter(|&i| i < oriented.len())
        .map(|i| oriented[i].as_str())
        .find(|t| lexicon.is_noun(t, language))
}

/// Annotates a tokenized description. Unknown words end up in
/// `discarded`; the property set may be partial or empty.
pub fn annotate(
    input: &DescriptionInput,
    lexicon: &MappingTable,
    schema: &DomainSchema,
) -> AnnotationResult {
    let language = input.language;
    let tokens = &input.tokens;
    let segments = split_on_relations(tokens, language, lexicon, schema);
    let mut result = AnnotationResult::default();

    for seg in &segments {
        if let (Some(trigger), Some(span)) = (&seg.trigger, &seg.trigger_span) {
            let tagged = TaggedProperty::target(trigger.clone());
            result.properties.insert(tagged.clone());
            result.matches.push(Match {
                span: span.clone(),
                property: tagged,
                kind: MatchKind::Trigger,
            });
        }

        // Multi-word forms first, longest match left to right.
        let mut taken = vec![false; seg.tokens.len()];
        let mut i = 0;
        while i < seg.tokens.len() {
            match lexicon.lookup_multiword(&seg.tokens, i, language) {
                Some((p, len)) if len > 1 => {
                    let tagged = TaggedProperty::new(seg.role.clone(), p.clone());
                    result.properties.insert(tagged.clone());
                    let start = seg.span.start + i;
                    result.matches.push(Match {
                        span: start..start + len,
                        property: tagged,
                        kind: MatchKind::Phrase,
                    });
                    taken[i..i + len].iter_mut().for_each(|t| *t = true);
                    i += len;
                }
                _ => i += 1,
            }
        }

        let positions: Vec<usize> = orient(&(0..seg.tokens.len()).collect::<Vec<_>>(), language);
        let oriented: Vec<String> = positions.iter().map(|&i| seg.tokens[i].clone()).collect();
        for (j, &local) in positions.iter().enumerate() {
            if taken[local] {
                continue;
            }
            let word = &oriented[j];
            let surface = seg.span.start + local;
            let noun = nearest_noun(j, &oriented, language, lexicon);
            let hit = noun
                .and_then(|np| {
                    lexicon.lookup_pair(word, np, language).map(|p| {
                        (
                            p,
                            MatchKind::Pair {
                                noun: np.to_string(),
                            },
                        )
                    })
                })
                .or_else(|| lexicon.lookup_word(word, language).map(|p| (p, MatchKind::Word)));
            match hit {
                Some((p, kind)) => {
                    let tagged = TaggedProperty::new(seg.role.clone(), p.clone());
                    result.properties.insert(tagged.clone());
                    result.matches.push(Match {
                        span: surface..surface + 1,
                        property: tagged,
                        kind,
                    });
                }
                None => result.discarded.push(Discarded {
                    token: word.clone(),
                    position: surface,
                }),
            }
        }
    }

    result.matches.sort_by_key(|m| m.span.start);
    result.discarded.sort_by_key(|d| d.position);
    result.segments = segments;
    result
}

/// Tokenizes and annotates raw text.
pub fn annotate_text(
    raw: &str,
    language: Language,
    lexicon: &MappingTable,
    schema: &DomainSchema,
) -> AnnotationResult {
    annotate(&DescriptionInput::from_text(raw, language), lexicon, schema)
}
