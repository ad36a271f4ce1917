//! Word-to-property knowledge base.
//!
//! Entries map a normalized surface form (one to four tokens), optionally
//! conditioned on a head noun, to one property. Tables can be written by hand
//! (tab-separated or JSON) or induced from a small annotated training set.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, DomainSchema, Property, TaggedProperty};
use crate::parser::{nearest_noun, orient, split_on_relations};

/// Longest surface form, in tokens.
pub const MAX_SPAN: usize = 4;

pub const LEXICON_FORMAT: &str = "refanno-lexicon/1";

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("conflicting entries for {key}: {existing} vs {new}")]
    Conflict {
        key: String,
        existing: Property,
        new: Property,
    },
    #[error("entry has an empty surface form")]
    EmptySurface,
    #[error("surface form `{0}` is longer than {MAX_SPAN} tokens")]
    SurfaceTooLong(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("unsupported lexicon format `{0}`")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[serde(alias = "en")]
    English,
    #[serde(alias = "pt", alias = "pt-br")]
    Portuguese,
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::English => "english",
            Language::Portuguese => "portuguese",
        })
    }
}

impl FromStr for Language {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "english" | "en" => Ok(Language::English),
            "portuguese" | "pt" | "pt-br" => Ok(Language::Portuguese),
            other => Err(format!("unknown language `{other}` (expected english or portuguese)")),
        }
    }
}

/// Lowercases and strips surrounding punctuation; inner hyphens survive.
pub fn normalize(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LexicalEntry {
    pub language: Language,
    pub surface: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_noun: Option<String>,
    pub property: Property,
}

impl LexicalEntry {
    pub fn word(language: Language, word: &str, property: Property) -> Self {
        Self::phrase(language, word, property)
    }

    /// `surface` is split on whitespace and normalized.
    pub fn phrase(language: Language, surface: &str, property: Property) -> Self {
        LexicalEntry {
            language,
            surface: surface.split_whitespace().map(normalize).collect(),
            head_noun: None,
            property,
        }
    }

    pub fn pair(language: Language, word: &str, noun: &str, property: Property) -> Self {
        LexicalEntry {
            head_noun: Some(normalize(noun)),
            ..Self::word(language, word, property)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct EntryKey {
    language: Language,
    surface: Vec<String>,
    head_noun: Option<String>,
}

impl fmt::Display for EntryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:`{}`", self.language, self.surface.join(" "))?;
        if let Some(n) = &self.head_noun {
            write!(f, "+{n}")?;
        }
        Ok(())
    }
}

/// The mapping table `M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingTable {
    type_attribute: String,
    entries: BTreeMap<EntryKey, Property>,
    nouns: BTreeMap<Language, BTreeSet<String>>,
}

#[derive(Serialize, Deserialize)]
struct LexiconDocument {
    format: String,
    type_attribute: String,
    entries: Vec<LexicalEntry>,
    #[serde(default)]
    nouns: BTreeMap<Language, BTreeSet<String>>,
}

impl MappingTable {
    pub fn new(type_attribute: &str) -> Self {
        MappingTable {
            type_attribute: type_attribute.to_string(),
            entries: BTreeMap::new(),
            nouns: BTreeMap::new(),
        }
    }

    pub fn type_attribute(&self) -> &str {
        &self.type_attribute
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds an entry. Re-adding an identical entry is a no-op; a different
    /// property under an existing key is an error. Single words mapped to the
    /// type attribute become noun markers.
    pub fn insert(&mut self, entry: LexicalEntry) -> Result<(), LexiconError> {
        if entry.surface.is_empty() || entry.surface.iter().any(|t| t.is_empty()) {
            return Err(LexiconError::EmptySurface);
        }
        if entry.surface.len() > MAX_SPAN {
            return Err(LexiconError::SurfaceTooLong(entry.surface.join(" ")));
        }
        let key = EntryKey {
            language: entry.language,
            surface: entry.surface,
            head_noun: entry.head_noun,
        };
        if let Some(existing) = self.entries.get(&key) {
            if *existing != entry.property {
                return Err(LexiconError::Conflict {
                    key: key.to_string(),
                    existing: existing.clone(),
                    new: entry.property,
                });
            }
            return Ok(());
        }
        if key.surface.len() == 1 && key.head_noun.is_none() && entry.property.attribute == self.type_attribute {
            self.add_noun(key.language, &key.surface[0]);
        }
        self.entries.insert(key, entry.property);
        Ok(())
    }

    pub fn add_noun(&mut self, language: Language, token: &str) {
        let token = normalize(token);
        if !token.is_empty() {
            self.nouns.entry(language).or_default().insert(token);
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = LexicalEntry> + '_ {
        self.entries.iter().map(|(k, p)| LexicalEntry {
            language: k.language,
            surface: k.surface.clone(),
            head_noun: k.head_noun.clone(),
            property: p.clone(),
        })
    }

    pub fn nouns(&self, language: Language) -> impl Iterator<Item = &str> {
        self.nouns.get(&language).into_iter().flatten().map(String::as_str)
    }

    fn get(&self, language: Language, surface: &[String], head_noun: Option<&str>) -> Option<&Property> {
        // BTreeMap needs an owned key; surfaces are at most MAX_SPAN short strings.
        let key = EntryKey {
            language,
            surface: surface.to_vec(),
            head_noun: head_noun.map(str::to_string),
        };
        self.entries.get(&key)
    }

    pub fn lookup_pair(&self, word: &str, noun: &str, language: Language) -> Option<&Property> {
        self.get(language, &[word.to_string()], Some(noun))
    }

    pub fn lookup_word(&self, word: &str, language: Language) -> Option<&Property> {
        self.get(language, &[word.to_string()], None)
    }

    /// Longest entry starting at `position`, with its length in tokens.
    pub fn lookup_multiword(
        &self,
        tokens: &[String],
        position: usize,
        language: Language,
    ) -> Option<(&Property, usize)> {
        if position >= tokens.len() {
            return None;
        }
        let max = MAX_SPAN.min(tokens.len() - position);
        (1..=max)
            .rev()
            .find_map(|n| self.get(language, &tokens[position..position + n], None).map(|p| (p, n)))
    }

    pub fn is_noun(&self, word: &str, language: Language) -> bool {
        !word.is_empty() && self.nouns.get(&language).is_some_and(|s| s.contains(word))
    }

    /// Properties that are not legal under `schema`, with the entry that carries them.
    pub fn validate(&self, schema: &DomainSchema) -> Vec<(LexicalEntry, DomainError)> {
        self.entries()
            .filter_map(|e| schema.check_property(&e.property).err().map(|err| (e, err)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String, LexiconError> {
        let nouns = self
            .nouns
            .iter()
            .map(|(lang, set)| {
                let explicit: BTreeSet<String> = set
                    .iter()
                    .filter(|n| {
                        self.lookup_word(n, *lang)
                            .is_none_or(|p| p.attribute != self.type_attribute)
                    })
                    .cloned()
                    .collect();
                (*lang, explicit)
            })
            .filter(|(_, s)| !s.is_empty())
            .collect();
        let doc = LexiconDocument {
            format: LEXICON_FORMAT.to_string(),
            type_attribute: self.type_attribute.clone(),
            entries: self.entries().collect(),
            nouns,
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let doc: LexiconDocument = serde_json::from_str(text)?;
        if doc.format != LEXICON_FORMAT {
            return Err(LexiconError::Format(doc.format));
        }
        let mut table = MappingTable::new(&doc.type_attribute);
        for e in doc.entries {
            table.insert(e)?;
        }
        for (lang, nouns) in doc.nouns {
            for n in nouns {
                table.add_noun(lang, &n);
            }
        }
        Ok(table)
    }

    /// Tab-separated form: `language, surface, head noun, attribute, value`.
    /// A row with empty attribute and value only marks its surface as a noun.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# language\tsurface\thead_noun\tattribute\tvalue\n");
        for e in self.entries() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.language,
                e.surface.join(" "),
                e.head_noun.as_deref().unwrap_or(""),
                e.property.attribute,
                e.property.value
            ));
        }
        for (lang, nouns) in &self.nouns {
            for n in nouns {
                let derived = self
                    .lookup_word(n, *lang)
                    .is_some_and(|p| p.attribute == self.type_attribute);
                if !derived {
                    out.push_str(&format!("{lang}\t{n}\t\t\t\n"));
                }
            }
        }
        out
    }

    pub fn from_tsv(text: &str, type_attribute: &str) -> Result<Self, LexiconError> {
        let mut table = MappingTable::new(type_attribute);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
            let parse_err = |message: String| LexiconError::Parse { line, message };
            if fields.len() != 5 {
                return Err(parse_err(format!("expected 5 tab-separated fields, found {}", fields.len())));
            }
            let language: Language = fields[0].parse().map_err(parse_err)?;
            let (surface, noun, attribute, value) = (fields[1], fields[2], fields[3], fields[4]);
            if attribute.is_empty() && value.is_empty() {
                table.add_noun(language, surface);
                continue;
            }
            if attribute.is_empty() || value.is_empty() {
                return Err(parse_err("attribute and value must both be present".into()));
            }
            let mut entry = LexicalEntry::phrase(language, surface, Property::new(attribute, value));
            if !noun.is_empty() {
                entry.head_noun = Some(normalize(noun));
            }
            table.insert(entry).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(table)
    }

    /// Loads `.tsv`/`.txt` as tab-separated and anything else as JSON.
    pub fn load(path: &Path, type_attribute: &str) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => Self::from_tsv(&text, type_attribute),
            _ => Self::from_json(&text),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), LexiconError> {
        let text = match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => self.to_tsv(),
            _ => self.to_json()?,
        };
        crate::corpus::write_atomic(path, text.as_bytes())?;
        Ok(())
    }
}

/// One annotated description used for induction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingItem {
    pub tokens: Vec<String>,
    pub gold: Vec<TaggedProperty>,
    pub language: Language,
}

/// A span of training tokens aligned with one gold property.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedSpan {
    pub start: usize,
    pub len: usize,
    pub property: TaggedProperty,
}

/// Surface form of an n-gram used as a count key.
type Gram = (Language, Vec<String>);

#[derive(Default)]
struct Cooccurrence {
    /// Occurrences of each n-gram.
    grams: HashMap<Gram, usize>,
    /// Gold instances of each property, per language.
    props: HashMap<(Language, Property), usize>,
    /// Per-item min(occurrences, instances), summed.
    joint: HashMap<(Gram, Property), usize>,
    /// Items per language, and items containing a gram, a property, or both.
    items: HashMap<Language, usize>,
    gram_items: HashMap<Gram, usize>,
    prop_items: HashMap<(Language, Property), usize>,
    joint_items: HashMap<(Gram, Property), usize>,
}

impl Cooccurrence {
    fn association(&self, gram: &Gram, p: &Property) -> f64 {
        let joint = *self.joint.get(&(gram.clone(), p.clone())).unwrap_or(&0) as f64;
        if joint == 0.0 {
            return 0.0;
        }
        let n = self.grams[gram] as f64;
        let f = self.props[&(gram.0, p.clone())] as f64;
        2.0 * joint / (n + f)
    }

    /// Log-likelihood ratio (G²) of gram and property presence over items;
    /// zero unless the two are positively associated.
    fn likelihood_ratio(&self, gram: &Gram, p: &Property) -> f64 {
        let n = self.items[&gram.0] as f64;
        let a = *self.joint_items.get(&(gram.clone(), p.clone())).unwrap_or(&0) as f64;
        let g = self.gram_items[gram] as f64;
        let f = *self.prop_items.get(&(gram.0, p.clone())).unwrap_or(&0) as f64;
        let (b, c) = (g - a, f - a);
        let d = n - a - b - c;
        if a * d <= b * c {
            return 0.0;
        }
        let term = |o: f64, e: f64| if o > 0.0 { o * (o / e).ln() } else { 0.0 };
        2.0 * (term(a, g * f / n)
            + term(b, g * (n - f) / n)
            + term(c, (n - g) * f / n)
            + term(d, (n - g) * (n - f) / n))
    }
}

fn grams_of(tokens: &[String]) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..tokens.len()).flat_map(move |start| {
        (1..=MAX_SPAN.min(tokens.len() - start)).map(move |len| (start, len))
    })
}

/// Gold with numbered landmark roles folded back to the role they count from
/// (`near-lm2` becomes `near-lm`), since entries store the base role.
fn canonical_gold(item: &TrainingItem, schema: &DomainSchema) -> Result<Vec<TaggedProperty>, LexiconError> {
    item.gold
        .iter()
        .map(|t| {
            let mut p = t.property.clone();
            if schema.is_relational(&p)? {
                p.value = schema.base_role(&p.value).to_string();
            }
            schema.check_property(&p)?;
            Ok(TaggedProperty::new(t.role.clone(), p))
        })
        .collect()
}

fn is_anchor(tokens: &[String], p: &Property) -> bool {
    let value: Vec<String> = p
        .value
        .split(|c: char| c == '-' || c == '_' || c.is_whitespace())
        .map(normalize)
        .collect();
    tokens == value.as_slice()
}

struct Aligner {
    counts: Cooccurrence,
}

impl Aligner {
    fn new(items: &[(&TrainingItem, Vec<TaggedProperty>)]) -> Self {
        let mut counts = Cooccurrence::default();
        for (item, gold) in items {
            let mut instances: HashMap<&Property, usize> = HashMap::new();
            for t in gold {
                *instances.entry(&t.property).or_default() += 1;
            }
            *counts.items.entry(item.language).or_default() += 1;
            for (p, n) in &instances {
                *counts.props.entry((item.language, (*p).clone())).or_default() += n;
                *counts.prop_items.entry((item.language, (*p).clone())).or_default() += 1;
            }
            let mut local: HashMap<Vec<String>, usize> = HashMap::new();
            for (s, l) in grams_of(&item.tokens) {
                *local.entry(item.tokens[s..s + l].to_vec()).or_default() += 1;
            }
            for (g, occ) in local {
                let gram = (item.language, g);
                *counts.grams.entry(gram.clone()).or_default() += occ;
                *counts.gram_items.entry(gram.clone()).or_default() += 1;
                for (p, inst) in &instances {
                    *counts.joint.entry((gram.clone(), (*p).clone())).or_default() += occ.min(*inst);
                    *counts.joint_items.entry((gram.clone(), (*p).clone())).or_default() += 1;
                }
            }
        }
        Aligner { counts }
    }

    /// One-to-one linking of spans and gold instances that maximizes, in
    /// order, the number of spans spelling their value, the summed likelihood
    /// ratio and the summed Dice. Greedy linking seeds a bounded search.
    fn align(&self, item: &TrainingItem, gold: &[TaggedProperty]) -> Vec<AlignedSpan> {
        let mut per_gold: Vec<Vec<Candidate>> = vec![Vec::new(); gold.len()];
        for (start, len) in grams_of(&item.tokens) {
            let span = &item.tokens[start..start + len];
            let gram: Gram = (item.language, span.to_vec());
            for (gi, t) in gold.iter().enumerate() {
                let dice = self.counts.association(&gram, &t.property);
                if dice <= 0.0 {
                    continue;
                }
                if len > 1 {
                    // Phrases only when they beat each of their words.
                    let best_part = span
                        .iter()
                        .map(|w| self.counts.association(&(item.language, vec![w.clone()]), &t.property))
                        .fold(0.0, f64::max);
                    if dice <= best_part {
                        continue;
                    }
                }
                per_gold[gi].push(Candidate {
                    weight: Weight {
                        anchors: is_anchor(span, &t.property) as usize,
                        ratio: self.counts.likelihood_ratio(&gram, &t.property),
                        dice,
                    },
                    start,
                    len,
                });
            }
        }
        for cands in &mut per_gold {
            cands.sort_by(|a, b| b.rank(a));
            cands.truncate(MAX_CANDIDATES);
        }

        let mut search = Search::new(&per_gold, item.tokens.len());
        search.greedy();
        search.run(0, Weight::default());
        let mut out: Vec<AlignedSpan> = search
            .best
            .iter()
            .enumerate()
            .filter_map(|(gi, pick)| {
                let c = &per_gold[gi][(*pick)?];
                Some(AlignedSpan {
                    start: c.start,
                    len: c.len,
                    property: gold[gi].clone(),
                })
            })
            .collect();
        out.sort_by_key(|s| s.start);
        out
    }
}

/// Candidate spans kept per gold instance.
const MAX_CANDIDATES: usize = 8;
/// Search nodes per item before settling for the best assignment found.
const SEARCH_BUDGET: usize = 100_000;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Weight {
    anchors: usize,
    ratio: f64,
    dice: f64,
}

impl Weight {
    fn plus(self, o: Weight) -> Weight {
        Weight {
            anchors: self.anchors + o.anchors,
            ratio: self.ratio + o.ratio,
            dice: self.dice + o.dice,
        }
    }

    fn max(self, o: Weight) -> Weight {
        Weight {
            anchors: self.anchors.max(o.anchors),
            ratio: self.ratio.max(o.ratio),
            dice: self.dice.max(o.dice),
        }
    }

    fn cmp(&self, o: &Weight) -> std::cmp::Ordering {
        self.anchors
            .cmp(&o.anchors)
            .then(self.ratio.total_cmp(&o.ratio))
            .then(self.dice.total_cmp(&o.dice))
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    weight: Weight,
    start: usize,
    len: usize,
}

impl Candidate {
    fn rank(&self, o: &Candidate) -> std::cmp::Ordering {
        self.weight
            .cmp(&o.weight)
            .then(self.len.cmp(&o.len))
            .then(o.start.cmp(&self.start))
    }
}

struct Search<'a> {
    cands: &'a [Vec<Candidate>],
    /// Component-wise best weight still obtainable from gold `i` onwards.
    bound: Vec<Weight>,
    used: Vec<bool>,
    pick: Vec<Option<usize>>,
    best: Vec<Option<usize>>,
    best_weight: Weight,
    nodes: usize,
}

impl<'a> Search<'a> {
    fn new(cands: &'a [Vec<Candidate>], tokens: usize) -> Self {
        let mut bound = vec![Weight::default(); cands.len() + 1];
        for i in (0..cands.len()).rev() {
            let top = cands[i].iter().fold(Weight::default(), |w, c| w.max(c.weight));
            bound[i] = bound[i + 1].plus(top);
        }
        Search {
            cands,
            bound,
            used: vec![false; tokens],
            pick: vec![None; cands.len()],
            best: vec![None; cands.len()],
            best_weight: Weight::default(),
            nodes: 0,
        }
    }

    fn free(&self, c: &Candidate) -> bool {
        !self.used[c.start..c.start + c.len].iter().any(|u| *u)
    }

    fn mark(&mut self, c: &Candidate, value: bool) {
        self.used[c.start..c.start + c.len].iter_mut().for_each(|u| *u = value);
    }

    /// Links the strongest remaining candidate first until none fits.
    fn greedy(&mut self) {
        let mut flat: Vec<(usize, usize)> = self
            .cands
            .iter()
            .enumerate()
            .flat_map(|(g, cs)| (0..cs.len()).map(move |k| (g, k)))
            .collect();
        flat.sort_by(|&(ga, ka), &(gb, kb)| self.cands[gb][kb].rank(&self.cands[ga][ka]).then(ga.cmp(&gb)));
        let mut weight = Weight::default();
        for (g, k) in flat {
            let c = &self.cands[g][k];
            if self.best[g].is_none() && self.free(c) {
                self.mark(c, true);
                self.best[g] = Some(k);
                weight = weight.plus(c.weight);
            }
        }
        self.used.iter_mut().for_each(|u| *u = false);
        self.best_weight = weight;
    }

    fn run(&mut self, g: usize, acc: Weight) {
        self.nodes += 1;
        if self.nodes > SEARCH_BUDGET || acc.plus(self.bound[g]).cmp(&self.best_weight).is_le() {
            return;
        }
        if g == self.cands.len() {
            self.best_weight = acc;
            self.best = self.pick.clone();
            return;
        }
        for k in 0..self.cands[g].len() {
            let c = &self.cands[g][k];
            if !self.free(c) {
                continue;
            }
            let (c, w) = (c.clone(), c.weight);
            self.mark(&c, true);
            self.pick[g] = Some(k);
            self.run(g + 1, acc.plus(w));
            self.pick[g] = None;
            self.mark(&c, false);
        }
        self.run(g + 1, acc);
    }
}

/// Aligns every training item's tokens with its gold properties.
///
/// Alignment is one-to-one: each gold instance is linked to at most one
/// span. Per item, the links maximize first the number of spans that spell
/// their property value, then the summed log-likelihood ratio of span and
/// property presence over the training items, then the summed Dice
/// association. Words that occur in every item carry no evidence under the
/// ratio, so they cannot crowd out rare synonyms. Items with empty gold get
/// no alignment.
pub fn align_training(
    training: &[TrainingItem],
    schema: &DomainSchema,
) -> Result<Vec<Vec<AlignedSpan>>, LexiconError> {
    let prepared = training
        .iter()
        .map(|item| Ok((item, canonical_gold(item, schema)?)))
        .collect::<Result<Vec<_>, LexiconError>>()?;
    let usable: Vec<_> = prepared.iter().filter(|(_, g)| !g.is_empty()).cloned().collect();
    let aligner = Aligner::new(&usable);
    Ok(prepared
        .iter()
        .map(|(item, gold)| {
            if gold.is_empty() {
                Vec::new()
            } else {
                aligner.align(item, gold)
            }
        })
        .collect())
}

/// Majority winner: the most frequent property if it covers more than half
/// of `total` occurrences. Ties go to the smallest property.
fn majority(counts: &BTreeMap<Property, usize>, total: usize) -> Option<&Property> {
    let (best, n) = counts
        .iter()
        .fold(None, |acc: Option<(&Property, usize)>, (p, n)| match acc {
            Some((_, m)) if m >= *n => acc,
            _ => Some((p, *n)),
        })?;
    (2 * n > total).then_some(best)
}

/// Induces a mapping table from annotated descriptions.
///
/// Tokens and 2-4 token phrases are mapped to the property they are aligned
/// with in a strict majority of their occurrences. Words that map to the
/// schema's type attribute, and words naming the part in a dotted attribute
/// (`beard` for `beard.colour`), become head nouns. A word whose majority
/// property differs between head nouns also gets noun-conditioned entries.
/// Per modifier: how often it was seen and the properties it aligned to.
type ModifierCounts = (usize, BTreeMap<Property, usize>);

pub fn induce_lexicon(training: &[TrainingItem], schema: &DomainSchema) -> Result<MappingTable, LexiconError> {
    if training.is_empty() {
        return Err(LexiconError::EmptyTraining);
    }
    let alignments = align_training(training, schema)?;

    let mut occurrences: HashMap<Gram, usize> = HashMap::new();
    let mut aligned: BTreeMap<Gram, BTreeMap<Property, usize>> = BTreeMap::new();
    let mut parts: BTreeSet<(Language, String)> = BTreeSet::new();
    for (item, spans) in training.iter().zip(&alignments) {
        if item.gold.is_empty() {
            continue;
        }
        for (s, l) in grams_of(&item.tokens) {
            *occurrences.entry((item.language, item.tokens[s..s + l].to_vec())).or_default() += 1;
        }
        for span in spans {
            let gram = (item.language, item.tokens[span.start..span.start + span.len].to_vec());
            *aligned
                .entry(gram)
                .or_default()
                .entry(span.property.property.clone())
                .or_default() += 1;
        }
        for t in &item.gold {
            if let Some((part, _)) = t.property.attribute.split_once('.') {
                parts.insert((item.language, normalize(part)));
            }
        }
    }

    let mut table = MappingTable::new(&schema.type_attribute);
    for (gram, counts) in &aligned {
        if let Some(p) = majority(counts, occurrences[gram]) {
            table.insert(LexicalEntry {
                language: gram.0,
                surface: gram.1.clone(),
                head_noun: None,
                property: p.clone(),
            })?;
        }
    }
    for (lang, part) in parts {
        if occurrences.contains_key(&(lang, vec![part.clone()])) {
            table.add_noun(lang, &part);
        }
    }

    // Noun-conditioned entries, with head nouns found the way the parser finds them.
    let mut by_noun: BTreeMap<(Language, String), BTreeMap<String, ModifierCounts>> = BTreeMap::new();
    for (item, spans) in training.iter().zip(&alignments) {
        if item.gold.is_empty() {
            continue;
        }
        let labels: HashMap<usize, &Property> = spans
            .iter()
            .filter(|s| s.len == 1)
            .map(|s| (s.start, &s.property.property))
            .collect();
        for seg in split_on_relations(&item.tokens, item.language, &table, schema) {
            let positions: Vec<usize> = orient(&seg.span.clone().collect::<Vec<_>>(), item.language);
            let oriented: Vec<String> = positions.iter().map(|&i| item.tokens[i].clone()).collect();
            for (j, &pos) in positions.iter().enumerate() {
                let Some(noun) = nearest_noun(j, &oriented, item.language, &table) else {
                    continue;
                };
                let slot = by_noun
                    .entry((item.language, item.tokens[pos].clone()))
                    .or_default()
                    .entry(noun.to_string())
                    .or_default();
                slot.0 += 1;
                if let Some(p) = labels.get(&pos) {
                    *slot.1.entry((*p).clone()).or_default() += 1;
                }
            }
        }
    }
    for ((lang, word), groups) in by_noun {
        let winners: BTreeMap<&String, &Property> = groups
            .iter()
            .filter_map(|(noun, (total, counts))| majority(counts, *total).map(|p| (noun, p)))
            .collect();
        let distinct: BTreeSet<&Property> = winners.values().copied().collect();
        if distinct.len() < 2 {
            continue;
        }
        for (noun, p) in winners {
            table.insert(LexicalEntry {
                language: lang,
                surface: vec![word.clone()],
                head_noun: Some(noun.clone()),
                property: p.clone(),
            })?;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AttributeDef;
    use crate::parser::tokenize;

    fn p(a: &str, v: &str) -> Property {
        Property::new(a, v)
    }

    fn item(text: &str, gold: &[(&str, &str)]) -> TrainingItem {
        TrainingItem {
            tokens: tokenize(text, Language::English),
            gold: gold.iter().map(|(a, v)| TaggedProperty::target(p(a, v))).collect(),
            language: Language::English,
        }
    }

    fn furniture() -> DomainSchema {
        DomainSchema::new(
            "furniture",
            vec![
                AttributeDef::taxonomic("type", ["couch", "chair", "desk", "person"]),
                AttributeDef::taxonomic("colour", ["red", "blue", "green"]),
                AttributeDef::taxonomic("size", ["large", "small"]),
                AttributeDef::taxonomic("hair.colour", ["dark", "light"]),
                AttributeDef::taxonomic("beard.colour", ["dark", "light"]),
                AttributeDef::relational("above"),
            ],
            &["lm"],
        )
    }

    fn table() -> MappingTable {
        let en = Language::English;
        let mut m = MappingTable::new("type");
        m.insert(LexicalEntry::word(en, "sphere", p("type", "ball"))).unwrap();
        m.insert(LexicalEntry::word(en, "ball", p("type", "ball"))).unwrap();
        for w in ["large", "big", "larger"] {
            m.insert(LexicalEntry::word(en, w, p("size", "large"))).unwrap();
        }
        m.insert(LexicalEntry::phrase(en, "on top of", p("above", "lm"))).unwrap();
        m.insert(LexicalEntry::word(en, "above", p("above", "lm"))).unwrap();
        m.insert(LexicalEntry::pair(en, "dark", "beard", p("beard.colour", "dark"))).unwrap();
        m.insert(LexicalEntry::pair(en, "dark", "man", p("hair.colour", "dark"))).unwrap();
        m
    }

    #[test]
    fn normalize_tokens() {
        assert_eq!(normalize("Red,"), "red");
        assert_eq!(normalize("on-top"), "on-top");
        assert_eq!(normalize("  "), "");
        assert_eq!(normalize("(Vermelha)."), "vermelha");
    }

    #[test]
    fn lookups() {
        let m = table();
        let en = Language::English;
        assert_eq!(m.lookup_pair("dark", "beard", en), Some(&p("beard.colour", "dark")));
        assert_eq!(m.lookup_pair("dark", "man", en), Some(&p("hair.colour", "dark")));
        assert_eq!(m.lookup_pair("red", "nonsense-noun", en), None);
        assert_eq!(m.lookup_word("sphere", en), Some(&p("type", "ball")));
        assert_eq!(m.lookup_word("larger", en), Some(&p("size", "large")));
        assert_eq!(m.lookup_word("the", en), None);
        assert_eq!(m.lookup_word("sphere", Language::Portuguese), None);
    }

    #[test]
    fn multiword_prefers_longest() {
        let m = table();
        let en = Language::English;
        let t = |s: &str| tokenize(s, en);
        assert_eq!(m.lookup_multiword(&t("on top of"), 0, en), Some((&p("above", "lm"), 3)));
        assert_eq!(m.lookup_multiword(&t("above"), 0, en), Some((&p("above", "lm"), 1)));
        assert_eq!(m.lookup_multiword(&t("of top"), 0, en), None);
        assert_eq!(m.lookup_multiword(&t("above"), 3, en), None);
    }

    #[test]
    fn noun_markers() {
        let m = table();
        assert!(m.is_noun("ball", Language::English));
        assert!(!m.is_noun("large", Language::English));
        assert!(!m.is_noun("", Language::English));
    }

    #[test]
    fn conflicting_insert_is_rejected() {
        let mut m = table();
        let err = m.insert(LexicalEntry::word(Language::English, "ball", p("type", "cube")));
        assert!(matches!(err, Err(LexiconError::Conflict { .. })));
        m.insert(LexicalEntry::word(Language::English, "ball", p("type", "ball"))).unwrap();
    }

    #[test]
    fn surface_length_is_capped() {
        let mut m = table();
        let long = LexicalEntry::phrase(Language::English, "a b c d e", p("type", "ball"));
        assert!(matches!(m.insert(long), Err(LexiconError::SurfaceTooLong(_))));
    }

    #[test]
    fn tsv_and_json_round_trip() {
        let mut m = table();
        m.add_noun(Language::English, "beard");
        let tsv = m.to_tsv();
        assert!(tsv.contains("english\ton top of\t\tabove\tlm"));
        assert!(tsv.contains("english\tbeard\t\t\t"));
        assert_eq!(MappingTable::from_tsv(&tsv, "type").unwrap(), m);
        assert_eq!(MappingTable::from_json(&m.to_json().unwrap()).unwrap(), m);
    }

    #[test]
    fn tsv_errors_name_the_line() {
        let err = MappingTable::from_tsv("english\tred\n", "type").unwrap_err();
        assert!(err.to_string().starts_with("line 1"));
        let err = MappingTable::from_tsv("# c\nklingon\tred\t\tcolour\tred\n", "type").unwrap_err();
        assert!(err.to_string().starts_with("line 2"));
    }

    #[test]
    fn induce_from_single_item() {
        let m = induce_lexicon(&[item("the red couch", &[("type", "couch"), ("colour", "red")])], &furniture())
            .unwrap();
        let en = Language::English;
        assert_eq!(m.lookup_word("couch", en), Some(&p("type", "couch")));
        assert_eq!(m.lookup_word("red", en), Some(&p("colour", "red")));
        assert_eq!(m.lookup_word("the", en), None);
        assert!(m.is_noun("couch", en));
        assert!(!m.is_noun("red", en));
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn induce_pair_entries() {
        let training = [
            item("dark man", &[("hair.colour", "dark"), ("type", "person")]),
            item("dark beard", &[("beard.colour", "dark")]),
        ];
        let m = induce_lexicon(&training, &furniture()).unwrap();
        let en = Language::English;
        assert_eq!(m.lookup_pair("dark", "man", en), Some(&p("hair.colour", "dark")));
        assert_eq!(m.lookup_pair("dark", "beard", en), Some(&p("beard.colour", "dark")));
        // 1:1 split across two properties is not a majority.
        assert_eq!(m.lookup_word("dark", en), None);
    }

    #[test]
    fn induce_rejects_empty_training() {
        assert!(matches!(induce_lexicon(&[], &furniture()), Err(LexiconError::EmptyTraining)));
    }

    #[test]
    fn induce_rejects_illegal_gold() {
        let bad = [item("the purple couch", &[("colour", "purple")])];
        assert!(matches!(induce_lexicon(&bad, &furniture()), Err(LexiconError::Domain(_))));
    }

    #[test]
    fn empty_gold_items_are_skipped() {
        let training = [item("the red couch", &[("type", "couch"), ("colour", "red")]), item("the thing", &[])];
        let m = induce_lexicon(&training, &furniture()).unwrap();
        assert_eq!(m.lookup_word("thing", Language::English), None);
        assert_eq!(m.lookup_word("the", Language::English), None);
    }

    #[test]
    fn induce_majority_and_synonyms() {
        let training = [
            item("the big chair", &[("type", "chair"), ("size", "large")]),
            item("the large desk", &[("type", "desk"), ("size", "large")]),
            item("the big blue desk", &[("type", "desk"), ("size", "large"), ("colour", "blue")]),
            item("the small chair", &[("type", "chair"), ("size", "small")]),
            item("a big chair", &[("type", "chair"), ("size", "large")]),
        ];
        let m = induce_lexicon(&training, &furniture()).unwrap();
        let en = Language::English;
        assert_eq!(m.lookup_word("big", en), Some(&p("size", "large")));
        assert_eq!(m.lookup_word("chair", en), Some(&p("type", "chair")));
        assert_eq!(m.lookup_word("blue", en), Some(&p("colour", "blue")));
        assert_eq!(m.lookup_word("the", en), None);
        for e in m.entries() {
            assert!(furniture().check_property(&e.property).is_ok());
        }
    }

    #[test]
    fn induce_phrase_when_words_are_ambiguous() {
        let rel = |text: &str, gold: &[(&str, &str)]| item(text, gold);
        let training = [
            rel("chair on top of desk", &[("type", "chair"), ("above", "lm")]),
            rel("couch on top of chair", &[("type", "couch"), ("above", "lm")]),
            rel("the top chair", &[("type", "chair")]),
            rel("the couch on the left", &[("type", "couch")]),
            rel("the chair left of the desk", &[("type", "chair")]),
        ];
        let m = induce_lexicon(&training, &furniture()).unwrap();
        let en = Language::English;
        let toks = tokenize("on top of", en);
        assert_eq!(m.lookup_multiword(&toks, 0, en).map(|(p, n)| (p.clone(), n)), Some((p("above", "lm"), 3)));
    }

    #[test]
    fn induction_is_deterministic() {
        let training = [
            item("the big chair", &[("type", "chair"), ("size", "large")]),
            item("the red couch", &[("type", "couch"), ("colour", "red")]),
        ];
        let a = induce_lexicon(&training, &furniture()).unwrap();
        let b = induce_lexicon(&training, &furniture()).unwrap();
        assert_eq!(a, b);
    }
}
