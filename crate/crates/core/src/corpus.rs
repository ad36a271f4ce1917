//! Corpus files: schema, scenes and gold-annotated descriptions in one JSON
//! document, seeded train/test splits and a TUNA-style XML importer.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AttributeDef, DomainError, DomainSchema, Property, Scene, SceneObject, SchemaViolation, TaggedProperty,
    TARGET_ROLE,
};
use crate::lexicon::{Language, TrainingItem};
use crate::parser::tokenize;

pub const CORPUS_FORMAT: &str = "refanno-corpus/1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported corpus format `{0}` (expected {CORPUS_FORMAT})")]
    Format(String),
    #[error("invalid schema: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Schema(Vec<SchemaViolation>),
    #[error("item `{item}`, field `{field}`: {message}")]
    Item {
        item: String,
        field: &'static str,
        message: String,
    },
    #[error(transparent)]
    Scene(DomainError),
    #[error("train fraction must lie strictly between 0 and 1 (got {0})")]
    Fraction(f64),
    #[error("{0}")]
    Import(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    pub scene_id: String,
    pub description: String,
    pub language: Language,
    /// Gold properties; landmark properties carry their role when the source encodes them.
    pub gold: Vec<TaggedProperty>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub format: String,
    pub name: String,
    pub schema: DomainSchema,
    #[serde(default)]
    pub scenes: Vec<Scene>,
    #[serde(default)]
    pub items: Vec<CorpusItem>,
}

impl Corpus {
    pub fn new(name: &str, schema: DomainSchema) -> Self {
        Corpus {
            format: CORPUS_FORMAT.to_string(),
            name: name.to_string(),
            schema,
            scenes: Vec::new(),
            items: Vec::new(),
        }
    }

    pub fn scene(&self, id: &str) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.id == id)
    }

    pub fn item(&self, id: &str) -> Option<&CorpusItem> {
        self.items.iter().find(|i| i.id == id)
    }

    /// True when some gold property belongs to a landmark.
    pub fn gold_encodes_roles(&self) -> bool {
        self.items.iter().flat_map(|i| &i.gold).any(|t| !t.is_target())
    }

    /// Gold set of `item` for scoring: role tags kept only when `with_roles`.
    pub fn gold_set(item: &CorpusItem, with_roles: bool) -> BTreeSet<TaggedProperty> {
        project(item.gold.iter().cloned(), with_roles)
    }

    pub fn training_items(&self) -> Vec<TrainingItem> {
        self.items
            .iter()
            .map(|i| TrainingItem {
                tokens: tokenize(&i.description, i.language),
                gold: i.gold.clone(),
                language: i.language,
            })
            .collect()
    }

    /// Checks every invariant; errors name the offending item and field.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.format != CORPUS_FORMAT {
            return Err(CorpusError::Format(self.format.clone()));
        }
        let violations = self.schema.validate();
        if !violations.is_empty() {
            return Err(CorpusError::Schema(violations));
        }
        let mut scene_ids = HashSet::new();
        for scene in &self.scenes {
            if !scene_ids.insert(scene.id.as_str()) {
                return Err(CorpusError::Scene(DomainError::InvalidScene {
                    scene: scene.id.clone(),
                    reason: "duplicate scene id".into(),
                }));
            }
            scene.validate(&self.schema).map_err(CorpusError::Scene)?;
        }
        let mut ids = HashSet::new();
        for item in &self.items {
            let err = |field, message: String| CorpusError::Item {
                item: item.id.clone(),
                field,
                message,
            };
            if !ids.insert(item.id.as_str()) {
                return Err(err("id", "duplicate item id".into()));
            }
            if !scene_ids.contains(item.scene_id.as_str()) {
                return Err(err("scene_id", format!("unknown scene `{}`", item.scene_id)));
            }
            for t in &item.gold {
                self.schema
                    .check_property(&t.property)
                    .map_err(|e| err("gold", e.to_string()))?;
                if !self.schema.is_role(&t.role) {
                    return Err(err("gold", format!("undeclared role `{}`", t.role)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes") + "\n"
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, CorpusError> {
        let corpus: Corpus = serde_json::from_str(text).map_err(|source| CorpusError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        corpus.validate()?;
        Ok(corpus)
    }

    /// A copy holding `items` and only the scenes they use.
    pub fn subset(&self, name: &str, items: Vec<CorpusItem>) -> Corpus {
        let used: HashSet<&str> = items.iter().map(|i| i.scene_id.as_str()).collect();
        Corpus {
            format: CORPUS_FORMAT.to_string(),
            name: name.to_string(),
            schema: self.schema.clone(),
            scenes: self.scenes.iter().filter(|s| used.contains(s.id.as_str())).cloned().collect(),
            items,
        }
    }
}

/// Role-tagged or flattened set used for scoring.
pub fn project(props: impl IntoIterator<Item = TaggedProperty>, with_roles: bool) -> BTreeSet<TaggedProperty> {
    props
        .into_iter()
        .map(|t| if with_roles { t } else { TaggedProperty::target(t.property) })
        .collect()
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Corpus::from_json(&text, path)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    write_atomic(path, corpus.to_json().as_bytes()).map_err(io_err(path))
}

/// Training share used for a domain when none is given.
pub fn default_train_fraction(domain: &str) -> f64 {
    let d = domain.to_ascii_lowercase();
    if d.contains("furniture") {
        0.18
    } else if d.contains("people") {
        0.15
    } else {
        0.14
    }
}

/// Seeded partition into `round(fraction * n)` training items and the rest,
/// each part keeping corpus order.
pub fn split_corpus(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus), CorpusError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::Fraction(train_fraction));
    }
    let n = corpus.items.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train_idx: BTreeSet<usize> = order[..n_train].iter().copied().collect();
    let (train, test): (Vec<_>, Vec<_>) = corpus
        .items
        .iter()
        .enumerate()
        .partition(|(i, _)| train_idx.contains(i));
    let strip = |v: Vec<(usize, &CorpusItem)>| v.into_iter().map(|(_, it)| it.clone()).collect();
    Ok((
        corpus.subset(&format!("{}-train", corpus.name), strip(train)),
        corpus.subset(&format!("{}-test", corpus.name), strip(test)),
    ))
}

/// What an import skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ImportReport {
    pub trials: usize,
    pub imported: usize,
    pub skipped_plural: usize,
    pub warnings: Vec<String>,
}

fn tuna_files(path: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")))
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

fn attr_pairs<'a>(node: roxmltree::Node<'a, 'a>) -> impl Iterator<Item = (String, String)> + 'a {
    node.descendants()
        .filter(|n| n.has_tag_name("ATTRIBUTE"))
        .filter_map(|n| Some((n.attribute("NAME")?.to_string(), n.attribute("VALUE")?.to_string())))
}

fn child<'a>(node: roxmltree::Node<'a, 'a>, tag: &str) -> Option<roxmltree::Node<'a, 'a>> {
    node.children().find(|n| n.has_tag_name(tag))
}

struct TunaTrial {
    scene: Scene,
    description: String,
    gold: Vec<Property>,
}

fn parse_trial(trial: roxmltree::Node<'_, '_>) -> Result<Option<TunaTrial>, String> {
    let id = trial.attribute("ID").ok_or("trial without ID")?.to_string();
    let domain = child(trial, "DOMAIN").ok_or_else(|| format!("trial {id}: no DOMAIN"))?;
    let description_node = child(trial, "DESCRIPTION");
    let plural = description_node.and_then(|d| d.attribute("NUM")).is_some_and(|n| n.eq_ignore_ascii_case("PL"));

    let mut objects = Vec::new();
    let mut targets = Vec::new();
    for (k, entity) in domain.children().filter(|n| n.has_tag_name("ENTITY")).enumerate() {
        let oid = entity.attribute("ID").map(str::to_string).unwrap_or_else(|| format!("e{k}"));
        let mut seen = HashSet::new();
        let props = attr_pairs(entity)
            .filter(|(name, _)| seen.insert(name.clone()))
            .map(|(n, v)| Property::new(n, v));
        objects.push(SceneObject::new(&oid, props));
        if entity.attribute("TYPE").is_some_and(|t| t.eq_ignore_ascii_case("target")) {
            targets.push(oid);
        }
    }
    if plural || targets.len() > 1 {
        return Ok(None);
    }
    let target_id = targets.pop().ok_or_else(|| format!("trial {id}: no target entity"))?;
    if let Some(obj) = objects.iter_mut().find(|o| o.id == target_id) {
        obj.role = Some(TARGET_ROLE.to_string());
    }

    let text = child(trial, "STRING-DESCRIPTION")
        .and_then(|n| n.text().map(str::to_string))
        .or_else(|| {
            description_node.map(|d| {
                d.descendants()
                    .filter(|n| n.is_text())
                    .filter_map(|n| n.text())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
        })
        .map(|t| t.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|t| !t.is_empty())
        .ok_or_else(|| format!("trial {id}: no description text"))?;

    let gold: Vec<Property> = match child(trial, "ATTRIBUTE-SET") {
        Some(set) => attr_pairs(set).map(|(n, v)| Property::new(n, v)).collect(),
        None => description_node
            .map(|d| attr_pairs(d).map(|(n, v)| Property::new(n, v)).collect())
            .unwrap_or_default(),
    };
    Ok(Some(TunaTrial {
        scene: Scene {
            id: id.clone(),
            objects,
            target_id,
        },
        description: text,
        gold,
    }))
}

/// Imports TUNA-style trial documents (a file or a directory of `.xml`
/// files). Plural trials are skipped and counted; broken trials become
/// warnings as long as one trial imports.
pub fn import_tuna(path: &Path) -> Result<(Corpus, ImportReport), CorpusError> {
    let mut report = ImportReport::default();
    let mut trials = Vec::new();
    let mut domain_name = None;
    for file in tuna_files(path)? {
        let text = fs::read_to_string(&file).map_err(io_err(&file))?;
        if text.trim().is_empty() {
            report.warnings.push(format!("{}: empty document", file.display()));
            continue;
        }
        let doc = match roxmltree::Document::parse(&text) {
            Ok(d) => d,
            Err(e) => {
                report.warnings.push(format!("{}: {e}", file.display()));
                continue;
            }
        };
        for trial in doc.descendants().filter(|n| n.has_tag_name("TRIAL")) {
            report.trials += 1;
            if domain_name.is_none() {
                domain_name = child(trial, "DOMAIN")
                    .and_then(|d| d.attribute("NAME").or(d.attribute("TYPE")))
                    .map(str::to_string);
            }
            match parse_trial(trial) {
                Ok(Some(t)) => trials.push(t),
                Ok(None) => report.skipped_plural += 1,
                Err(w) => report.warnings.push(format!("{}: {w}", file.display())),
            }
        }
    }
    if trials.is_empty() {
        let why = if report.trials == 0 {
            "no trials found".to_string()
        } else {
            format!("none of {} trials could be imported", report.trials)
        };
        return Err(CorpusError::Import(format!("{}: {why}", path.display())));
    }

    let mut values: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for t in &trials {
        let props = t.scene.objects.iter().flat_map(|o| o.properties.iter()).chain(&t.gold);
        for p in props {
            values.entry(p.attribute.clone()).or_default().insert(p.value.clone());
        }
    }
    let name = domain_name.unwrap_or_else(|| "tuna".to_string());
    let schema = DomainSchema::new(
        &name,
        values.into_iter().map(|(a, vs)| AttributeDef::taxonomic(&a, vs)).collect(),
        &[],
    );
    let mut corpus = Corpus::new(&format!("tuna-{name}"), schema);
    let mut seen = HashSet::new();
    for t in trials {
        if !seen.insert(t.scene.id.clone()) {
            report.warnings.push(format!("duplicate trial id `{}` skipped", t.scene.id));
            continue;
        }
        corpus.items.push(CorpusItem {
            id: t.scene.id.clone(),
            scene_id: t.scene.id.clone(),
            description: t.description,
            language: Language::English,
            gold: t.gold.into_iter().map(TaggedProperty::target).collect::<BTreeSet<_>>().into_iter().collect(),
        });
        corpus.scenes.push(t.scene);
    }
    report.imported = corpus.items.len();
    corpus.validate()?;
    Ok((corpus, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> DomainSchema {
        DomainSchema::new(
            "gre3d3",
            vec![
                AttributeDef::taxonomic("type", ["ball", "cube"]),
                AttributeDef::taxonomic("colour", ["red", "blue"]),
                AttributeDef::relational("near"),
            ],
            &["lm"],
        )
    }

    fn corpus(n: usize) -> Corpus {
        let mut c = Corpus::new("toy", schema());
        c.scenes.push(Scene {
            id: "s".into(),
            target_id: "o1".into(),
            objects: vec![SceneObject::new("o1", [Property::new("type", "ball")])],
        });
        for i in 0..n {
            c.items.push(CorpusItem {
                id: format!("d{i}"),
                scene_id: "s".into(),
                description: "the red ball".into(),
                language: Language::English,
                gold: vec![
                    TaggedProperty::target(Property::new("type", "ball")),
                    TaggedProperty::target(Property::new("colour", "red")),
                ],
            });
        }
        c
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let c = corpus(3);
        save_corpus(&c, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), c);
    }

    #[test]
    fn illegal_value_names_item() {
        let mut c = corpus(2);
        c.items[1].gold.push(TaggedProperty::target(Property::new("colour", "mauve")));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, c.to_json()).unwrap();
        let err = load_corpus(&path).unwrap_err().to_string();
        assert!(err.contains("d1") && err.contains("gold"), "{err}");
    }

    #[test]
    fn missing_file() {
        assert!(matches!(load_corpus(Path::new("/nonexistent/x.json")), Err(CorpusError::Io { .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut c = corpus(2);
        c.items[1].id = "d0".into();
        assert!(matches!(c.validate(), Err(CorpusError::Item { field: "id", .. })));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = corpus(100);
        let (train, test) = split_corpus(&c, 0.18, 7).unwrap();
        assert_eq!((train.items.len(), test.items.len()), (18, 82));
        let again = split_corpus(&c, 0.18, 7).unwrap();
        assert_eq!(again.0, train);
        let ids: HashSet<_> = train.items.iter().map(|i| &i.id).collect();
        assert!(test.items.iter().all(|i| !ids.contains(&i.id)));
        assert!(split_corpus(&c, 0.0, 7).is_err());
        assert!(split_corpus(&c, 1.0, 7).is_err());
    }

    #[test]
    fn default_fractions() {
        assert_eq!(default_train_fraction("tuna-furniture"), 0.18);
        assert_eq!(default_train_fraction("TUNA-People"), 0.15);
        assert_eq!(default_train_fraction("gre3d3"), 0.14);
    }

    proptest! {
        #[test]
        fn split_partitions(n in 1usize..60, frac in 0.01f64..0.99, seed in any::<u64>()) {
            let c = corpus(n);
            let (train, test) = split_corpus(&c, frac, seed).unwrap();
            prop_assert_eq!(train.items.len(), (frac * n as f64).round() as usize);
            let mut all: Vec<_> = train.items.iter().chain(&test.items).map(|i| i.id.clone()).collect();
            all.sort();
            let mut orig: Vec<_> = c.items.iter().map(|i| i.id.clone()).collect();
            orig.sort();
            prop_assert_eq!(all, orig);
        }
    }

    const TRIAL: &str = r#"<TRIAL ID="s1t1" CONDITION="-LOC">
  <DOMAIN NAME="furniture">
    <ENTITY ID="e1" TYPE="target" IMAGE="a.gif">
      <ATTRIBUTE NAME="type" VALUE="chair"/>
      <ATTRIBUTE NAME="colour" VALUE="green"/>
      <ATTRIBUTE NAME="size" VALUE="large"/>
    </ENTITY>
    <ENTITY ID="e2" TYPE="distractor" IMAGE="b.gif">
      <ATTRIBUTE NAME="type" VALUE="sofa"/>
      <ATTRIBUTE NAME="colour" VALUE="red"/>
      <ATTRIBUTE NAME="size" VALUE="small"/>
    </ENTITY>
  </DOMAIN>
  <STRING-DESCRIPTION>the green chair</STRING-DESCRIPTION>
  <DESCRIPTION NUM="SG">
    <ATTRIBUTE ID="a1" NAME="colour" VALUE="green">green</ATTRIBUTE>
    <ATTRIBUTE ID="a2" NAME="type" VALUE="chair">chair</ATTRIBUTE>
  </DESCRIPTION>
  <ATTRIBUTE-SET>
    <ATTRIBUTE NAME="colour" VALUE="green"/>
    <ATTRIBUTE NAME="type" VALUE="chair"/>
  </ATTRIBUTE-SET>
</TRIAL>"#;

    #[test]
    fn import_single_trial() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.xml");
        fs::write(&path, TRIAL).unwrap();
        let (c, report) = import_tuna(&path).unwrap();
        assert_eq!(report.imported, 1);
        assert_eq!(c.items[0].description, "the green chair");
        let gold: BTreeSet<_> = c.items[0].gold.iter().map(|t| t.property.to_string()).collect();
        assert_eq!(gold, BTreeSet::from(["colour-green".to_string(), "type-chair".to_string()]));
        assert_eq!(c.scenes[0].target_id, "e1");
        assert_eq!(c.schema.domain, "furniture");
    }

    #[test]
    fn import_skips_plural() {
        let dir = tempfile::tempdir().unwrap();
        let plural = TRIAL.replace("s1t1", "s1t2").replace("NUM=\"SG\"", "NUM=\"PL\"");
        fs::write(dir.path().join("a.xml"), TRIAL).unwrap();
        fs::write(dir.path().join("b.xml"), plural).unwrap();
        let (c, report) = import_tuna(dir.path()).unwrap();
        assert_eq!(c.items.len(), 1);
        assert_eq!(report.skipped_plural, 1);
    }

    #[test]
    fn import_empty_document_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.xml");
        fs::write(&path, "").unwrap();
        assert!(import_tuna(&path).is_err());
    }

    #[test]
    fn import_warns_on_broken_trial() {
        let dir = tempfile::tempdir().unwrap();
        let broken = "<TRIAL ID=\"x\"><DOMAIN/></TRIAL>";
        fs::write(dir.path().join("a.xml"), format!("<TRIALS>{TRIAL}{broken}</TRIALS>")).unwrap();
        let (c, report) = import_tuna(&dir.path().join("a.xml")).unwrap();
        assert_eq!(c.items.len(), 1);
        assert_eq!(report.warnings.len(), 1);
    }
}
