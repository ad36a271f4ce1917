//! Synthetic GRE3D-style material: a small geometric domain, parallel
//! English/Portuguese lexicons, a template realizer and a corpus generator.
//!
//! Used for fixtures, demos and tests; the licensed corpora are not bundled.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, CorpusItem};
use crate::domain::{AttributeDef, DomainSchema, Property, Scene, SceneObject, TaggedProperty, TARGET_ROLE};
use crate::lexicon::{Language, LexicalEntry, MappingTable};

pub const TYPES: [&str; 2] = ["ball", "cube"];
pub const COLOURS: [&str; 4] = ["red", "blue", "green", "yellow"];
pub const SIZES: [&str; 2] = ["large", "small"];
pub const RELATIONS: [&str; 2] = ["near", "above"];

/// Modifiers no lexicon knows, for robustness runs.
pub const UNKNOWN_MODIFIERS_EN: [&str; 6] = ["shiny", "plain", "matte", "glossy", "wooden", "solid"];
pub const UNKNOWN_MODIFIERS_PT: [&str; 6] = ["brilhante", "simples", "fosca", "lisa", "macia", "escura"];

pub fn gre3d_schema() -> DomainSchema {
    DomainSchema::new(
        "gre3d3-synthetic",
        vec![
            AttributeDef::taxonomic("type", TYPES),
            AttributeDef::taxonomic("colour", COLOURS),
            AttributeDef::taxonomic("size", SIZES),
            AttributeDef::relational("near"),
            AttributeDef::relational("above"),
        ],
        &["lm", "lm2"],
    )
}

fn feminine(type_value: &str) -> bool {
    type_value == "ball"
}

/// Surface forms for `p` in `language`, canonical form first. Portuguese
/// forms agree with the gender of `noun_type`.
fn forms(p: &Property, language: Language, noun_type: &str) -> Vec<&'static str> {
    let fem = feminine(noun_type);
    let g = |f: &'static str, m: &'static str| if fem { f } else { m };
    match (language, p.attribute.as_str(), p.value.as_str()) {
        (Language::English, "type", "ball") => vec!["ball", "sphere"],
        (Language::English, "type", "cube") => vec!["cube", "box", "block"],
        (Language::English, "colour", "red") => vec!["red"],
        (Language::English, "colour", "blue") => vec!["blue"],
        (Language::English, "colour", "green") => vec!["green"],
        (Language::English, "colour", "yellow") => vec!["yellow"],
        (Language::English, "size", "large") => vec!["large", "big"],
        (Language::English, "size", "small") => vec!["small", "little"],
        (Language::English, "near", _) => vec!["near", "next to", "beside"],
        (Language::English, "above", _) => vec!["above", "on top of"],
        (Language::Portuguese, "type", "ball") => vec!["bola", "esfera"],
        (Language::Portuguese, "type", "cube") => vec!["cubo", "bloco"],
        (Language::Portuguese, "colour", "red") => vec![g("vermelha", "vermelho")],
        (Language::Portuguese, "colour", "blue") => vec!["azul"],
        (Language::Portuguese, "colour", "green") => vec!["verde"],
        (Language::Portuguese, "colour", "yellow") => vec![g("amarela", "amarelo")],
        (Language::Portuguese, "size", "large") => vec!["grande"],
        (Language::Portuguese, "size", "small") => vec![g("pequena", "pequeno")],
        (Language::Portuguese, "near", _) => vec![g("perto da", "perto do"), g("ao lado da", "ao lado do")],
        (Language::Portuguese, "above", _) => vec![g("em cima da", "em cima do"), "sobre"],
        _ => vec![],
    }
}

/// Complete hand-authored lexicon for the synthetic domain, both languages.
pub fn gre3d_lexicon() -> MappingTable {
    let mut m = MappingTable::new("type");
    let mut props: Vec<Property> = Vec::new();
    for t in TYPES {
        props.push(Property::new("type", t));
    }
    for c in COLOURS {
        props.push(Property::new("colour", c));
    }
    for s in SIZES {
        props.push(Property::new("size", s));
    }
    for r in RELATIONS {
        props.push(Property::new(r, "lm"));
    }
    for lang in [Language::English, Language::Portuguese] {
        for p in &props {
            for noun in TYPES {
                for f in forms(p, lang, noun) {
                    m.insert(LexicalEntry::phrase(lang, f, p.clone()))
                        .expect("synthetic lexicon is consistent");
                }
            }
        }
    }
    m
}

fn determiner(language: Language, type_value: &str) -> &'static str {
    match language {
        Language::English => "the",
        Language::Portuguese if feminine(type_value) => "a",
        Language::Portuguese => "o",
    }
}

fn pick<R: Rng>(options: &[&'static str], rng: &mut Option<&mut R>) -> &'static str {
    match rng {
        Some(r) => options.choose(*r).copied().unwrap_or(""),
        None => options.first().copied().unwrap_or(""),
    }
}

/// Noun phrase for one referent; `extra` is an unknown modifier to slip in.
fn noun_phrase<R: Rng>(
    props: &[&Property],
    language: Language,
    with_determiner: bool,
    extra: Option<&str>,
    rng: &mut Option<&mut R>,
) -> Vec<String> {
    let get = |attr: &str| props.iter().find(|p| p.attribute == attr).copied();
    let ty = get("type").map(|p| p.value.as_str()).unwrap_or("ball");
    let word = |attr: &str, rng: &mut Option<&mut R>| {
        get(attr).map(|p| pick(&forms(p, language, ty), rng).to_string())
    };
    let size = word("size", rng);
    let colour = word("colour", rng);
    let noun = word("type", rng);
    let mut out = Vec::new();
    if with_determiner {
        out.push(determiner(language, ty).to_string());
    }
    match language {
        Language::English => {
            out.extend(size);
            out.extend(extra.map(str::to_string));
            out.extend(colour);
            out.extend(noun);
        }
        Language::Portuguese => {
            out.extend(noun);
            out.extend(colour);
            out.extend(extra.map(str::to_string));
            out.extend(size);
        }
    }
    out
}

/// Renders a gold property set as a description. With `rng`, synonyms are
/// drawn at random; without, canonical forms are used.
///
/// English puts modifiers before the noun (`the large red ball`),
/// Portuguese after (`a bola vermelha grande`). Landmarks follow the target,
/// each introduced by the relation pointing at it.
pub fn realize<R: Rng>(gold: &[TaggedProperty], language: Language, mut rng: Option<&mut R>) -> String {
    let of_role = |role: &str| -> Vec<&Property> {
        gold.iter().filter(|t| t.role == role).map(|t| &t.property).collect()
    };
    let target = of_role(TARGET_ROLE);
    let taxonomic: Vec<&Property> = target.iter().copied().filter(|p| !RELATIONS.contains(&p.attribute.as_str())).collect();
    let mut words = noun_phrase(&taxonomic, language, true, None, &mut rng);
    let mut relations: Vec<&Property> = target.iter().copied().filter(|p| RELATIONS.contains(&p.attribute.as_str())).collect();
    relations.sort_by(|a, b| a.value.len().cmp(&b.value.len()).then(a.value.cmp(&b.value)));
    for rel in relations {
        let lm = of_role(&rel.value);
        let ty = lm.iter().find(|p| p.attribute == "type").map(|p| p.value.as_str()).unwrap_or("cube");
        let phrase = pick(&forms(rel, language, ty), &mut rng);
        words.extend(phrase.split_whitespace().map(str::to_string));
        // Portuguese relational phrases already carry the article.
        let det = language == Language::English;
        words.extend(noun_phrase(&lm, language, det, None, &mut rng));
    }
    words.join(" ")
}

/// Inserts one unknown modifier into a realized description, next to the
/// target noun.
pub fn with_unknown_modifier(description: &str, language: Language, modifier: &str) -> String {
    let mut words: Vec<&str> = description.split_whitespace().collect();
    let pos = match language {
        Language::English => words.len().min(1),
        Language::Portuguese => words.len().min(2),
    };
    words.insert(pos, modifier);
    words.join(" ")
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub items: usize,
    pub seed: u64,
    pub language: Language,
    /// Share of items with a relational description.
    pub relational_rate: f64,
    /// Chance that a description mentions colour / size.
    pub colour_rate: f64,
    pub size_rate: f64,
    /// Draw synonyms instead of canonical forms.
    pub vary_wording: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            items: 200,
            seed: 1,
            language: Language::English,
            relational_rate: 0.35,
            colour_rate: 0.85,
            size_rate: 0.4,
            vary_wording: true,
        }
    }
}

fn random_object<R: Rng>(id: &str, rng: &mut R) -> SceneObject {
    SceneObject::new(
        id,
        [
            Property::new("type", *TYPES.choose(rng).unwrap()),
            Property::new("colour", *COLOURS.choose(rng).unwrap()),
            Property::new("size", *SIZES.choose(rng).unwrap()),
        ],
    )
}

fn pick_props<R: Rng>(obj: &SceneObject, role: &str, cfg: &SynthConfig, rng: &mut R) -> Vec<TaggedProperty> {
    obj.properties
        .iter()
        .filter(|p| match p.attribute.as_str() {
            "type" => true,
            "colour" => rng.gen_bool(cfg.colour_rate),
            "size" => rng.gen_bool(cfg.size_rate),
            _ => false,
        })
        .map(|p| TaggedProperty::new(role, p.clone()))
        .collect()
}

/// Generates a corpus of one-description scenes: a target, a landmark and
/// one or two distractors. Relational descriptions mention the landmark.
pub fn generate_corpus(cfg: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut corpus = Corpus::new("gre3d3-synthetic", gre3d_schema());
    for i in 0..cfg.items {
        let scene_id = format!("s{i:04}");
        let relational = rng.gen_bool(cfg.relational_rate);
        let relation = *RELATIONS.choose(&mut rng).unwrap();
        let mut target = random_object("o1", &mut rng);
        let landmark = random_object("o2", &mut rng).with_role("lm");
        target.properties.insert(Property::new(relation, "lm"));
        let mut objects = vec![target, landmark];
        for d in 0..rng.gen_range(1..=2) {
            let mut obj = random_object(&format!("o{}", d + 3), &mut rng);
            if rng.gen_bool(0.5) {
                obj.properties.insert(Property::new(*RELATIONS.choose(&mut rng).unwrap(), "o2"));
            }
            objects.push(obj);
        }
        let mut gold = pick_props(&objects[0], TARGET_ROLE, cfg, &mut rng);
        if relational {
            gold.push(TaggedProperty::target(Property::new(relation, "lm")));
            gold.extend(pick_props(&objects[1], "lm", cfg, &mut rng));
        }
        gold.sort();
        let description = if cfg.vary_wording {
            realize(&gold, cfg.language, Some(&mut rng))
        } else {
            realize::<ChaCha8Rng>(&gold, cfg.language, None)
        };
        corpus.scenes.push(Scene {
            id: scene_id.clone(),
            objects,
            target_id: "o1".into(),
        });
        corpus.items.push(CorpusItem {
            id: format!("d{i:04}"),
            scene_id,
            description,
            language: cfg.language,
            gold,
        });
    }
    corpus
}

/// Adds one unknown modifier to roughly `rate` of the items.
pub fn inject_unknown_modifiers(corpus: &mut Corpus, rate: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for item in &mut corpus.items {
        if rng.gen_bool(rate) {
            let pool = match item.language {
                Language::English => &UNKNOWN_MODIFIERS_EN,
                Language::Portuguese => &UNKNOWN_MODIFIERS_PT,
            };
            let word = pool.choose(&mut rng).unwrap();
            item.description = with_unknown_modifier(&item.description, item.language, word);
        }
    }
}

/// The two-ball scene used for elicitation demos: a red ball (target) and a blue one.
pub fn two_ball_scene() -> Scene {
    Scene {
        id: "two-balls".into(),
        target_id: "b1".into(),
        objects: vec![
            SceneObject::new(
                "b1",
                [Property::new("type", "ball"), Property::new("colour", "red"), Property::new("size", "large")],
            ),
            SceneObject::new(
                "b2",
                [Property::new("type", "ball"), Property::new("colour", "blue"), Property::new("size", "large")],
            ),
        ],
    }
}
