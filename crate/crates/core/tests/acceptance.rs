//! Acceptance criteria, one line per criterion.
//!
//! Runs without the libtest harness so every line is printed even when all
//! criteria pass. Exits non-zero if any criterion fails.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use refanno::baseline::{labeled_examples, train_tagger};
use refanno::cli::{annotate_corpus, score, Annotator};
use refanno::corpus::{default_train_fraction, load_corpus, split_corpus, Corpus};
use refanno::domain::{AttributeDef, DomainSchema, Property, Scene, SceneObject, TaggedProperty};
use refanno::eval::{
    chi_square_2x2, chi_square_p, compare_methods, dice, evaluate, two_sided_normal_p, wilcoxon_signed_rank,
    Direction, ALPHA,
};
use refanno::feedback::check;
use refanno::lexicon::{Language, LexicalEntry, MappingTable};
use refanno::parser::{annotate_text, MatchKind};
use refanno::service::StoredResponse;
use refanno::synth::{generate_corpus, gre3d_lexicon, gre3d_schema, inject_unknown_modifiers, realize, SynthConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn p(a: &str, v: &str) -> Property {
    Property::new(a, v)
}

fn tp(role: &str, a: &str, v: &str) -> TaggedProperty {
    TaggedProperty::new(role, p(a, v))
}

fn set(items: &[TaggedProperty]) -> BTreeSet<TaggedProperty> {
    items.iter().cloned().collect()
}

fn table(type_attribute: &str, words: &[(&str, &str, &str)]) -> MappingTable {
    let mut m = MappingTable::new(type_attribute);
    for (w, a, v) in words {
        m.insert(LexicalEntry::word(Language::English, w, p(a, v))).unwrap();
    }
    m
}

fn worked_examples() -> Outcome {
    let start = Instant::now();

    let furniture = DomainSchema::new(
        "furniture",
        vec![
            AttributeDef::taxonomic("type", ["couch", "chair"]),
            AttributeDef::taxonomic("colour", ["red", "blue"]),
        ],
        &[],
    );
    let lex = table("type", &[("couch", "type", "couch"), ("red", "colour", "red")]);
    let r = annotate_text("the red couch", Language::English, &lex, &furniture);
    ensure!(
        r.properties == set(&[tp("target", "type", "couch"), tp("target", "colour", "red")]),
        "the red couch -> {:?}",
        r.properties
    );
    ensure!(r.unknown_tokens() == ["the"], "the red couch discarded {:?}", r.unknown_tokens());

    let gre3d = DomainSchema::new(
        "gre3d3",
        vec![
            AttributeDef::taxonomic("type", ["box", "ball", "cube"]),
            AttributeDef::taxonomic("colour", ["blue", "green"]),
            AttributeDef::taxonomic("size", ["large", "small"]),
            AttributeDef::relational("near"),
        ],
        &["lm"],
    );
    let lex = table(
        "type",
        &[
            ("large", "size", "large"),
            ("blue", "colour", "blue"),
            ("green", "colour", "green"),
            ("box", "type", "box"),
            ("ball", "type", "ball"),
            ("cube", "type", "cube"),
            ("near", "near", "lm"),
        ],
    );
    let r = annotate_text("large blue box", Language::English, &lex, &gre3d);
    ensure!(
        r.properties
            == set(&[tp("target", "size", "large"), tp("target", "colour", "blue"), tp("target", "type", "box")]),
        "large blue box -> {:?}",
        r.properties
    );
    let one_to_one = r.matches.len() == 3
        && r.matches.iter().all(|m| m.span.len() == 1 && m.kind == MatchKind::Word)
        && r.discarded.is_empty();
    ensure!(one_to_one, "large blue box is not one word per property: {:?}", r.matches);

    let r = annotate_text("the green ball near a blue cube", Language::English, &lex, &gre3d);
    let expected = set(&[
        tp("target", "colour", "green"),
        tp("target", "type", "ball"),
        tp("target", "near", "lm"),
        tp("lm", "colour", "blue"),
        tp("lm", "type", "cube"),
    ]);
    ensure!(r.properties == expected, "green ball near a blue cube -> {:?}", r.properties);
    let roles: Vec<&str> = r.segments.iter().map(|s| s.role.as_str()).collect();
    ensure!(roles == ["target", "lm"], "segments {roles:?}");

    let people = DomainSchema::new(
        "people",
        vec![
            AttributeDef::taxonomic("type", ["person"]),
            AttributeDef::taxonomic("hair.colour", ["dark", "light"]),
            AttributeDef::taxonomic("beard.colour", ["dark", "light"]),
            AttributeDef::taxonomic("hasBeard", ["1", "0"]),
        ],
        &[],
    );
    let mut lex = table("type", &[("man", "type", "person"), ("beard", "hasBeard", "1")]);
    lex.add_noun(Language::English, "beard");
    lex.insert(LexicalEntry::pair(Language::English, "dark", "man", p("hair.colour", "dark")))
        .unwrap();
    lex.insert(LexicalEntry::pair(Language::English, "dark", "beard", p("beard.colour", "dark")))
        .unwrap();
    let r = annotate_text("dark man", Language::English, &lex, &people);
    ensure!(
        r.properties == set(&[tp("target", "hair.colour", "dark"), tp("target", "type", "person")]),
        "dark man -> {:?}",
        r.properties
    );
    let r = annotate_text("man with dark beard", Language::English, &lex, &people);
    ensure!(
        r.properties
            == set(&[
                tp("target", "beard.colour", "dark"),
                tp("target", "hasBeard", "1"),
                tp("target", "type", "person")
            ]),
        "man with dark beard -> {:?}",
        r.properties
    );

    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("4 examples exact in {elapsed:.2?}"))
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let lex = gre3d_lexicon();
    let mut n = 0;
    for language in [Language::English, Language::Portuguese] {
        let corpus = generate_corpus(&SynthConfig {
            items: 120,
            seed: 42,
            language,
            vary_wording: false,
            ..Default::default()
        });
        let hyps: Vec<BTreeSet<TaggedProperty>> = corpus
            .items
            .iter()
            .map(|i| annotate_text(&i.description, i.language, &lex, &corpus.schema).properties)
            .collect();
        let golds: Vec<BTreeSet<TaggedProperty>> = corpus.items.iter().map(|i| Corpus::gold_set(i, true)).collect();
        let report = evaluate(&hyps, &golds).map_err(|e| e.to_string())?;
        if let Some(bad) = report.items.iter().find(|i| !i.exact) {
            let idx: usize = bad.id.parse().unwrap();
            return Err(format!(
                "{language}: `{}` -> {:?}, gold {:?}",
                corpus.items[idx].description, hyps[idx], golds[idx]
            ));
        }
        ensure!(
            report.mean_dice == 1.0 && report.accuracy == 1.0,
            "{language}: dice {} acc {}",
            report.mean_dice,
            report.accuracy
        );
        n += report.n;
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("{n} items, Dice 1.0, accuracy 1.0 in {elapsed:.2?}"))
}

fn bilingual_invariance() -> Outcome {
    let lex = gre3d_lexicon();
    let schema = gre3d_schema();
    let corpus = generate_corpus(&SynthConfig {
        items: 80,
        seed: 9,
        ..Default::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut relational = 0;
    for item in &corpus.items {
        let en = realize(&item.gold, Language::English, Some(&mut rng));
        let pt = realize(&item.gold, Language::Portuguese, Some(&mut rng));
        let l_en = annotate_text(&en, Language::English, &lex, &schema).properties;
        let l_pt = annotate_text(&pt, Language::Portuguese, &lex, &schema).properties;
        ensure!(l_en == l_pt, "`{en}` -> {l_en:?} but `{pt}` -> {l_pt:?}");
        relational += item.gold.iter().any(|t| !t.is_target()) as usize;
    }
    Ok(format!("{} pairs identical ({relational} relational)", corpus.items.len()))
}

const EN_WORDS: [(&str, &str, &str); 13] = [
    ("ball", "type", "ball"),
    ("sphere", "type", "ball"),
    ("cube", "type", "cube"),
    ("block", "type", "cube"),
    ("box", "type", "cube"),
    ("red", "colour", "red"),
    ("blue", "colour", "blue"),
    ("green", "colour", "green"),
    ("yellow", "colour", "yellow"),
    ("large", "size", "large"),
    ("big", "size", "large"),
    ("small", "size", "small"),
    ("little", "size", "small"),
];
const PT_WORDS: [(&str, &str, &str); 11] = [
    ("bola", "type", "ball"),
    ("cubo", "type", "cube"),
    ("vermelha", "colour", "red"),
    ("vermelho", "colour", "red"),
    ("azul", "colour", "blue"),
    ("verde", "colour", "green"),
    ("amarela", "colour", "yellow"),
    ("amarelo", "colour", "yellow"),
    ("grande", "size", "large"),
    ("pequena", "size", "small"),
    ("pequeno", "size", "small"),
];
const FILLERS: [&str; 6] = ["the", "a", "shiny", "o", "uma", "thing"];

/// Independent reading of a relation-free, pair-free description: every
/// token looked up on its own.
fn oracle_lookup(tokens: &[String], dict: &HashMap<&str, Property>) -> (BTreeSet<TaggedProperty>, Vec<String>) {
    let mut props = BTreeSet::new();
    let mut unknown = Vec::new();
    for t in tokens {
        match dict.get(t.as_str()) {
            Some(p) => {
                props.insert(TaggedProperty::target(p.clone()));
            }
            None => unknown.push(t.clone()),
        }
    }
    (props, unknown)
}

fn random_tokens(rng: &mut ChaCha8Rng, words: &[(&str, &str, &str)]) -> Vec<String> {
    let len = rng.gen_range(1..=7);
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.25) {
                FILLERS.choose(rng).unwrap().to_string()
            } else {
                words.choose(rng).unwrap().0.to_string()
            }
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let schema = gre3d_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut descriptions = 0;
    for (language, words) in [(Language::English, &EN_WORDS[..]), (Language::Portuguese, &PT_WORDS[..])] {
        let mut lex = MappingTable::new("type");
        let mut dict = HashMap::new();
        for (w, a, v) in words {
            lex.insert(LexicalEntry::word(language, w, p(a, v))).unwrap();
            dict.insert(*w, p(a, v));
        }
        for _ in 0..150 {
            let tokens = random_tokens(&mut rng, words);
            let text = tokens.join(" ");
            let r = annotate_text(&text, language, &lex, &schema);
            let (props, unknown) = oracle_lookup(&tokens, &dict);
            ensure!(r.properties == props, "`{text}`: {:?} vs oracle {props:?}", r.properties);
            ensure!(r.unknown_tokens() == unknown, "`{text}`: discarded {:?} vs {unknown:?}", r.unknown_tokens());
            descriptions += 1;
        }
    }

    // Feedback: matching objects against an exhaustive filter.
    let mut lex = MappingTable::new("type");
    let mut dict = HashMap::new();
    for (w, a, v) in EN_WORDS {
        lex.insert(LexicalEntry::word(Language::English, w, p(a, v))).unwrap();
        dict.insert(w, p(a, v));
    }
    let mut scenes = 0;
    let mut checked_unique = 0;
    for k in 0..300 {
        let n = rng.gen_range(1..=10);
        let objects: Vec<SceneObject> = (0..n)
            .map(|i| {
                SceneObject::new(
                    &format!("o{i}"),
                    [
                        p("type", ["ball", "cube"][rng.gen_range(0..2)]),
                        p("colour", ["red", "blue", "green", "yellow"][rng.gen_range(0..4)]),
                        p("size", ["large", "small"][rng.gen_range(0..2)]),
                    ],
                )
            })
            .collect();
        let scene = Scene {
            id: format!("f{k}"),
            target_id: format!("o{}", rng.gen_range(0..n)),
            objects,
        };
        let tokens = random_tokens(&mut rng, &EN_WORDS);
        let r = annotate_text(&tokens.join(" "), Language::English, &lex, &schema);
        let verdict = check(&r, &scene, &schema);
        let (props, _) = oracle_lookup(&tokens, &dict);
        let expected: BTreeSet<String> = scene
            .objects
            .iter()
            .filter(|o| props.iter().all(|t| o.properties.contains(&t.property)))
            .map(|o| o.id.clone())
            .collect();
        ensure!(
            verdict.matching_ids == expected,
            "scene {}: `{}` matched {:?}, filter gives {expected:?}",
            scene.id,
            tokens.join(" "),
            verdict.matching_ids
        );
        checked_unique += (expected.len() == 1) as usize;
        scenes += 1;
    }
    Ok(format!(
        "{descriptions} descriptions equal the lookup oracle; {scenes} scenes ({checked_unique} unique) equal the object filter"
    ))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn metric_values() -> Outcome {
    let ab: BTreeSet<&str> = ["a", "b"].into();
    let bc: BTreeSet<&str> = ["b", "c"].into();
    let empty: BTreeSet<&str> = BTreeSet::new();
    ensure!(dice(&ab, &bc) == 0.5, "dice({{a,b}},{{b,c}}) = {}", dice(&ab, &bc));
    ensure!(dice(&empty, &empty) == 1.0, "dice of empty sets = {}", dice(&empty, &empty));

    // Reference values computed offline with scipy.
    let c = chi_square_2x2([[30, 10], [10, 30]]).map_err(|e| e.to_string())?;
    ensure!(close(c.chi2, 20.0, 1e-9), "chi2 = {}", c.chi2);
    ensure!(close(c.p, 7.744216431044088e-06, 1e-6), "chi2 p = {}", c.p);

    let a = [0.9, 0.75, 1.0, 0.6, 0.8, 0.95, 0.5, 0.7, 0.85, 0.4];
    let b = [0.7, 0.8, 0.6, 0.65, 0.5, 0.95, 0.2, 0.9, 0.45, 0.3];
    let w = wilcoxon_signed_rank(&a, &b).map_err(|e| e.to_string())?;
    ensure!(close(w.w, 30.0, 1e-3), "W = {}", w.w);
    ensure!(close(w.z, 1.783314894833292, 1e-3), "Z = {}", w.z);
    ensure!(close(w.p, 0.07453505811604444, 1e-3), "p = {}", w.p);

    // Statistics reported alongside the results table map to their p-values.
    ensure!(close(two_sided_normal_p(3.03), 0.0024, 5e-5), "p(Z=3.03) = {}", two_sided_normal_p(3.03));
    ensure!(close(chi_square_p(9.95), 0.001604, 1e-5), "p(chi2=9.95) = {}", chi_square_p(9.95));
    Ok(format!("chi2 {:.1} p {:.3e}; W {} Z {:.4} p {:.4}", c.chi2, c.p, w.w, w.z, w.p))
}

fn method_comparison() -> Outcome {
    let corpus = generate_corpus(&SynthConfig {
        items: 200,
        seed: 1,
        ..Default::default()
    });
    let fraction = default_train_fraction(&corpus.schema.domain);
    let (train, mut test) = split_corpus(&corpus, fraction, 1).map_err(|e| e.to_string())?;
    let items = train.training_items();
    let lexicon = refanno::induce_lexicon(&items, &train.schema).map_err(|e| e.to_string())?;
    let alignments = refanno::lexicon::align_training(&items, &train.schema).map_err(|e| e.to_string())?;
    let model = train_tagger(&labeled_examples(&items, &alignments)).map_err(|e| e.to_string())?;

    let before: Vec<String> = test.items.iter().map(|i| i.description.clone()).collect();
    inject_unknown_modifiers(&mut test, 0.15, 101);
    let injected = test.items.iter().zip(&before).filter(|(i, b)| i.description != **b).count();

    let h = score(&test, &annotate_corpus(&test, &Annotator::Heuristic(&lexicon))).map_err(|e| e.to_string())?;
    let b = score(&test, &annotate_corpus(&test, &Annotator::Baseline(&model))).map_err(|e| e.to_string())?;
    let c = compare_methods(&h, &b).map_err(|e| e.to_string())?;
    let p = c.wilcoxon.map(|w| w.p).unwrap_or(1.0);
    let summary = format!(
        "train {} / test {} ({injected} with unseen modifiers): Heuristic Dice {:.3} Acc {:.3}, baseline Dice {:.3} Acc {:.3}, Wilcoxon p {:.2e}",
        train.items.len(),
        test.items.len(),
        h.mean_dice,
        h.accuracy,
        b.mean_dice,
        b.accuracy,
        p
    );
    ensure!(h.mean_dice >= b.mean_dice, "heuristic below baseline: {summary}");
    ensure!(
        c.dice_significant && c.dice_direction == Direction::AGreater && p < ALPHA,
        "difference not significant: {summary}"
    );
    Ok(summary)
}

fn service_durability() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let config = common::write_service_config(dir.path(), &data);

    let server = common::Server::start(&config);
    let (status, session) = server.post("/sessions", &json!({"experiment_id": "two-balls", "participant_id": "p1"}));
    ensure!(status == 201, "start session: {status} {session}");
    let sid = session["session_id"].as_str().unwrap().to_string();
    let (status, reply) = server.post(&format!("/sessions/{sid}/submissions"), &json!({"text": "the red ball"}));
    ensure!(status == 200 && reply["verdict"]["status"] == "unique", "submit: {status} {reply}");
    server.kill();

    let server = common::Server::start(&config);
    let (_, export) = server.get("/experiments/two-balls/responses");
    let responses: Vec<StoredResponse> =
        serde_json::from_value(export["responses"].clone()).map_err(|e| format!("export: {e}: {export}"))?;
    ensure!(
        responses.len() == 1 && responses[0].session_id == sid && responses[0].text == "the red ball",
        "after restart: {export}"
    );
    let (_, current) = server.get(&format!("/sessions/{sid}/current-scene"));
    ensure!(current["done"] == true, "session not restored: {current}");

    // Grow the log through the other experiment, then replay it offline.
    let (_, s2) = server.post("/sessions", &json!({"experiment_id": "gre3d3", "participant_id": "p2"}));
    let sid2 = s2["session_id"].as_str().unwrap().to_string();
    let corpus = load_corpus(&common::fixture("gre3d3.json")).map_err(|e| e.to_string())?;
    for _ in 0..corpus.scenes.len() {
        let (_, cur) = server.get(&format!("/sessions/{sid2}/current-scene"));
        let Some(scene_id) = cur["scene"]["id"].as_str() else {
            break;
        };
        let item = corpus.items.iter().find(|i| i.scene_id == scene_id).unwrap();
        for text in ["the ball", item.description.as_str()] {
            server.post(&format!("/sessions/{sid2}/submissions"), &json!({"text": text, "override": true}));
        }
        server.post(&format!("/sessions/{sid2}/submissions"), &json!({"text": "the thing", "override": true}));
    }
    drop(server);

    let schema: DomainSchema =
        serde_json::from_str(&std::fs::read_to_string(common::fixture("gre3d-schema.json")).unwrap()).unwrap();
    let lexicon = MappingTable::load(&common::fixture("gre3d.tsv"), "type").map_err(|e| e.to_string())?;
    let mut replayed = 0;
    for (exp, scenes) in [
        ("two-balls", load_corpus(&common::fixture("two-balls.json")).unwrap().scenes),
        ("gre3d3", corpus.scenes.clone()),
    ] {
        let log = std::fs::read_to_string(data.join(exp).join("responses.jsonl")).map_err(|e| e.to_string())?;
        let mut seen = BTreeSet::new();
        for line in log.lines() {
            let r: StoredResponse = serde_json::from_str(line).map_err(|e| e.to_string())?;
            ensure!(seen.insert((r.session_id.clone(), r.scene_id.clone())), "duplicate response for {}", r.scene_id);
            let scene = scenes.iter().find(|s| s.id == r.scene_id).unwrap();
            let annotation = annotate_text(&r.text, r.language, &lexicon, &schema);
            let verdict = check(&annotation, scene, &schema);
            ensure!(annotation == r.annotation, "annotation of `{}` differs on replay", r.text);
            ensure!(verdict == r.verdict, "verdict of `{}` differs on replay", r.text);
            replayed += 1;
        }
    }
    ensure!(replayed > corpus.scenes.len(), "only {replayed} responses stored");
    Ok(format!("response survived SIGKILL; {replayed} stored verdicts reproduced by the library"))
}

fn elicitation_loop() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = common::write_service_config(dir.path(), &dir.path().join("data"));
    let server = common::Server::start(&config);
    let (_, session) = server.post("/sessions", &json!({"experiment_id": "two-balls", "participant_id": "p9"}));
    let sid = session["session_id"].as_str().unwrap().to_string();
    let (_, first) = server.post(&format!("/sessions/{sid}/submissions"), &json!({"text": "the ball"}));
    ensure!(
        first["verdict"]["status"] == "ambiguous"
            && first["verdict"]["matching_ids"].as_array().map(Vec::len) == Some(2)
            && first["advanced"] == false
            && first["message"].as_str().is_some_and(|m| m.contains('2')),
        "first attempt: {first}"
    );
    let (_, second) = server.post(&format!("/sessions/{sid}/submissions"), &json!({"text": "the red ball"}));
    ensure!(second["verdict"]["status"] == "unique" && second["advanced"] == true, "second attempt: {second}");
    let (_, export) = server.get("/experiments/two-balls/responses");
    let responses = export["responses"].as_array().cloned().unwrap_or_default();
    ensure!(responses.len() == 1 && responses[0]["attempts"] == 2, "export: {export}");
    Ok("ambiguous (2 matches) then unique; one response with 2 attempts".to_string())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("PRIMARY", "worked examples", worked_examples),
        ("PRIMARY", "round trip", round_trip),
        ("PRIMARY", "bilingual invariance", bilingual_invariance),
        ("PRIMARY", "oracle equivalence", oracle_equivalence),
        ("PRIMARY", "metric unit values", metric_values),
        ("PRIMARY", "method comparison", method_comparison),
        ("PRIMARY", "service durability and purity", service_durability),
        ("SECONDARY", "elicitation loop", elicitation_loop),
    ];
    let mut failed = 0;
    for (tier, name, run) in criteria {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".to_string()))
        });
        match outcome {
            Ok(detail) => println!("PASS [{tier}] {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{tier}] {name}: {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
