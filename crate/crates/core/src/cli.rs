//! Command-line front end.

use std::collections::{BTreeSet, HashMap};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::baseline::{labeled_examples, tag, train_tagger, TaggerModel};
use crate::corpus::{
    default_train_fraction, import_tuna, load_corpus, project, save_corpus, split_corpus, write_atomic, Corpus,
};
use crate::domain::TaggedProperty;
use crate::eval::{compare_methods, evaluate_items, render_table, ComparisonSummary, EvalReport, TableRow};
use crate::lexicon::{align_training, induce_lexicon, Language, MappingTable};
use crate::parser::{annotate_text, tokenize, AnnotationResult};
use crate::service::{self, ServiceConfig};
use crate::synth;

pub const ANNOTATIONS_FORMAT: &str = "refanno-annotations/1";

#[derive(Debug, Parser)]
#[command(name = "refanno", version, about = "Semantic annotation of definite descriptions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Heuristic,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Annotate every description of a corpus.
    Annotate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Heuristic)]
        method: Method,
        /// Mapping table (.tsv or .json); required by the heuristic method.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Tagger model; required by the baseline method.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Induce a mapping table from an annotated training corpus.
    InduceLexicon {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the token-labelling baseline.
    TrainBaseline {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded train/test split.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        /// Training share; defaults by domain.
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Score one or two annotation files against gold.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long = "hyp", required = true, num_args = 1)]
        hyps: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
    /// Convert TUNA-style XML (a file or a directory) into a corpus.
    ImportTuna {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic GRE3D3-style corpus.
    Synth {
        #[arg(long, default_value_t = 200)]
        items: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "en")]
        language: Language,
        /// Share of items that get an extra unknown modifier.
        #[arg(long, default_value_t = 0.0)]
        unknown_rate: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the complete hand lexicon.
        #[arg(long)]
        lexicon_out: Option<PathBuf>,
    },
    /// Run the experiment service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedItem {
    pub id: String,
    pub properties: BTreeSet<TaggedProperty>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unknown_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationsFile {
    pub format: String,
    pub corpus: String,
    pub method: Method,
    pub items: Vec<AnnotatedItem>,
}

impl AnnotationsFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: AnnotationsFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if file.format != ANNOTATIONS_FORMAT {
            bail!("{}: unsupported format `{}` (expected {ANNOTATIONS_FORMAT})", path.display(), file.format);
        }
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotations serialize") + "\n"
    }
}

pub enum Annotator<'a> {
    Heuristic(&'a MappingTable),
    Baseline(&'a TaggerModel),
}

/// Annotates every item of `corpus`, in corpus order.
pub fn annotate_corpus(corpus: &Corpus, annotator: &Annotator<'_>) -> AnnotationsFile {
    let items = corpus
        .items
        .iter()
        .map(|item| {
            let r: AnnotationResult = match annotator {
                Annotator::Heuristic(lex) => annotate_text(&item.description, item.language, lex, &corpus.schema),
                Annotator::Baseline(model) => tag(&tokenize(&item.description, item.language), item.language, model),
            };
            AnnotatedItem {
                id: item.id.clone(),
                unknown_tokens: r.unknown_tokens(),
                properties: r.properties,
            }
        })
        .collect();
    AnnotationsFile {
        format: ANNOTATIONS_FORMAT.to_string(),
        corpus: corpus.name.clone(),
        method: match annotator {
            Annotator::Heuristic(_) => Method::Heuristic,
            Annotator::Baseline(_) => Method::Baseline,
        },
        items,
    }
}

/// Scores `hyp` against the gold corpus. Roles count only when the gold
/// annotation distinguishes them.
pub fn score(gold: &Corpus, hyp: &AnnotationsFile) -> anyhow::Result<EvalReport> {
    let with_roles = gold.gold_encodes_roles();
    let by_id: HashMap<&str, &AnnotatedItem> = hyp.items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut ids = Vec::new();
    let mut hyps = Vec::new();
    let mut golds = Vec::new();
    for item in &gold.items {
        let Some(h) = by_id.get(item.id.as_str()) else {
            bail!("hypothesis file has no annotation for item `{}`", item.id);
        };
        ids.push(item.id.clone());
        hyps.push(project(h.properties.iter().cloned(), with_roles));
        golds.push(Corpus::gold_set(item, with_roles));
    }
    Ok(evaluate_items(&ids, &hyps, &golds)?)
}

#[derive(Debug, Serialize)]
pub struct EvaluationOutput {
    pub corpus: String,
    pub methods: Vec<String>,
    pub reports: Vec<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonSummary>,
}

pub fn evaluate_files(gold: &Corpus, hyps: &[AnnotationsFile]) -> anyhow::Result<EvaluationOutput> {
    let reports = hyps.iter().map(|h| score(gold, h)).collect::<anyhow::Result<Vec<_>>>()?;
    let comparison = match reports.as_slice() {
        [a, b] => Some(compare_methods(a, b)?),
        _ => None,
    };
    Ok(EvaluationOutput {
        corpus: gold.name.clone(),
        methods: hyps.iter().map(|h| method_name(h.method).to_string()).collect(),
        reports,
        comparison,
    })
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Heuristic => "Heuristic",
        Method::Baseline => "Baseline",
    }
}

fn fmt_p(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

pub fn render_evaluation(out: &EvaluationOutput) -> String {
    let methods: Vec<&str> = out.methods.iter().map(String::as_str).collect();
    let row = TableRow {
        corpus: &out.corpus,
        reports: out.reports.iter().collect(),
        comparison: out.comparison.as_ref(),
    };
    let mut text = render_table(&methods, &[row]);
    if let Some(c) = &out.comparison {
        match (&c.wilcoxon, &c.dice_note) {
            (Some(w), _) => {
                let _ = writeln!(text, "Dice: Wilcoxon W={:.1} z={:.4} p={} n={}", w.w, w.z, fmt_p(w.p), w.n);
            }
            (None, note) => {
                let _ = writeln!(text, "Dice: {}", note.as_deref().unwrap_or("not tested"));
            }
        }
        match (&c.chi_square, &c.accuracy_note) {
            (Some(x), None) => {
                let _ = writeln!(text, "Accuracy: chi2={:.4} df={} p={}", x.chi2, x.df, fmt_p(x.p));
            }
            (_, note) => {
                let _ = writeln!(text, "Accuracy: {}", note.as_deref().unwrap_or("not tested"));
            }
        }
        let _ = writeln!(text, "* significantly better at alpha = {}", crate::eval::ALPHA);
    }
    text
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

impl Cli {
    /// Flag requirements clap cannot express.
    fn check(&self) -> Result<(), clap::Error> {
        use clap::error::ErrorKind;
        use clap::CommandFactory;
        let missing = |flag: &str, method: &str| {
            let mut cmd = Cli::command();
            let sub = cmd.find_subcommand_mut("annotate").expect("annotate exists").clone();
            Err(sub.bin_name("refanno annotate").error(
                ErrorKind::MissingRequiredArgument,
                format!("the following required argument was not provided: --{flag} (needed by --method {method})"),
            ))
        };
        match &self.command {
            Command::Annotate {
                method: Method::Heuristic,
                lexicon: None,
                ..
            } => missing("lexicon", "heuristic"),
            Command::Annotate {
                method: Method::Baseline,
                model: None,
                ..
            } => missing("model", "baseline"),
            _ => Ok(()),
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Annotate {
            corpus,
            method,
            lexicon,
            model,
            out,
        } => {
            let corpus = load_corpus(&corpus)?;
            let file = match method {
                Method::Heuristic => {
                    let path = lexicon.expect("checked before execution");
                    let lex = MappingTable::load(&path, &corpus.schema.type_attribute)
                        .with_context(|| format!("loading {}", path.display()))?;
                    annotate_corpus(&corpus, &Annotator::Heuristic(&lex))
                }
                Method::Baseline => {
                    let path = model.expect("checked before execution");
                    let m = TaggerModel::load(&path).with_context(|| format!("loading {}", path.display()))?;
                    annotate_corpus(&corpus, &Annotator::Baseline(&m))
                }
            };
            write_file(&out, &file.to_json())?;
            eprintln!("annotated {} items -> {}", file.items.len(), out.display());
        }
        Command::InduceLexicon { train, out } => {
            let corpus = load_corpus(&train)?;
            let table = induce_lexicon(&corpus.training_items(), &corpus.schema)?;
            table.save(&out).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("induced {} entries from {} items -> {}", table.len(), corpus.items.len(), out.display());
        }
        Command::TrainBaseline { train, out } => {
            let corpus = load_corpus(&train)?;
            let items = corpus.training_items();
            let alignments = align_training(&items, &corpus.schema)?;
            let model = train_tagger(&labeled_examples(&items, &alignments))?;
            model.save(&out).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("trained tagger on {} items -> {}", items.len(), out.display());
        }
        Command::Split {
            corpus,
            fraction,
            seed,
            train_out,
            test_out,
        } => {
            let corpus = load_corpus(&corpus)?;
            let fraction = fraction.unwrap_or_else(|| default_train_fraction(&corpus.schema.domain));
            let (train, test) = split_corpus(&corpus, fraction, seed)?;
            save_corpus(&train, &train_out)?;
            save_corpus(&test, &test_out)?;
            eprintln!("split {} items: {} train, {} test", corpus.items.len(), train.items.len(), test.items.len());
        }
        Command::Evaluate { gold, hyps, format } => {
            if hyps.len() > 2 {
                bail!("at most two --hyp files can be compared");
            }
            let gold = load_corpus(&gold)?;
            let files = hyps.iter().map(|p| AnnotationsFile::load(p)).collect::<anyhow::Result<Vec<_>>>()?;
            let out = evaluate_files(&gold, &files)?;
            let text = match format {
                ReportFormat::Table => render_evaluation(&out),
                ReportFormat::Json => serde_json::to_string_pretty(&out)? + "\n",
            };
            std::io::stdout().write_all(text.as_bytes())?;
        }
        Command::ImportTuna { input, out } => {
            let (corpus, report) = import_tuna(&input)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            save_corpus(&corpus, &out)?;
            eprintln!(
                "imported {} of {} trials ({} plural skipped) -> {}",
                report.imported,
                report.trials,
                report.skipped_plural,
                out.display()
            );
        }
        Command::Synth {
            items,
            seed,
            language,
            unknown_rate,
            out,
            lexicon_out,
        } => {
            if !(0.0..=1.0).contains(&unknown_rate) {
                bail!("--unknown-rate must lie in [0, 1] (got {unknown_rate})");
            }
            let mut corpus = synth::generate_corpus(&synth::SynthConfig {
                items,
                seed,
                language,
                ..Default::default()
            });
            if unknown_rate > 0.0 {
                synth::inject_unknown_modifiers(&mut corpus, unknown_rate, seed.wrapping_add(1));
            }
            save_corpus(&corpus, &out)?;
            if let Some(path) = lexicon_out {
                synth::gre3d_lexicon()
                    .save(&path)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Serve { config, port, data_dir } => {
            let mut cfg = ServiceConfig::load(&config)?;
            if let Some(p) = port {
                cfg.port = p;
            }
            if let Some(d) = data_dir {
                cfg.data_dir = d;
            }
            tokio::runtime::Runtime::new()?.block_on(service::serve(cfg))?;
        }
    }
    Ok(())
}

/// Runs the command line; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args).and_then(|c| c.check().map(|()| c)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
