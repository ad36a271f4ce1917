//! Scoring annotations against gold and comparing two methods.
//!
//! Dice is `2|A∩B| / (|A|+|B|)` with `dice({}, {}) = 1`. Accuracy is the
//! share of items whose hypothesis equals the gold set. Paired Dice scores
//! are compared with a Wilcoxon signed-rank test (zeros dropped, mean ranks
//! for ties, normal approximation with tie-corrected variance) and accuracy
//! with a Pearson chi-square test on the 2x2 exact/inexact table.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

/// Significance level used to flag differences.
pub const ALPHA: f64 = 0.05;

/// Fewest non-zero paired differences the normal approximation accepts.
pub const MIN_WILCOXON_PAIRS: usize = 5;

/// Differences closer than this are equal (ties) and smaller ones are zero.
const EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{hyps} hypotheses for {golds} gold items")]
    LengthMismatch { hyps: usize, golds: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("only {0} non-zero differences; the normal approximation needs at least {MIN_WILCOXON_PAIRS}")]
    TooFewDifferences(usize),
    #[error("contingency table has an empty row or column")]
    ZeroMarginal,
    #[error("reports cover different items (first mismatch at position {0})")]
    DifferentItems(usize),
}

pub fn dice<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let common = a.intersection(b).count();
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub id: String,
    pub dice: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub mean_dice: f64,
    pub accuracy: f64,
    pub items: Vec<ItemScore>,
}

impl EvalReport {
    pub fn exact_count(&self) -> usize {
        self.items.iter().filter(|i| i.exact).count()
    }

    pub fn dice_scores(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.dice).collect()
    }
}

/// Scores hypotheses against gold, naming items by position.
pub fn evaluate<T: Ord>(hyps: &[BTreeSet<T>], golds: &[BTreeSet<T>]) -> Result<EvalReport, EvalError> {
    let ids: Vec<String> = (0..hyps.len()).map(|i| i.to_string()).collect();
    evaluate_items(&ids, hyps, golds)
}

pub fn evaluate_items<T: Ord>(
    ids: &[String],
    hyps: &[BTreeSet<T>],
    golds: &[BTreeSet<T>],
) -> Result<EvalReport, EvalError> {
    if hyps.len() != golds.len() || ids.len() != hyps.len() {
        return Err(EvalError::LengthMismatch {
            hyps: hyps.len(),
            golds: golds.len(),
        });
    }
    if hyps.is_empty() {
        return Err(EvalError::Empty);
    }
    let items: Vec<ItemScore> = ids
        .iter()
        .zip(hyps.iter().zip(golds))
        .map(|(id, (h, g))| ItemScore {
            id: id.clone(),
            dice: dice(h, g),
            exact: h == g,
        })
        .collect();
    let n = items.len();
    let mean_dice = items.iter().map(|i| i.dice).sum::<f64>() / n as f64;
    let accuracy = items.iter().filter(|i| i.exact).count() as f64 / n as f64;
    Ok(EvalReport {
        n,
        mean_dice,
        accuracy,
        items,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of positive ranks minus sum of negative ranks.
    pub w: f64,
    pub z: f64,
    /// Two-sided.
    pub p: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
}

/// Two-sided p-value of a standard normal score.
pub fn two_sided_normal_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Upper-tail p-value of a chi-square statistic with one degree of freedom.
pub fn chi_square_p(chi2: f64) -> f64 {
    erfc((chi2 / 2.0).sqrt())
}

/// Wilcoxon signed-rank test on paired samples `a` and `b`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            hyps: a.len(),
            golds: b.len(),
        });
    }
    let mut diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| d.abs() > EPS)
        .collect();
    let n = diffs.len();
    if n < MIN_WILCOXON_PAIRS {
        return Err(EvalError::TooFewDifferences(n));
    }
    diffs.sort_by(|x, y| x.abs().total_cmp(&y.abs()));

    let mut w = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && (diffs[j].abs() - diffs[i].abs()).abs() <= EPS {
            j += 1;
        }
        // Positions i..j share the mean of ranks i+1..=j.
        let rank = (i + 1 + j) as f64 / 2.0;
        for d in &diffs[i..j] {
            w += rank * d.signum();
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let nf = n as f64;
    let variance = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 6.0 - tie_term / 12.0;
    let z = w / variance.sqrt();
    Ok(WilcoxonResult {
        w,
        z,
        p: two_sided_normal_p(z),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub chi2: f64,
    pub df: u32,
    pub p: f64,
}

/// Pearson chi-square on a 2x2 table, no continuity correction.
pub fn chi_square_2x2(table: [[u64; 2]; 2]) -> Result<ChiSquareResult, EvalError> {
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    if rows.contains(&0) || cols.contains(&0) {
        return Err(EvalError::ZeroMarginal);
    }
    let total = (rows[0] + rows[1]) as f64;
    let mut chi2 = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (c, &observed) in row.iter().enumerate() {
            let expected = rows[r] as f64 * cols[c] as f64 / total;
            chi2 += (observed as f64 - expected).powi(2) / expected;
        }
    }
    Ok(ChiSquareResult {
        chi2,
        df: 1,
        p: chi_square_p(chi2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AGreater,
    BGreater,
    Equal,
}

fn direction(a: f64, b: f64) -> Direction {
    if (a - b).abs() <= EPS {
        Direction::Equal
    } else if a > b {
        Direction::AGreater
    } else {
        Direction::BGreater
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub n: usize,
    pub mean_dice: [f64; 2],
    pub accuracy: [f64; 2],
    pub dice_direction: Direction,
    /// Absent when the test is not applicable; `dice_note` says why.
    pub wilcoxon: Option<WilcoxonResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dice_note: Option<String>,
    pub dice_significant: bool,
    pub accuracy_direction: Direction,
    pub chi_square: Option<ChiSquareResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_note: Option<String>,
    pub accuracy_significant: bool,
}

/// Compares two reports over the same items.
pub fn compare_methods(a: &EvalReport, b: &EvalReport) -> Result<ComparisonSummary, EvalError> {
    if a.n != b.n {
        return Err(EvalError::LengthMismatch { hyps: a.n, golds: b.n });
    }
    if let Some(pos) = a.items.iter().zip(&b.items).position(|(x, y)| x.id != y.id) {
        return Err(EvalError::DifferentItems(pos));
    }
    let (wilcoxon, dice_note) = match wilcoxon_signed_rank(&a.dice_scores(), &b.dice_scores()) {
        Ok(w) => (Some(w), None),
        Err(EvalError::TooFewDifferences(0)) => (None, Some("no difference".to_string())),
        Err(e @ EvalError::TooFewDifferences(_)) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let exact = [a.exact_count() as u64, b.exact_count() as u64];
    let table = [
        [exact[0], a.n as u64 - exact[0]],
        [exact[1], b.n as u64 - exact[1]],
    ];
    let (chi_square, accuracy_note) = match chi_square_2x2(table) {
        Ok(c) => (Some(c), None),
        Err(EvalError::ZeroMarginal) if exact[0] == exact[1] => (
            Some(ChiSquareResult {
                chi2: 0.0,
                df: 1,
                p: 1.0,
            }),
            Some("no difference".to_string()),
        ),
        Err(e @ EvalError::ZeroMarginal) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(ComparisonSummary {
        n: a.n,
        mean_dice: [a.mean_dice, b.mean_dice],
        accuracy: [a.accuracy, b.accuracy],
        dice_direction: direction(a.mean_dice, b.mean_dice),
        dice_significant: wilcoxon.is_some_and(|w| w.p < ALPHA),
        wilcoxon,
        dice_note,
        accuracy_direction: direction(a.accuracy, b.accuracy),
        accuracy_significant: chi_square.is_some_and(|c| c.p < ALPHA),
        chi_square,
        accuracy_note,
    })
}

/// One corpus row of the results table.
pub struct TableRow<'a> {
    pub corpus: &'a str,
    pub reports: Vec<&'a EvalReport>,
    pub comparison: Option<&'a ComparisonSummary>,
}

/// Renders a results table, one column pair (Dice, Acc.) per method.
/// With a comparison, the significantly better score is starred.
pub fn render_table(methods: &[&str], rows: &[TableRow<'_>]) -> String {
    let mut out = String::new();
    let width = rows.iter().map(|r| r.corpus.len()).chain([11]).max().unwrap_or(11);
    let _ = write!(out, "{:width$}", "", width = width);
    for m in methods {
        let _ = write!(out, "  {:^15}", m);
    }
    out.push('\n');
    let _ = write!(out, "{:width$}", "Test corpus", width = width);
    for _ in methods {
        let _ = write!(out, "  {:>7} {:>7}", "Dice", "Acc.");
    }
    out.push('\n');
    for row in rows {
        let _ = write!(out, "{:width$}", row.corpus, width = width);
        for (i, rep) in row.reports.iter().enumerate() {
            let star = |significant: bool, dir: Direction| {
                let better = matches!((i, dir), (0, Direction::AGreater) | (1, Direction::BGreater));
                if significant && better {
                    "*"
                } else {
                    ""
                }
            };
            let (ds, as_) = row
                .comparison
                .map(|c| {
                    (
                        star(c.dice_significant, c.dice_direction),
                        star(c.accuracy_significant, c.accuracy_direction),
                    )
                })
                .unwrap_or(("", ""));
            let _ = write!(
                out,
                "  {:>7} {:>7}",
                format!("{:.2}{ds}", rep.mean_dice),
                format!("{:.2}{as_}", rep.accuracy)
            );
        }
        out.push('\n');
    }
    for row in rows {
        if let Some(c) = row.comparison {
            out.push('\n');
            let _ = writeln!(out, "{} (n = {}):", row.corpus, c.n);
            match (&c.wilcoxon, &c.dice_note) {
                (Some(w), _) => {
                    let _ = writeln!(out, "  Dice: Wilcoxon W={:.1}, Z={:.2}, p={:.4}", w.w, w.z, w.p);
                }
                (None, note) => {
                    let _ = writeln!(out, "  Dice: {}", note.as_deref().unwrap_or("not tested"));
                }
            }
            match (&c.chi_square, &c.accuracy_note) {
                (Some(x), None) => {
                    let _ = writeln!(out, "  Acc.: chi2={:.2}, df={}, p={:.4}", x.chi2, x.df, x.p);
                }
                (_, note) => {
                    let _ = writeln!(out, "  Acc.: {}", note.as_deref().unwrap_or("not tested"));
                }
            }
        }
    }
    if rows.iter().any(|r| r.comparison.is_some()) {
        let _ = writeln!(out, "\n* significantly higher at alpha = {ALPHA}");
    }
    out
}
