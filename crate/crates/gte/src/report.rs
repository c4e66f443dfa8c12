//! Report files: JSON for machines, markdown tables for people.

use std::collections::BTreeSet;
use std::path::Path;

use gte_core::data::Label;
use gte_core::eval::EvaluationReport;
use gte_core::stats::chi_square_2x2;

use crate::error::{io, parse, Result};

pub fn write_json(path: &Path, report: &EvaluationReport) -> Result<()> {
    let json = serde_json::to_vec_pretty(report).expect("report serializes");
    std::fs::write(path, json).map_err(io(path))
}

pub fn read_json(path: &Path) -> Result<EvaluationReport> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| parse(path, e.line(), e.to_string()))
}

/// Fraction as a percentage with two decimals; `-` when undefined.
pub fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{:.2}", v * 100.0))
}

/// One row per run: overall and per-class accuracy.
pub fn accuracy_table(runs: &[(String, EvaluationReport)]) -> String {
    let mut s = String::from("| Model | Overall | Entailment | Contradiction | Neutral |\n|---|---:|---:|---:|---:|\n");
    for (name, r) in runs {
        s.push_str(&format!(
            "| {name} | {} | {} | {} | {} |\n",
            pct(Some(r.overall)),
            pct(r.per_class.entailment),
            pct(r.per_class.contradiction),
            pct(r.per_class.neutral)
        ));
    }
    s
}

/// Gold rows, predicted columns; implausible cells carry `(*)`.
pub fn confusion_table(name: &str, r: &EvaluationReport) -> String {
    let mut s = format!("**{name}** (rows gold, columns predicted)\n\n| | entailment | contradiction | neutral | accuracy |\n|---|---:|---:|---:|---:|\n");
    for g in Label::ALL {
        s.push_str(&format!("| {g} |"));
        for p in Label::ALL {
            let mark = if r.is_flagged(g, p) { " (*)" } else { "" };
            s.push_str(&format!(" {}{mark} |", r.confusion.get(g, p)));
        }
        s.push_str(&format!(" {} |\n", pct(r.confusion.class_accuracy(g))));
    }
    if !r.implausible.is_empty() {
        s.push_str("\n(*) implausible error\n");
    }
    s
}

/// Per-tag accuracies across runs. With exactly two runs a chi-square test
/// on correct/wrong counts is added; `↑`/`↓` mark a significant difference
/// of the second run against the first.
pub fn tag_table(runs: &[(String, EvaluationReport)]) -> String {
    let tags: BTreeSet<&String> = runs
        .iter()
        .filter_map(|(_, r)| r.per_tag.as_ref())
        .flat_map(|m| m.keys())
        .collect();
    let mut s = String::from("| Tag |");
    for (name, _) in runs {
        s.push_str(&format!(" {name} (n) | {name} |"));
    }
    let pair = runs.len() == 2;
    if pair {
        s.push_str(" χ² |");
    }
    s.push_str("\n|---|");
    s.push_str(&"---:|---:|".repeat(runs.len()));
    if pair {
        s.push_str("---:|");
    }
    s.push('\n');
    for tag in tags {
        s.push_str(&format!("| {tag} |"));
        let cells: Vec<_> = runs.iter().map(|(_, r)| r.per_tag.as_ref().and_then(|m| m.get(tag))).collect();
        for c in &cells {
            match c {
                Some(t) => s.push_str(&format!(" {} | {} |", t.examples, pct(Some(t.accuracy)))),
                None => s.push_str(" - | - |"),
            }
        }
        if pair {
            let chi = match (cells[0], cells[1]) {
                (Some(a), Some(b)) => chi_square_2x2([
                    [a.correct, a.examples - a.correct],
                    [b.correct, b.examples - b.correct],
                ])
                .ok()
                .map(|c| {
                    let arrow = match (c.significant, b.accuracy > a.accuracy) {
                        (false, _) => "",
                        (true, true) => " ↑",
                        (true, false) => " ↓",
                    };
                    format!("{:.2}{arrow}", c.statistic)
                }),
                _ => None,
            };
            s.push_str(&format!(" {} |", chi.unwrap_or_else(|| "-".into())));
        }
        s.push('\n');
    }
    s
}

/// Every table for a set of runs.
pub fn markdown(runs: &[(String, EvaluationReport)]) -> String {
    let mut s = String::from("## Accuracy (%)\n\n");
    s.push_str(&accuracy_table(runs));
    s.push_str("\n## Confusion matrices\n\n");
    for (name, r) in runs {
        s.push_str(&confusion_table(name, r));
        s.push('\n');
    }
    if runs.iter().any(|(_, r)| r.per_tag.is_some()) {
        s.push_str("## Accuracy by tag (%)\n\n");
        s.push_str(&tag_table(runs));
    }
    s
}
