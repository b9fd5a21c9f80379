use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::ClassGroup;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub group: ClassGroup,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted means over base classes; `None` when the group is empty.
    pub base: Option<GroupMetrics>,
    pub few_shot: Option<GroupMetrics>,
    pub balanced_accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn group_mean(rows: &[&ClassMetrics]) -> Option<GroupMetrics> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    Some(GroupMetrics {
        precision: rows.iter().map(|r| r.precision).sum::<f64>() / n,
        recall: rows.iter().map(|r| r.recall).sum::<f64>() / n,
        f1: rows.iter().map(|r| r.f1).sum::<f64>() / n,
    })
}

/// Per-class precision, recall and F1 (each 0 when undefined), base and
/// few-shot group means, and balanced accuracy (mean recall over all classes).
pub fn compute_metrics(y_true: &[usize], y_pred: &[usize], classes: &[String], groups: &[ClassGroup]) -> Result<Metrics> {
    if y_true.is_empty() {
        return Err(Error::contract("metrics: no predictions"));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::contract("metrics: label sequences differ in length"));
    }
    if classes.len() != groups.len() {
        return Err(Error::contract("metrics: one group per class required"));
    }
    let c = classes.len();
    if y_true.iter().chain(y_pred).any(|&l| l >= c) {
        return Err(Error::contract("metrics: label outside the class list"));
    }
    let mut confusion = vec![vec![0usize; c]; c];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t][p] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let support: usize = confusion[k].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[k]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                class: classes[k].clone(),
                group: groups[k],
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let in_group = |g: ClassGroup| per_class.iter().filter(|m| m.group == g).collect::<Vec<_>>();
    let balanced_accuracy = per_class.iter().map(|m| m.recall).sum::<f64>() / c as f64;
    Ok(Metrics {
        base: group_mean(&in_group(ClassGroup::Base)),
        few_shot: group_mean(&in_group(ClassGroup::FewShot)),
        balanced_accuracy,
        confusion,
        per_class,
    })
}

impl Metrics {
    /// Recomputes balanced accuracy from the confusion matrix.
    pub fn balanced_accuracy_from_confusion(&self) -> f64 {
        let c = self.confusion.len();
        (0..c)
            .map(|k| ratio(self.confusion[k][k], self.confusion[k].iter().sum()))
            .sum::<f64>()
            / c as f64
    }
}

/// Metrics of one model under one experimental regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub model: String,
    pub seed: u64,
    pub metrics: Metrics,
    /// Named scalar diagnostics (gate threshold, final loss, ...), sorted by name.
    pub diagnostics: Vec<(String, f64)>,
    pub config: serde_json::Value,
}

fn fmt_group(g: Option<GroupMetrics>) -> String {
    match g {
        Some(g) => format!("{:>6.3} {:>6.3} {:>6.3}", g.precision, g.recall, g.f1),
        None => format!("{:>6} {:>6} {:>6}", "-", "-", "-"),
    }
}

/// Summary table with one row per report, then per-class detail and confusion matrices.
pub fn render_text(reports: &[MetricsReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<18} {:<9} {:>5} | {:^20} | {:^20} | {:>8}",
        "experiment", "model", "seed", "B  prec    rec     F1", "F  prec    rec     F1", "bal.acc"
    );
    let _ = writeln!(s, "{}", "-".repeat(92));
    for r in reports {
        let _ = writeln!(
            s,
            "{:<18} {:<9} {:>5} | {} | {} | {:>8.3}",
            r.experiment,
            r.model,
            r.seed,
            fmt_group(r.metrics.base),
            fmt_group(r.metrics.few_shot),
            r.metrics.balanced_accuracy
        );
    }
    for r in reports {
        let _ = writeln!(s, "\n[{} / {} / seed {}]", r.experiment, r.model, r.seed);
        let _ = writeln!(s, "{:<12} {:>5} {:>9} {:>7} {:>7} {:>7}", "class", "group", "support", "prec", "rec", "F1");
        for m in &r.metrics.per_class {
            let _ = writeln!(
                s,
                "{:<12} {:>5} {:>9} {:>7.3} {:>7.3} {:>7.3}",
                m.class,
                m.group.short(),
                m.support,
                m.precision,
                m.recall,
                m.f1
            );
        }
        let _ = writeln!(s, "confusion (rows: true, columns: predicted)");
        for row in &r.metrics.confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>4}")).collect();
            let _ = writeln!(s, "{}", cells.join(""));
        }
        for (k, v) in &r.diagnostics {
            let _ = writeln!(s, "{k} = {v}");
        }
    }
    s
}

/// One JSON object per report, newline-terminated.
pub fn render_jsonl(reports: &[MetricsReport]) -> Result<String> {
    let mut s = String::new();
    for r in reports {
        s.push_str(&serde_json::to_string(r).map_err(|e| Error::Numerical(format!("report serialization: {e}")))?);
        s.push('\n');
    }
    Ok(s)
}
