use std::fmt::Write;

use super::{Aggregate, RunSummary, SummaryLine};
use crate::metrics::FairnessReport;

const MAIN_METRICS: [(&str, &str); 8] = [
    ("Accuracy", "accuracy"),
    ("Precision", "precision"),
    ("Recall", "recall"),
    ("F-score", "f_score"),
    ("R_dp", "r_dp"),
    ("R_eo", "r_eo"),
    ("Δ_dp", "delta_dp"),
    ("Δ_eo", "delta_eo"),
];

/// Per-group rate rows: label and value.
pub fn subgroup_block(r: &FairnessReport) -> [(&'static str, f64); 6] {
    [
        ("TPR_maj", r.tpr1),
        ("TPR_min", r.tpr0),
        ("Δ_TPR", r.delta_tpr),
        ("FPR_maj", r.fpr1),
        ("FPR_min", r.fpr0),
        ("Δ_FPR", r.delta_fpr),
    ]
}

fn table(title: &str, header: &[String], rows: &[(String, Vec<String>)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(8);
    let widths: Vec<usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| {
            rows.iter()
                .map(|(_, cells)| cells[i].chars().count())
                .chain([h.chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let mut line = pad("", label_w);
    for (h, w) in header.iter().zip(&widths) {
        line.push_str("  ");
        line.push_str(&pad(h, *w));
    }
    let _ = writeln!(out, "{}", line.trim_end());
    let total = label_w + widths.iter().map(|w| w + 2).sum::<usize>();
    let _ = writeln!(out, "{}", "-".repeat(total));
    for (label, cells) in rows {
        let mut line = pad(label, label_w);
        for (c, w) in cells.iter().zip(&widths) {
            line.push_str("  ");
            line.push_str(&pad(c, *w));
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
    out
}

fn run_table(title: &str, runs: &[&RunSummary]) -> String {
    let header: Vec<String> = runs
        .iter()
        .map(|r| match r.seed {
            Some(s) if runs.iter().filter(|o| o.condition == r.condition).count() > 1 => {
                format!("{} #{s}", r.condition)
            }
            _ => r.condition.clone(),
        })
        .collect();
    let mut rows: Vec<(String, Vec<String>)> = MAIN_METRICS
        .iter()
        .map(|(label, key)| {
            let cells = runs
                .iter()
                .map(|r| format!("{:.4}", r.metrics.metric(key).unwrap_or(f64::NAN)))
                .collect();
            (label.to_string(), cells)
        })
        .collect();
    for i in 0..6 {
        let label = subgroup_block(&runs[0].metrics)[i].0.to_string();
        let cells = runs
            .iter()
            .map(|r| format!("{:.4}", subgroup_block(&r.metrics)[i].1))
            .collect();
        rows.push((label, cells));
    }
    rows.push((
        "Abstained".into(),
        runs.iter()
            .map(|r| format!("{:.1}%", r.abstention_rate * 100.0))
            .collect(),
    ));
    table(title, &header, &rows)
}

fn aggregate_table(title: &str, aggs: &[&Aggregate]) -> String {
    let header: Vec<String> = aggs.iter().map(|a| format!("{} (n={})", a.condition, a.n)).collect();
    let rows: Vec<(String, Vec<String>)> = MAIN_METRICS
        .iter()
        .map(|(label, key)| {
            let cells = aggs
                .iter()
                .map(|a| {
                    let m = a.mean.get(*key).copied().unwrap_or(f64::NAN);
                    match a.stderr.get(*key).copied().flatten() {
                        Some(se) => format!("{m:.4} ± {se:.4}"),
                        None => format!("{m:.4} ± n/a"),
                    }
                })
                .collect();
            (label.to_string(), cells)
        })
        .collect();
    table(title, &header, &rows)
}

/// Text tables for one command's summary lines.
pub fn render_tables(command: &str, lines: &[SummaryLine]) -> String {
    let runs: Vec<&RunSummary> = lines
        .iter()
        .filter_map(|l| match l {
            SummaryLine::Run(r) => Some(&**r),
            _ => None,
        })
        .collect();
    let aggs: Vec<&Aggregate> = lines
        .iter()
        .filter_map(|l| match l {
            SummaryLine::Aggregate(a) => Some(a),
            _ => None,
        })
        .collect();
    let mut out = String::new();
    if !aggs.is_empty() {
        out.push_str(&aggregate_table(
            &format!("[{command}] mean ± standard error over seeds"),
            &aggs,
        ));
        out.push('\n');
    }
    let single: Vec<&RunSummary> = runs
        .iter()
        .copied()
        .filter(|r| !aggs.iter().any(|a| a.condition == r.condition))
        .collect();
    if !single.is_empty() {
        out.push_str(&run_table(&format!("[{command}] per condition"), &single));
        out.push('\n');
    }
    for l in lines {
        if let SummaryLine::Failure(f) = l {
            let seed = f.seed.map(|s| format!(" seed {s}")).unwrap_or_default();
            let _ = writeln!(out, "FAILED {}{seed}: {}", f.condition, f.error);
        }
    }
    out
}
