use serde::{Deserialize, Serialize};

use crate::evaluation::fidelity::{Direction, FidelityReport};
use crate::training::CvSummary;

/// A table rendered as aligned UTF-8 text and as CSV.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedTable {
    pub text: String,
    pub csv: String,
}

/// Two-decimal signed rendering; negative zero prints as `0.00`.
pub fn fmt_delta(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render(header: &[String], rows: &[Vec<String>]) -> RenderedTable {
    let cols = header.len();
    let width: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .map(|r| r[c].chars().count())
                .chain([header[c].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&width)
            .enumerate()
            .map(|(i, (c, w))| {
                let pad = w - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut text = line(header);
    text.push('\n');
    text.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    text.push('\n');
    for r in rows {
        text.push_str(&line(r));
        text.push('\n');
    }
    let mut csv = header
        .iter()
        .map(|h| csv_field(h))
        .collect::<Vec<_>>()
        .join(",");
    csv.push('\n');
    for r in rows {
        csv.push_str(&r.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(","));
        csv.push('\n');
    }
    RenderedTable { text, csv }
}

/// Fidelity deltas at `fraction`: rows Fidelity± × {AUROC, AUPRC, Prob.},
/// one column per (model, method) pair in order of first appearance.
pub fn report_table(reports: &[FidelityReport], fraction: f64) -> RenderedTable {
    let mut columns: Vec<(String, String)> = Vec::new();
    for r in reports {
        let key = (r.model.clone(), r.method.clone());
        if !columns.contains(&key) {
            columns.push(key);
        }
    }
    let mut header = vec!["Metric".to_string()];
    header.extend(columns.iter().map(|(m, a)| format!("{m}/{a}")));
    let mut rows = Vec::new();
    for dir in [Direction::Plus, Direction::Minus] {
        for (label, pick) in [("AUROC", 0usize), ("AUPRC", 1), ("Prob.", 2)] {
            let mut row = vec![format!("Fidelity{} {label}", dir.symbol())];
            for (model, method) in &columns {
                let cell = reports
                    .iter()
                    .find(|r| r.direction == dir && &r.model == model && &r.method == method)
                    .and_then(|r| r.rung(fraction))
                    .map(|rung| {
                        let p = [&rung.auroc, &rung.auprc, &rung.mean_prob][pick];
                        fmt_delta(p.delta)
                    })
                    .unwrap_or_else(|| "n/a".into());
                row.push(cell);
            }
            rows.push(row);
        }
    }
    render(&header, &rows)
}

/// Cross-validated discrimination: model, AUROC ± std, AUPRC ± std.
pub fn utility_table(summaries: &[CvSummary]) -> RenderedTable {
    let header: Vec<String> = ["Model", "AUROC", "AUPRC"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.model.name().to_string(),
                format!("{:.4} ± {:.4}", s.auroc_mean, s.auroc_std),
                format!("{:.4} ± {:.4}", s.auprc_mean, s.auprc_std),
            ]
        })
        .collect();
    render(&header, &rows)
}
