//! Metric tables in CSV and Markdown with the published column order:
//! attribute, scene, spatial, then overall. Absent types render as "n/a".

use serde::{Deserialize, Serialize};

use crate::metrics::{MetricAccumulator, ReasoningType};

/// Column order for reports; intentionally not the enum order.
pub const TYPE_COLUMNS: [ReasoningType; 3] = [
    ReasoningType::Attribute,
    ReasoningType::Scene,
    ReasoningType::Spatial,
];

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricRow {
    pub label: String,
    /// Per-type (gIoU, cIoU) in `TYPE_COLUMNS` order; None = type absent.
    pub per_type: [(Option<f64>, Option<f64>); 3],
    pub overall_giou: Option<f64>,
    pub overall_ciou: Option<f64>,
    pub samples: usize,
}

impl MetricRow {
    pub fn from_accumulator(label: impl Into<String>, acc: &MetricAccumulator) -> Self {
        let per_type =
            TYPE_COLUMNS.map(|t| (acc.giou_type(t), acc.ciou_type(t)));
        MetricRow {
            label: label.into(),
            per_type,
            overall_giou: acc.giou().ok(),
            overall_ciou: acc.ciou().ok(),
            samples: acc.total_count(),
        }
    }

    fn cells(&self) -> Vec<String> {
        let mut out = vec![self.label.clone()];
        for (g, c) in &self.per_type {
            out.push(cell(*g));
            out.push(cell(*c));
        }
        out.push(cell(self.overall_giou));
        out.push(cell(self.overall_ciou));
        out.push(self.samples.to_string());
        out
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

fn header(label: &str) -> Vec<String> {
    let mut out = vec![label.to_string()];
    for t in TYPE_COLUMNS {
        out.push(format!("{}_giou", t.as_str()));
        out.push(format!("{}_ciou", t.as_str()));
    }
    out.push("overall_giou".into());
    out.push("overall_ciou".into());
    out.push("samples".into());
    out
}

pub fn to_csv(row_label: &str, rows: &[MetricRow]) -> String {
    let mut lines = vec![header(row_label).join(",")];
    for r in rows {
        lines.push(r.cells().join(","));
    }
    lines.join("\n") + "\n"
}

pub fn to_markdown(row_label: &str, rows: &[MetricRow]) -> String {
    let head = header(row_label);
    let mut lines = vec![
        format!("| {} |", head.join(" | ")),
        format!("|{}|", vec![" --- "; head.len()].join("|")),
    ];
    for r in rows {
        lines.push(format!("| {} |", r.cells().join(" | ")));
    }
    lines.join("\n") + "\n"
}
