//! Ablation grids: each grid enumerates config rows, trains every row from
//! the same seed, and reports the val-split metric columns per row.

use std::path::Path;

use crate::encoder::FusionDirection;
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::report::MetricRow;
use crate::harness::trainer::train;
use crate::data::transforms::CotMode;

pub const GRID_NAMES: [&str; 4] = ["fusion_layers", "decoder_depth", "fusion_direction", "cot"];

#[derive(Clone, Debug)]
pub struct GridRow {
    pub label: String,
    pub config: RunConfig,
}

/// Enumerates the rows of a named grid over a base config.
pub fn grid_rows(grid: &str, base: &RunConfig) -> Result<Vec<GridRow>> {
    let row = |label: String, config: RunConfig| GridRow { label, config };
    match grid {
        "fusion_layers" => {
            let stages: [&[usize]; 5] = [&[], &[4], &[3, 4], &[2, 3, 4], &[1, 2, 3, 4]];
            Ok(stages
                .iter()
                .map(|s| {
                    let mut cfg = base.clone();
                    cfg.model.encoder.active_fusion_stages = s.to_vec();
                    let label = if s.is_empty() {
                        "fusion=none".to_string()
                    } else {
                        let parts: Vec<String> = s.iter().map(|v| v.to_string()).collect();
                        format!("fusion={{{}}}", parts.join(","))
                    };
                    row(label, cfg)
                })
                .collect())
        }
        "decoder_depth" => Ok([1usize, 2, 3]
            .iter()
            .map(|&d| {
                let mut cfg = base.clone();
                cfg.model.decoder.depth = d;
                row(format!("depth={d}"), cfg)
            })
            .collect()),
        "fusion_direction" => Ok([
            FusionDirection::FineIntoGlobal,
            FusionDirection::Sum,
            FusionDirection::GlobalIntoFine,
        ]
        .iter()
        .map(|&dir| {
            let mut cfg = base.clone();
            cfg.model.encoder.fusion_direction = dir;
            row(format!("direction={}", dir.as_str()), cfg)
        })
        .collect()),
        "cot" => Ok([CotMode::On, CotMode::Off]
            .iter()
            .map(|&mode| {
                let mut cfg = base.clone();
                cfg.cot_mode = mode;
                row(format!("cot={mode}"), cfg)
            })
            .collect()),
        other => Err(Error::input(format!(
            "unknown grid {other:?}; valid grids: {}",
            GRID_NAMES.join(", ")
        ))),
    }
}

/// Trains every row under `out_dir/<label>` and collects its val-split
/// metrics. Every row keeps the base seed.
pub fn run_grid(grid: &str, base: &RunConfig, out_dir: &Path) -> Result<Vec<MetricRow>> {
    let rows = grid_rows(grid, base)?;
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        let dir = out_dir.join(sanitize(&r.label));
        let outcome = train(&r.config, &dir)?;
        let mut metric = outcome.report.splits["val"].clone();
        metric.label = r.label;
        out.push(metric);
    }
    Ok(out)
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}
