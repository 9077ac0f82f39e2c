//! Cost comparison between a baseline and a pruned structure.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arch::{cost_report, resolve_channels, ArchError, ArchitectureSpec, CostReport};
use crate::space::PrunedStructure;

/// `100 · (1 − pruned / base)` rounded to two decimals.
pub fn pruned_percent(base: u64, pruned: u64) -> f64 {
    if base == 0 {
        return 0.0;
    }
    let raw = 100.0 * (1.0 - pruned as f64 / base as f64);
    (raw * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedPercent {
    pub channels: f64,
    pub flops: f64,
    pub params: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub name: String,
    pub base_channels: usize,
    pub kept_channels: usize,
    pub pruned_percent: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitnessSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_fitness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluations: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_model_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fine_tuned_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fine_tune_epochs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub architecture: String,
    pub structure: PrunedStructure,
    pub baseline: CostReport,
    pub pruned: CostReport,
    pub pruned_percent: PrunedPercent,
    /// One row per conv or fc layer.
    pub layers: Vec<LayerRow>,
    pub fitness: FitnessSummary,
}

impl Report {
    /// Every number is recomputed from `spec` and `structure`.
    pub fn build(spec: &ArchitectureSpec, structure: &PrunedStructure) -> Result<Self, ArchError> {
        let baseline = cost_report(spec, None)?;
        let pruned = cost_report(spec, Some(structure))?;
        let base_layers = resolve_channels(spec, &PrunedStructure::new(spec.base_channels()))?;
        let kept_layers = resolve_channels(spec, structure)?;
        let layers = spec
            .layers
            .iter()
            .zip(base_layers.iter().zip(&kept_layers))
            .filter(|(desc, _)| desc.kind.has_weights())
            .map(|(desc, (b, k))| LayerRow {
                name: desc.name.clone(),
                base_channels: b.out_channels,
                kept_channels: k.out_channels,
                pruned_percent: pruned_percent(b.out_channels as u64, k.out_channels as u64),
            })
            .collect();
        Ok(Report {
            architecture: spec.name.clone(),
            structure: structure.clone(),
            baseline,
            pruned,
            pruned_percent: PrunedPercent {
                channels: pruned_percent(baseline.channels, pruned.channels),
                flops: pruned_percent(baseline.flops, pruned.flops),
                params: pruned_percent(baseline.params, pruned.params),
            },
            layers,
            fitness: FitnessSummary::default(),
        })
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "architecture: {}", self.architecture).unwrap();
        writeln!(out, "{:<10} {:>16} {:>16} {:>9}", "", "baseline", "pruned", "pruned %").unwrap();
        for (label, b, p, pct) in [
            ("channels", self.baseline.channels, self.pruned.channels, self.pruned_percent.channels),
            ("FLOPs", self.baseline.flops, self.pruned.flops, self.pruned_percent.flops),
            ("params", self.baseline.params, self.pruned.params, self.pruned_percent.params),
        ] {
            writeln!(out, "{label:<10} {:>16} {:>16} {pct:>9.2}", human(b), human(p)).unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "{:<28} {:>8} {:>8} {:>9}", "layer", "base", "kept", "pruned %").unwrap();
        for row in &self.layers {
            writeln!(
                out,
                "{:<28} {:>8} {:>8} {:>9.2}",
                row.name, row.base_channels, row.kept_channels, row.pruned_percent
            )
            .unwrap();
        }
        out
    }
}

/// Millions with two decimals above 10⁶, the raw count below.
pub fn human(value: u64) -> String {
    if value >= 1_000_000 {
        format!("{:.2}M", value as f64 / 1e6)
    } else {
        value.to_string()
    }
}

pub fn baseline_table(spec: &ArchitectureSpec, report: &CostReport) -> String {
    let mut out = String::new();
    writeln!(out, "architecture: {}", spec.name).unwrap();
    writeln!(out, "dimensions:   {}", spec.num_dimensions()).unwrap();
    writeln!(out, "channels:     {}", report.channels).unwrap();
    writeln!(out, "FLOPs:        {} ({})", human(report.flops), report.flops).unwrap();
    writeln!(out, "params:       {} ({})", human(report.params), report.params).unwrap();
    out
}
