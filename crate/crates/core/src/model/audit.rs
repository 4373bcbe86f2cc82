//! Learnable-parameter accounting and the comparison against the published
//! per-layer figures.

use std::fmt::Write as _;

use serde::Serialize;

use super::arch::{shape_propagate, ArchitectureConfig, LayerSpec, Shape};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditRow {
    pub index: usize,
    pub label: String,
    pub output: Shape,
    pub parameters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParameterAudit {
    pub rows: Vec<AuditRow>,
    pub total: usize,
}

/// Published learnable-parameter counts of comparable architectures, in millions.
pub const REFERENCE_MODELS: [(&str, f64); 5] = [
    ("ResNet50", 23.58),
    ("VGG16", 138.35),
    ("GoogleNet", 6.8),
    ("PV-CrackNet", 7.01),
    ("PV-faultNet", 2.92),
];

/// Published per-layer parameter counts of the classifier, keyed by row label.
pub const PUBLISHED_COUNTS: [(&str, usize); 5] = [
    ("Convolution-01", 140),
    ("Convolution-02", 460),
    ("FC-01", 2_916_100),
    ("FC-02", 5_050),
    ("Output", 102),
];

/// Published output dimensions, stated for a 300x300 input.
pub const PUBLISHED_DIMS: [(&str, &str); 6] = [
    ("Input", "3,300x300"),
    ("Convolution-01", "5,298x298"),
    ("Max-pool-01", "5,149x149"),
    ("Convolution-02", "10,147x147"),
    ("Max-pool-02", "10,73x73"),
    ("FC-01", "100"),
];

/// Published total, in millions, to two decimals.
pub const PUBLISHED_TOTAL_MILLIONS: f64 = 2.92;

/// Per-layer output shapes and learnable-parameter counts.
///
/// Conv layers hold `(kh * kw * in_channels + 1) * filters`, fully connected
/// and output layers `(inputs + 1) * outputs`, batchnorm `2 * channels`;
/// everything else holds none.
pub fn count_parameters(config: &ArchitectureConfig) -> Result<ParameterAudit> {
    let shapes = shape_propagate(config)?;
    let mut rows = Vec::with_capacity(shapes.len());
    let (mut convs, mut fcs, mut pools) = (0, 0, 0);
    for (i, layer) in config.layers.iter().enumerate() {
        let input = if i == 0 { shapes[0] } else { shapes[i - 1] };
        let (label, parameters) = match layer {
            LayerSpec::Input { .. } => ("Input".to_string(), 0),
            LayerSpec::Conv { filters, kernel, .. } => {
                convs += 1;
                (
                    format!("Convolution-{convs:02}"),
                    (kernel[0] * kernel[1] * input.channels() + 1) * filters,
                )
            }
            LayerSpec::Maxpool => {
                pools += 1;
                (format!("Max-pool-{pools:02}"), 0)
            }
            LayerSpec::Flatten => ("Flatten".to_string(), 0),
            LayerSpec::FullyConnected { neurons } => {
                fcs += 1;
                (format!("FC-{fcs:02}"), (input.numel() + 1) * neurons)
            }
            LayerSpec::Relu => ("ReLU".to_string(), 0),
            LayerSpec::Batchnorm => ("BatchNorm".to_string(), 2 * input.channels()),
            LayerSpec::Dropout { rate } => (format!("Dropout({rate})"), 0),
            LayerSpec::Output { neurons } => ("Output".to_string(), (input.numel() + 1) * neurons),
        };
        rows.push(AuditRow {
            index: i,
            label,
            output: shapes[i],
            parameters,
        });
    }
    let total = rows.iter().map(|r| r.parameters).sum();
    Ok(ParameterAudit { rows, total })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditComparison {
    pub label: String,
    pub computed: usize,
    pub published: usize,
    pub matches: bool,
    /// `computed - published`
    pub delta: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PublishedAudit {
    pub audit: ParameterAudit,
    pub comparisons: Vec<AuditComparison>,
    pub total_millions: f64,
    pub total_matches: bool,
    /// Output-dimension rows that differ from the published trace.
    pub dimension_mismatches: Vec<(String, String, String)>,
}

impl PublishedAudit {
    pub fn mismatches(&self) -> impl Iterator<Item = &AuditComparison> {
        self.comparisons.iter().filter(|c| !c.matches)
    }

    pub fn all_match(&self) -> bool {
        self.total_matches && self.comparisons.iter().all(|c| c.matches)
    }
}

/// Compares computed counts with the published per-layer figures.
///
/// A mismatch is a reported finding, not an error: at a 300x300 input the
/// first fully connected layer holds 5,329,100 parameters, not the published
/// 2,916,100 (which corresponds to a 224x224 input).
pub fn audit_against_published(config: &ArchitectureConfig) -> Result<PublishedAudit> {
    let audit = count_parameters(config)?;
    let comparisons = PUBLISHED_COUNTS
        .iter()
        .filter_map(|&(label, published)| {
            audit.rows.iter().find(|r| r.label == label).map(|r| AuditComparison {
                label: label.to_string(),
                computed: r.parameters,
                published,
                matches: r.parameters == published,
                delta: r.parameters as i64 - published as i64,
            })
        })
        .collect::<Vec<_>>();
    let total_millions = audit.total as f64 / 1e6;
    let total_matches = (total_millions * 100.0).round() / 100.0 == PUBLISHED_TOTAL_MILLIONS
        && comparisons.len() == PUBLISHED_COUNTS.len();
    let dimension_mismatches = PUBLISHED_DIMS
        .iter()
        .filter_map(|&(label, published)| {
            let row = audit.rows.iter().find(|r| r.label == label)?;
            let computed = row.output.to_string();
            (computed != published).then(|| (label.to_string(), computed, published.to_string()))
        })
        .collect();
    Ok(PublishedAudit {
        audit,
        comparisons,
        total_millions,
        total_matches,
        dimension_mismatches,
    })
}

fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl ParameterAudit {
    /// Block-wise table: layer, output dimensions, learnable parameters.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>18} {:>14}", "Layer", "Output Dimensions", "Parameters");
        let _ = writeln!(s, "{}", "-".repeat(50));
        for r in &self.rows {
            let params = if r.parameters == 0 {
                "---".to_string()
            } else {
                group_thousands(r.parameters)
            };
            let dims = match r.output {
                Shape::Flat(n) if !matches!(r.label.as_str(), "Flatten") => format!("{n} neurons"),
                other => other.to_string(),
            };
            let _ = writeln!(s, "{:<16} {:>18} {:>14}", r.label, dims, params);
        }
        let _ = writeln!(s, "{}", "-".repeat(50));
        let _ = writeln!(
            s,
            "{:<35} {:>14}",
            "Total Learnable parameters",
            group_thousands(self.total)
        );
        let _ = writeln!(s, "{:<35} {:>13.2}M", "", self.total as f64 / 1e6);
        s
    }
}

impl PublishedAudit {
    pub fn render(&self) -> String {
        let mut s = self.audit.render();
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<16} {:>12} {:>12} {:>12}  status",
            "Layer", "computed", "published", "delta"
        );
        for c in &self.comparisons {
            let _ = writeln!(
                s,
                "{:<16} {:>12} {:>12} {:>12}  {}",
                c.label,
                group_thousands(c.computed),
                group_thousands(c.published),
                c.delta,
                if c.matches { "ok" } else { "MISMATCH" }
            );
        }
        let _ = writeln!(
            s,
            "{:<16} {:>11.2}M {:>11.2}M {:>12}  {}",
            "Total",
            self.total_millions,
            PUBLISHED_TOTAL_MILLIONS,
            "",
            if self.total_matches { "ok" } else { "MISMATCH" }
        );
        for (label, computed, published) in &self.dimension_mismatches {
            let _ = writeln!(s, "note: {label} output {computed} differs from published {published}");
        }
        s
    }
}

/// Parameter comparison block with this configuration's computed count.
pub fn render_reference_comparison(computed_total: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<14} {:>22}", "Architecture", "Parameters (million)");
    for (name, millions) in REFERENCE_MODELS {
        let _ = writeln!(s, "{name:<14} {:>22}", millions.to_string());
    }
    let _ = writeln!(
        s,
        "{:<14} {:>22.2}  (computed: {})",
        "this config",
        computed_total as f64 / 1e6,
        group_thousands(computed_total)
    );
    s
}
