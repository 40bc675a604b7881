//! Multi-run experiments behind the `train`, `ablate` and `beta-sweep`
//! subcommands.

use serde::Serialize;

use super::config::RunConfig;
use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::model::{FusionMode, Variant};
use crate::pipeline::Prepared;
use crate::train::{run_repetitions, MetricTriple, RepetitionSummary, TrainConfig};

pub const VERSION: &str = concat!("acss-gcn ", env!("CARGO_PKG_VERSION"));

/// The sensitivity grid for the refinement weight.
pub const BETA_GRID: [f64; 8] = [0.0, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 0.1];

/// Variants compared by the ablation, in table order.
pub const ABLATION_VARIANTS: [Variant; 4] = [
    Variant::SpectralOnly,
    Variant::SpatialOnly,
    Variant::NoAttention,
    Variant::Full(FusionMode::Add),
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub mode: String,
    pub beta: f64,
    pub refine: bool,
    pub repetitions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRow {
    pub seed: u64,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsDocument {
    pub provenance: Provenance,
    /// Metrics of the first repetition, whose map and checkpoint are saved.
    #[serde(flatten)]
    pub report: MetricsReport,
    pub runs: Vec<RunRow>,
    pub mean: MetricTriple,
    pub std: MetricTriple,
    pub superpixels: usize,
}

impl MetricsDocument {
    pub fn new(cfg: &RunConfig, variant: Variant, data: &Prepared, summary: &RepetitionSummary) -> Self {
        let runs = summary
            .runs
            .iter()
            .map(|r| RunRow {
                seed: r.seed,
                oa: r.evaluation.report.oa,
                aa: r.evaluation.report.aa,
                kappa: r.evaluation.report.kappa,
            })
            .collect();
        MetricsDocument {
            provenance: Provenance {
                config_hash: cfg.hash(),
                seed: cfg.train.seed,
                version: VERSION.to_string(),
                mode: variant.name().to_string(),
                beta: cfg.train.beta,
                refine: cfg.train.refine,
                repetitions: cfg.train.repetitions,
            },
            report: summary.runs[0].evaluation.report.clone(),
            runs,
            mean: summary.mean,
            std: summary.std,
            superpixels: data.nodes(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("metrics serialize");
        text.push('\n');
        text
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub mean: MetricTriple,
    pub per_seed_oa: Vec<f64>,
}

pub fn ablate(train: &TrainConfig, data: &Prepared) -> Result<Vec<AblationRow>> {
    ABLATION_VARIANTS
        .iter()
        .map(|&variant| {
            let summary = run_repetitions(train, variant, data)?;
            Ok(AblationRow {
                variant,
                mean: summary.mean,
                per_seed_oa: summary.runs.iter().map(|r| r.evaluation.report.oa).collect(),
            })
        })
        .collect()
}

/// `variant,oa,kappa` with metrics in percent.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,oa,kappa\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.2},{:.2}\n",
            r.variant.name(),
            100.0 * r.mean.oa,
            100.0 * r.mean.kappa
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub mean: MetricTriple,
}

pub fn beta_sweep(train: &TrainConfig, data: &Prepared, betas: &[f64]) -> Result<Vec<SweepRow>> {
    betas
        .iter()
        .map(|&beta| {
            let cfg = TrainConfig { beta, ..train.clone() };
            let summary = run_repetitions(&cfg, cfg.variant(), data)?;
            Ok(SweepRow {
                beta,
                mean: summary.mean,
            })
        })
        .collect()
}

/// `beta,oa` with OA in percent.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("beta,oa\n");
    for r in rows {
        out.push_str(&format!("{},{:.2}\n", r.beta, 100.0 * r.mean.oa));
    }
    out
}
