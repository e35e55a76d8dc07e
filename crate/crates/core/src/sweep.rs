//! Loss-weight sweeps and ablation comparisons. Cells run in parallel, each
//! with its own model and RNG; results keep grid order.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{LossWeights, ModelConfig, PreparedGraph};
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub lambda_s: f64,
    pub lambda_n: f64,
    pub lambda_m: f64,
    /// NaN when the cell failed or the graph has no usable labels.
    pub auc: f64,
    pub error: Option<String>,
}

/// Cartesian product in `s`, then `n`, then `m` order.
pub fn lambda_grid(s: &[f64], n: &[f64], m: &[f64]) -> Vec<LossWeights> {
    let mut out = Vec::with_capacity(s.len() * n.len() * m.len());
    for &lambda_s in s {
        for &lambda_n in n {
            for &lambda_m in m {
                out.push(LossWeights { lambda_s, lambda_n, lambda_m });
            }
        }
    }
    out
}

fn run_cell(cfg: &ModelConfig, train_cfg: &TrainConfig, g: &PreparedGraph) -> (f64, Option<String>) {
    match train(cfg, train_cfg, g) {
        Ok(out) => match out.auc {
            Some(a) => (a, None),
            None => (f64::NAN, Some("AUC undefined for these labels".into())),
        },
        Err(e) => (f64::NAN, Some(e.to_string())),
    }
}

pub fn sweep(base: &ModelConfig, train_cfg: &TrainConfig, g: &PreparedGraph, grid: &[LossWeights]) -> Result<Vec<SweepCell>> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    Ok(grid
        .par_iter()
        .map(|w| {
            let cfg = ModelConfig {
                lambda_s: w.lambda_s,
                lambda_n: w.lambda_n,
                lambda_m: w.lambda_m,
                ..*base
            };
            let (auc, error) = match cfg.validate() {
                Ok(()) => run_cell(&cfg, train_cfg, g),
                Err(e) => (f64::NAN, Some(e.to_string())),
            };
            SweepCell {
                lambda_s: w.lambda_s,
                lambda_n: w.lambda_n,
                lambda_m: w.lambda_m,
                auc,
                error,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoMemory,
    NoStructureExtractor,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoMemory, Variant::NoStructureExtractor];

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            no_memory: self == Variant::NoMemory,
            no_structure_extractor: self == Variant::NoStructureExtractor,
            ..*base
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMemory => "no_memory",
            Variant::NoStructureExtractor => "no_structure_extractor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub auc: f64,
    pub error: Option<String>,
}

/// Trains every variant under every seed.
pub fn ablate(base: &ModelConfig, train_cfg: &TrainConfig, g: &PreparedGraph, seeds: &[u64]) -> Vec<AblationRow> {
    let jobs: Vec<(Variant, u64)> = Variant::ALL.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    jobs.par_iter()
        .map(|&(variant, seed)| {
            let cfg = variant.apply(base);
            let (auc, error) = run_cell(&cfg, &TrainConfig { seed, ..*train_cfg }, g);
            AblationRow { variant, seed, auc, error }
        })
        .collect()
}

/// Mean AUC per variant over finite cells.
pub fn ablation_means(rows: &[AblationRow]) -> Vec<(Variant, f64)> {
    Variant::ALL
        .iter()
        .map(|&v| {
            let aucs: Vec<f64> = rows.iter().filter(|r| r.variant == v && r.auc.is_finite()).map(|r| r.auc).collect();
            let mean = if aucs.is_empty() { f64::NAN } else { aucs.iter().sum::<f64>() / aucs.len() as f64 };
            (v, mean)
        })
        .collect()
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
