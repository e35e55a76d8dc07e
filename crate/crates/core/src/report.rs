//! Score reports and run-directory outputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::memory::MemoryBank;
use crate::metrics::auc;
use crate::model::{LossWeights, Model, PerNodeLosses, PreparedGraph};
use crate::train::{EpochRecord, TrainOutcome};

pub const SCORES_FILE: &str = "scores.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub node: usize,
    pub l_s: f64,
    pub l_a: f64,
    pub l_n: f64,
    pub l_m: f64,
    pub score: f64,
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub rows: Vec<ScoreRow>,
    pub auc: Option<f64>,
    pub final_loss: f64,
    pub wall_time: f64,
    pub curve: Vec<EpochRecord>,
    pub config: RunConfig,
}

#[derive(Serialize)]
struct Metrics<'a> {
    auc: Option<f64>,
    final_loss: f64,
    wall_time: f64,
    nodes: usize,
    anomalies: Option<usize>,
    config: &'a RunConfig,
}

impl ScoreReport {
    pub fn new(losses: &PerNodeLosses, weights: &LossWeights, labels: Option<&[u8]>, config: RunConfig) -> Self {
        let scores = weights.anomaly_scores(losses);
        let rows = (0..losses.len())
            .map(|i| ScoreRow {
                node: i,
                l_s: losses.l_s[i],
                l_a: losses.l_a[i],
                l_n: losses.l_n[i],
                l_m: losses.l_m[i],
                score: scores[i],
                label: labels.map(|l| l[i]),
            })
            .collect();
        Self {
            rows,
            auc: labels.and_then(|l| auc(&scores, l).ok()),
            final_loss: weights.total_loss(losses),
            wall_time: 0.0,
            curve: Vec::new(),
            config,
        }
    }

    pub fn from_outcome(out: &TrainOutcome, labels: Option<&[u8]>, config: RunConfig) -> Self {
        let mut r = Self::new(&out.losses, &out.model.cfg.weights(), labels, config);
        r.final_loss = out.final_loss;
        r.wall_time = out.wall_time;
        r.curve = out.curve.clone();
        r
    }

    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }

    pub fn labels(&self) -> Option<Vec<u8>> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn write_scores(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["node_id", "l_s", "l_a", "l_n", "l_m", "score", "label"]).map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            let label = r.label.map(|l| l.to_string()).unwrap_or_default();
            w.write_record([
                r.node.to_string(),
                r.l_s.to_string(),
                r.l_a.to_string(),
                r.l_n.to_string(),
                r.l_m.to_string(),
                r.score.to_string(),
                label,
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_loss_curve(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for r in &self.curve {
            w.serialize(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn metrics_json(&self) -> String {
        let labels = self.labels();
        serde_json::to_string_pretty(&Metrics {
            auc: self.auc,
            final_loss: self.final_loss,
            wall_time: self.wall_time,
            nodes: self.rows.len(),
            anomalies: labels.map(|l| l.iter().filter(|&&x| x != 0).count()),
            config: &self.config,
        })
        .expect("metrics serialize")
    }

    /// Writes scores, metrics, loss curve and (optionally) the model checkpoint.
    pub fn write_dir(&self, dir: &Path, model: Option<&Model>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_scores(&dir.join(SCORES_FILE))?;
        self.write_loss_curve(&dir.join(LOSS_CURVE_FILE))?;
        let metrics = dir.join(METRICS_FILE);
        let mut f = fs::File::create(&metrics).map_err(|e| Error::io(&metrics, e))?;
        writeln!(f, "{}", self.metrics_json()).map_err(|e| Error::io(&metrics, e))?;
        if let Some(m) = model {
            m.to_checkpoint()?.save(dir.join(CHECKPOINT_FILE))?;
        }
        Ok(())
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            file: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

/// Reads the `score` and `label` columns of a scores file.
pub fn read_scores(path: &Path) -> Result<(Vec<f64>, Option<Vec<u8>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let score_col = col("score").ok_or_else(|| Error::Parse {
        file: path.to_path_buf(),
        line: 1,
        msg: "no `score` column".into(),
    })?;
    let label_col = col("label");
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |msg: String| Error::Parse {
            file: path.to_path_buf(),
            line,
            msg,
        };
        let s = rec.get(score_col).unwrap_or("");
        scores.push(s.trim().parse::<f64>().map_err(|_| bad(format!("bad score `{s}`")))?);
        if let Some(c) = label_col {
            let l = rec.get(c).unwrap_or("").trim();
            if !l.is_empty() {
                labels.push(match l {
                    "0" => 0,
                    "1" => 1,
                    _ => return Err(bad(format!("bad label `{l}`"))),
                });
            }
        }
    }
    let labels = if labels.len() == scores.len() && !labels.is_empty() { Some(labels) } else { None };
    Ok((scores, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityRow {
    pub node: usize,
    pub max_cosine: f64,
    pub label: Option<u8>,
}

/// Per-node maximum cosine similarity between `h_a` and the memory items.
pub fn report_similarity(model: &Model, g: &PreparedGraph) -> Result<Vec<SimilarityRow>> {
    let bank: &MemoryBank = model
        .bank
        .as_ref()
        .ok_or_else(|| Error::UnsupportedReport("model was trained without memory".into()))?;
    let (_, h_a) = model.evaluate(g)?;
    let sims = bank.max_cosine(&h_a)?;
    let labels = g.graph.labels();
    Ok(sims
        .into_iter()
        .enumerate()
        .map(|(node, max_cosine)| SimilarityRow {
            node,
            max_cosine,
            label: labels.map(|l| l[node]),
        })
        .collect())
}

pub fn write_similarity(rows: &[SimilarityRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["node_id", "max_cosine", "label"]).map_err(|e| csv_error(path, e))?;
    for r in rows {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([r.node.to_string(), r.max_cosine.to_string(), label]).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
