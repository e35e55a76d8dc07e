//! Full-batch training loop and final scoring.

use std::time::Instant;

use gthna_autodiff::{Adam, AdamConfig, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::select_pseudo_normal;
use crate::metrics::auc;
use crate::model::{Model, ModelConfig, PerNodeLosses, PreparedGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Log AUC every this many epochs (labels required).
    pub score_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 100,
            seed: 0,
            score_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.score_every == Some(0) {
            return Err(Error::Config("score_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub l_s: f64,
    pub l_a: f64,
    pub l_n: f64,
    pub l_m: f64,
    pub l_p: f64,
    pub auc: Option<f64>,
}

impl EpochRecord {
    fn new(epoch: usize, total: f64, l: &PerNodeLosses) -> Self {
        let sum = |v: &[f64]| v.iter().sum();
        Self {
            epoch,
            total,
            l_s: sum(&l.l_s),
            l_a: sum(&l.l_a),
            l_n: sum(&l.l_n),
            l_m: sum(&l.l_m),
            l_p: sum(&l.l_p),
            auc: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Per-node losses from a final pass with the trained model.
    pub losses: PerNodeLosses,
    pub scores: Vec<f64>,
    pub h_a: Tensor,
    pub curve: Vec<EpochRecord>,
    pub final_loss: f64,
    pub auc: Option<f64>,
    pub wall_time: f64,
}

fn labelled_auc(scores: &[f64], labels: Option<&[u8]>) -> Option<f64> {
    labels.and_then(|l| auc(scores, l).ok())
}

fn diverged(epoch: usize, last: Option<(usize, &Model)>) -> Result<Error> {
    Ok(Error::Divergence {
        epoch,
        last_finite: last.map(|(e, _)| e),
        checkpoint: match last {
            Some((_, m)) => Some(Box::new(m.to_checkpoint()?)),
            None => None,
        },
    })
}

/// Trains a freshly initialized model on `g` and scores every node.
pub fn train(model_cfg: &ModelConfig, cfg: &TrainConfig, g: &PreparedGraph) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let n = g.num_nodes();
    let mut model = Model::init(model_cfg, n, g.graph.feature_dim(), cfg.seed)?;
    let weights = model_cfg.weights();
    let labels = g.graph.labels();
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut last_good: Option<(usize, Model)> = None;

    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape);
        let fp = model.forward(&mut tape, &p, g)?;
        let losses = fp.per_node(&tape);
        let total = weights.total_loss(&losses);
        if !total.is_finite() {
            return Err(diverged(epoch, last_good.as_ref().map(|(e, m)| (*e, m)))?);
        }
        tape.backward(fp.objective)?;
        let grads = p.gradients(&tape);
        if !grads.all_finite() {
            return Err(diverged(epoch, last_good.as_ref().map(|(e, m)| (*e, m)))?);
        }
        last_good = Some((epoch, model.clone()));

        let mut record = EpochRecord::new(epoch, total, &losses);
        if cfg.score_every.is_some_and(|k| epoch % k == 0) {
            record.auc = labelled_auc(&weights.anomaly_scores(&losses), labels);
        }
        log::debug!("epoch {epoch}: loss {total:.6}");
        curve.push(record);

        adam.step(&mut model.params, &grads);
        if let Some(bank) = model.bank.as_mut() {
            let ratio = if epoch == 0 { 1.0 } else { model_cfg.ratio };
            let u_h = select_pseudo_normal(&weights.selection_errors(&losses), ratio)?;
            bank.update(&fp.h_a(&tape), &u_h)?;
        }
    }

    let (losses, h_a) = model.evaluate(g)?;
    let final_loss = weights.total_loss(&losses);
    if !final_loss.is_finite() {
        return Err(diverged(cfg.epochs, last_good.as_ref().map(|(e, m)| (*e, m)))?);
    }
    let scores = weights.anomaly_scores(&losses);
    let auc = labelled_auc(&scores, labels);
    Ok(TrainOutcome {
        model,
        losses,
        scores,
        h_a,
        curve,
        final_loss,
        auc,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, inject_anomalies, InjectionSpec, SbmSpec};

    fn tiny() -> PreparedGraph {
        let g = generate_sbm(&SbmSpec::new(2, 15, 0.3, 0.02, 4, 1)).unwrap();
        let g = inject_anomalies(&g, &InjectionSpec::new(1, 3, 2)).unwrap();
        let cfg = ModelConfig { d_h: 8, heads: 2, memory_items: Some(6), ..ModelConfig::default() };
        PreparedGraph::new(g, &cfg, None).unwrap()
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig { d_h: 8, heads: 2, memory_items: Some(6), ..ModelConfig::default() }
    }

    #[test]
    fn same_seed_same_outcome() {
        let g = tiny();
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let a = train(&tiny_cfg(), &cfg, &g).unwrap();
        let b = train(&tiny_cfg(), &cfg, &g).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.model.bank, b.model.bank);
    }

    #[test]
    fn loss_decreases_and_bank_stays_unit() {
        let g = tiny();
        let out = train(&tiny_cfg(), &TrainConfig { epochs: 30, lr: 5e-3, ..TrainConfig::default() }, &g).unwrap();
        assert!(out.curve.last().unwrap().total < out.curve[0].total);
        let items = out.model.bank.as_ref().unwrap().items();
        for j in 0..items.rows() {
            let norm: f64 = items.row(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-8);
        }
        assert!(out.auc.is_some());
        assert!(out.losses.all_finite_non_negative());
    }

    #[test]
    fn logged_totals_match_reassembly() {
        let g = tiny();
        let out = train(&tiny_cfg(), &TrainConfig { epochs: 2, ..TrainConfig::default() }, &g).unwrap();
        assert_eq!(out.final_loss, tiny_cfg().weights().total_loss(&out.losses));
        let scores = tiny_cfg().weights().anomaly_scores(&out.losses);
        assert_eq!(out.scores, scores);
    }

    #[test]
    fn huge_learning_rate_diverges_with_checkpoint() {
        let g = tiny();
        let cfg = TrainConfig { epochs: 200, lr: 1e6, ..TrainConfig::default() };
        match train(&tiny_cfg(), &cfg, &g) {
            Err(Error::Divergence { epoch, last_finite, checkpoint }) => {
                assert!(epoch > 0);
                assert_eq!(last_finite, Some(epoch - 1));
                assert!(checkpoint.is_some());
            }
            Ok(out) => panic!("expected divergence, final loss {}", out.final_loss),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(train(&tiny_cfg(), &cfg, &tiny()), Err(Error::Config(_))));
    }
}
