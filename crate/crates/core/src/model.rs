//! Full model: encoder, memory, decoders, and loss assembly.

use std::path::Path;

use gthna_autodiff::{BoundParams, Checkpoint, ParamRegistry, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{
    decode_attributes, decode_neighborhood, predict_edges, reconstruction_losses, register_decoder_params, ReconLosses,
    ReconOutput, ReconTargets,
};
use crate::encoder::{encode, register_encoder_params, EncoderConfig, NodeEmbeddings, SubgraphPlan};
use crate::error::{Error, Result};
use crate::graph::{Graph, LaplacianBundle};
use crate::memory::{memory_losses, MemoryBank, MemoryLosses, MemoryReadout};

/// Graphs at or below this size default to the smaller memory bank.
pub const SMALL_GRAPH_NODES: usize = 2000;
pub const DEFAULT_MEMORY_ITEMS: usize = 512;
pub const SMALL_GRAPH_MEMORY_ITEMS: usize = 64;

const MEMORY_TENSOR: &str = "memory.items";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub k: usize,
    pub d_h: usize,
    pub heads: usize,
    pub layers: usize,
    /// Unset means 512, or 64 for graphs of at most 2000 nodes.
    pub memory_items: Option<usize>,
    pub ratio: f64,
    pub beta: f64,
    pub lambda_s: f64,
    pub lambda_n: f64,
    pub lambda_m: f64,
    pub no_memory: bool,
    pub no_structure_extractor: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 2,
            d_h: 128,
            heads: 4,
            layers: 1,
            memory_items: None,
            ratio: 0.8,
            beta: 0.5,
            lambda_s: 1.0,
            lambda_n: 0.01,
            lambda_m: 0.01,
            no_memory: false,
            no_structure_extractor: false,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            k: self.k,
            d_h: self.d_h,
            heads: self.heads,
            layers: self.layers,
            ffn_hidden: 2 * self.d_h,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_s: self.lambda_s,
            lambda_n: self.lambda_n,
            lambda_m: self.lambda_m,
        }
    }

    pub fn memory_items_for(&self, n: usize) -> usize {
        self.memory_items.unwrap_or(if n <= SMALL_GRAPH_NODES { SMALL_GRAPH_MEMORY_ITEMS } else { DEFAULT_MEMORY_ITEMS })
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder().validate()?;
        for (name, v) in [("lambda_s", self.lambda_s), ("lambda_n", self.lambda_n), ("lambda_m", self.lambda_m)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!("ratio must lie in (0, 1], got {}", self.ratio)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be finite and non-negative, got {}", self.beta)));
        }
        if self.memory_items == Some(0) {
            return Err(Error::Config("memory_items must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_n: f64,
    pub lambda_m: f64,
}

impl LossWeights {
    /// `Σᵢ λ_s(l_s + l_a) + λ_n l_n + λ_m(l_m + l_p)`.
    pub fn total_loss(&self, l: &PerNodeLosses) -> f64 {
        (0..l.len())
            .map(|i| self.lambda_s * (l.l_s[i] + l.l_a[i]) + self.lambda_n * l.l_n[i] + self.lambda_m * (l.l_m[i] + l.l_p[i]))
            .sum()
    }

    /// `λ_s(l_s + l_a) + λ_n l_n + λ_m l_m`; the separateness term is left out.
    pub fn anomaly_scores(&self, l: &PerNodeLosses) -> Vec<f64> {
        (0..l.len())
            .map(|i| self.lambda_s * (l.l_s[i] + l.l_a[i]) + self.lambda_n * l.l_n[i] + self.lambda_m * l.l_m[i])
            .collect()
    }

    /// Reconstruction error used to pick pseudo-normal nodes (memory terms excluded).
    pub fn selection_errors(&self, l: &PerNodeLosses) -> Vec<f64> {
        (0..l.len())
            .map(|i| self.lambda_s * (l.l_s[i] + l.l_a[i]) + self.lambda_n * l.l_n[i])
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerNodeLosses {
    pub l_s: Vec<f64>,
    pub l_a: Vec<f64>,
    pub l_n: Vec<f64>,
    pub l_m: Vec<f64>,
    pub l_p: Vec<f64>,
}

impl PerNodeLosses {
    pub fn len(&self) -> usize {
        self.l_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l_s.is_empty()
    }

    pub fn all_finite_non_negative(&self) -> bool {
        [&self.l_s, &self.l_a, &self.l_n, &self.l_m, &self.l_p]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite() && *x >= 0.0))
    }
}

/// A graph with everything the model needs precomputed once.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub graph: Graph,
    pub pe: Tensor,
    pub plan: SubgraphPlan,
    pub targets: ReconTargets,
}

impl PreparedGraph {
    pub fn new(graph: Graph, cfg: &ModelConfig, cache_dir: Option<&Path>) -> Result<Self> {
        let bundle = LaplacianBundle::load_or_build(&graph, cfg.d_h, cache_dir)?;
        Self::from_parts(graph, bundle.pe, cfg.k)
    }

    /// Uses a caller-supplied positional encoding.
    pub fn from_parts(graph: Graph, pe: Tensor, k: usize) -> Result<Self> {
        if pe.rows() != graph.num_nodes() {
            return Err(Error::Shape(format!("{} positional rows for {} nodes", pe.rows(), graph.num_nodes())));
        }
        let plan = SubgraphPlan::build(&graph, k)?;
        let targets = ReconTargets::new(&graph);
        Ok(Self {
            graph,
            pe,
            plan,
            targets,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub embeddings: NodeEmbeddings,
    pub readout: Option<MemoryReadout>,
    pub recon: ReconOutput,
    pub recon_losses: ReconLosses,
    pub memory_losses: Option<MemoryLosses>,
    /// Scalar training objective.
    pub objective: Var,
}

impl ForwardPass {
    pub fn per_node(&self, tape: &Tape) -> PerNodeLosses {
        let col = |v: Var| tape.value(v).data().to_vec();
        let n = tape.value(self.recon_losses.l_s).rows();
        let (l_m, l_p) = match &self.memory_losses {
            Some(m) => (col(m.l_m), col(m.l_p)),
            None => (vec![0.0; n], vec![0.0; n]),
        };
        PerNodeLosses {
            l_s: col(self.recon_losses.l_s),
            l_a: col(self.recon_losses.l_a),
            l_n: col(self.recon_losses.l_n),
            l_m,
            l_p,
        }
    }

    pub fn h_a(&self, tape: &Tape) -> Tensor {
        tape.value(self.embeddings.h_a).clone()
    }
}

/// Trainable parameters plus the memory bank (absent without memory).
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamRegistry,
    pub bank: Option<MemoryBank>,
}

impl Model {
    pub fn init(cfg: &ModelConfig, num_nodes: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let enc = cfg.encoder();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamRegistry::new();
        register_encoder_params(&mut params, &enc, feature_dim, &mut rng)?;
        register_decoder_params(&mut params, enc.d_h, feature_dim, enc.ffn_hidden, &mut rng)?;
        let bank = if cfg.no_memory {
            None
        } else {
            Some(MemoryBank::random(cfg.memory_items_for(num_nodes), cfg.d_h, &mut rng)?)
        };
        Ok(Self {
            cfg: *cfg,
            params,
            bank,
        })
    }

    /// Records one full forward pass on `tape` using bound parameters `p`.
    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, g: &PreparedGraph) -> Result<ForwardPass> {
        let cfg = &self.cfg;
        let enc = cfg.encoder();
        let x = tape.constant(g.graph.features().clone());
        let pe = tape.constant(g.pe.clone());
        let embeddings = encode(tape, &g.plan, x, pe, &enc, p, cfg.no_structure_extractor)?;
        let h_a = embeddings.h_a;

        let (readout, h_bar) = match &self.bank {
            Some(bank) => {
                let r = bank.read(tape, h_a)?;
                (Some(r), r.h_bar)
            }
            None => (None, tape.concat(&[h_a, h_a])?),
        };

        let recon = ReconOutput {
            x_hat: decode_attributes(tape, h_bar, p, cfg.heads)?,
            a_hat: predict_edges(tape, h_bar)?,
            neighborhood: decode_neighborhood(tape, h_bar, p)?,
        };
        let recon_losses = reconstruction_losses(tape, &recon, &g.targets)?;
        let memory_losses = match &self.bank {
            Some(bank) => Some(memory_losses(tape, h_a, bank, cfg.beta)?),
            None => None,
        };

        let w = cfg.weights();
        let sa = tape.add(recon_losses.l_s, recon_losses.l_a)?;
        let sa = tape.scale(sa, w.lambda_s);
        let nb = tape.scale(recon_losses.l_n, w.lambda_n);
        let mut per_node = tape.add(sa, nb)?;
        if let Some(m) = &memory_losses {
            let mp = tape.add(m.l_m, m.l_p)?;
            let mp = tape.scale(mp, w.lambda_m);
            per_node = tape.add(per_node, mp)?;
        }
        let objective = tape.sum(per_node);
        Ok(ForwardPass {
            embeddings,
            readout,
            recon,
            recon_losses,
            memory_losses,
            objective,
        })
    }

    /// Gradient-free forward pass returning per-node losses and `h_a`.
    pub fn evaluate(&self, g: &PreparedGraph) -> Result<(PerNodeLosses, Tensor)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let fp = self.forward(&mut tape, &p, g)?;
        Ok((fp.per_node(&tape), fp.h_a(&tape)))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::from_registry(&self.params);
        let cfg = serde_json::to_string(&self.cfg).map_err(|e| Error::Config(e.to_string()))?;
        c.push_meta("kind", "model");
        c.push_meta("model", cfg);
        if let Some(bank) = &self.bank {
            c.tensors.push((MEMORY_TENSOR.to_string(), bank.items().clone()));
        }
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.meta("kind") != Some("model") {
            return Err(Error::Config("checkpoint does not hold a model".into()));
        }
        let cfg: ModelConfig = c
            .meta("model")
            .ok_or_else(|| Error::Config("checkpoint lacks model configuration".into()))
            .and_then(|s| serde_json::from_str(s).map_err(|e| Error::Config(format!("checkpoint model configuration: {e}"))))?;
        cfg.validate()?;
        let params = c.to_registry(&[MEMORY_TENSOR])?;
        let bank = match c.tensor(MEMORY_TENSOR) {
            Some(items) if !cfg.no_memory => Some(MemoryBank::from_items(items.clone())?),
            None if !cfg.no_memory => return Err(Error::Config("checkpoint lacks memory items".into())),
            _ => None,
        };
        Ok(Self { cfg, params, bank })
    }
}

#[cfg(test)]
mod tests {
    use gthna_autodiff::{gradient_check, GradCheckConfig};
    use rand::Rng;

    use super::*;
    use crate::graph::build_laplacian_bundle;

    pub(crate) fn small_config() -> ModelConfig {
        ModelConfig {
            d_h: 8,
            heads: 2,
            memory_items: Some(4),
            ..ModelConfig::default()
        }
    }

    fn random_graph(n: usize, d: usize, p: f64, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random_bool(p) {
                    edges.push((a, b));
                }
            }
        }
        Graph::new(x, &edges, None).unwrap()
    }

    fn lossy(v: f64) -> PerNodeLosses {
        PerNodeLosses {
            l_s: vec![2.0, 0.0, v],
            l_a: vec![1.0, 0.0, 0.5],
            l_n: vec![10.0, 0.0, 3.0],
            l_m: vec![5.0, 0.0, 1.0],
            l_p: vec![7.0, 0.0, 0.25],
        }
    }

    #[test]
    fn score_by_hand() {
        let w = ModelConfig::default().weights();
        let s = w.anomaly_scores(&lossy(1.0));
        assert!((s[0] - 3.15).abs() < 1e-12);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn total_loss_by_hand() {
        let w = ModelConfig::default().weights();
        let want = (3.0 + 0.1 + 0.12) + 0.0 + (1.5 + 0.03 + 0.0125);
        assert!((w.total_loss(&lossy(1.0)) - want).abs() < 1e-12);
        let zero_aux = LossWeights { lambda_s: 2.0, lambda_n: 0.0, lambda_m: 0.0 };
        assert!((zero_aux.total_loss(&lossy(1.0)) - 2.0 * 4.5).abs() < 1e-12);
        assert_eq!(w.total_loss(&PerNodeLosses { l_s: vec![0.0; 2], l_a: vec![0.0; 2], l_n: vec![0.0; 2], l_m: vec![0.0; 2], l_p: vec![0.0; 2] }), 0.0);
    }

    #[test]
    fn objective_on_tape_matches_assembly() {
        let g = random_graph(12, 5, 0.3, 1);
        let cfg = small_config();
        let prepared = PreparedGraph::new(g, &cfg, None).unwrap();
        let model = Model::init(&cfg, 12, 5, 0).unwrap();
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape);
        let fp = model.forward(&mut tape, &p, &prepared).unwrap();
        let l = fp.per_node(&tape);
        assert!(l.all_finite_non_negative());
        let on_tape = tape.value(fp.objective).item().unwrap();
        let off_tape = cfg.weights().total_loss(&l);
        assert!((on_tape - off_tape).abs() < 1e-9 * off_tape.abs().max(1.0));
    }

    #[test]
    fn full_objective_matches_finite_differences() {
        let g = random_graph(12, 4, 0.3, 2);
        let cfg = small_config();
        let prepared = PreparedGraph::new(g, &cfg, None).unwrap();
        let model = Model::init(&cfg, 12, 4, 3).unwrap();
        let report = gradient_check::<_, Error>(
            &model.params,
            |tape, p| Ok(model.forward(tape, p, &prepared)?.objective),
            &GradCheckConfig {
                max_coords: Some(120),
                seed: 5,
                ..GradCheckConfig::default()
            },
        )
        .unwrap();
        assert!(report.within(1e-3), "{report:?}");
    }

    #[test]
    fn permuting_nodes_permutes_embeddings() {
        let g = random_graph(10, 3, 0.35, 4);
        let cfg = small_config();
        let bundle = build_laplacian_bundle(&g, cfg.d_h).unwrap();
        let model = Model::init(&cfg, 10, 3, 1).unwrap();
        let base = PreparedGraph::from_parts(g.clone(), bundle.pe.clone(), cfg.k).unwrap();
        let (_, h) = model.evaluate(&base).unwrap();

        let perm = [3, 7, 0, 9, 1, 5, 2, 8, 6, 4];
        let pg = PreparedGraph::from_parts(g.permuted(&perm).unwrap(), bundle.permuted_pe(&perm), cfg.k).unwrap();
        let (_, hp) = model.evaluate(&pg).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..cfg.d_h {
                assert!((hp.get(new, c) - h.get(old, c)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn edgeless_graph_forward_is_finite() {
        let g = Graph::new(Tensor::from_fn(6, 3, |i, j| (i as f64 - j as f64) * 0.3), &[], None).unwrap();
        let cfg = small_config();
        let prepared = PreparedGraph::new(g, &cfg, None).unwrap();
        let model = Model::init(&cfg, 6, 3, 0).unwrap();
        let (l, h) = model.evaluate(&prepared).unwrap();
        assert!(l.all_finite_non_negative());
        assert!(h.all_finite());
    }

    #[test]
    fn ablations_run_and_zero_memory_terms() {
        let g = random_graph(9, 3, 0.3, 6);
        for (no_memory, no_structure_extractor) in [(true, false), (false, true), (true, true)] {
            let cfg = ModelConfig { no_memory, no_structure_extractor, ..small_config() };
            let prepared = PreparedGraph::new(g.clone(), &cfg, None).unwrap();
            let model = Model::init(&cfg, 9, 3, 0).unwrap();
            let (l, _) = model.evaluate(&prepared).unwrap();
            assert!(l.all_finite_non_negative());
            if no_memory {
                assert!(model.bank.is_none());
                assert!(l.l_m.iter().chain(&l.l_p).all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = small_config();
        let model = Model::init(&cfg, 5, 2, 9).unwrap();
        let back = Model::from_checkpoint(&Checkpoint::decode(&model.to_checkpoint().unwrap().encode()).unwrap()).unwrap();
        assert_eq!(back.cfg, model.cfg);
        assert_eq!(back.bank, model.bank);
        assert_eq!(back.params.len(), model.params.len());
        for (name, t) in model.params.iter() {
            assert_eq!(back.params.get(name).unwrap(), t);
        }
    }

    #[test]
    fn memory_size_defaults_follow_graph_size() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.memory_items_for(300), 64);
        assert_eq!(cfg.memory_items_for(2001), 512);
        assert_eq!(ModelConfig { memory_items: Some(7), ..cfg }.memory_items_for(10), 7);
    }

    #[test]
    fn negative_weight_rejected() {
        let cfg = ModelConfig { lambda_n: -0.1, ..ModelConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
