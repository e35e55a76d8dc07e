//! Local-global graph Transformer encoder.
//!
//! Three stages: a per-node GCN over each node's k-hop induced subgraph, a
//! sigmoid gate that blends that with the Laplacian positional encoding, and
//! pre-LN Transformer blocks with dense attention over all nodes.

use std::sync::Arc;

use gthna_autodiff::{BoundParams, ParamRegistry, SparseMatrix, Tape, Tensor, Var};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{extract_k_hop_subgraph, Graph};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub k: usize,
    pub d_h: usize,
    pub heads: usize,
    pub layers: usize,
    /// Hidden width of the Transformer feed-forward block.
    pub ffn_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            k: 2,
            d_h: 128,
            heads: 4,
            layers: 1,
            ffn_hidden: 256,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        if self.heads == 0 || self.d_h == 0 || self.d_h % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_h ({}) must be a positive multiple of heads ({})",
                self.d_h, self.heads
            )));
        }
        if self.ffn_hidden == 0 {
            return Err(Error::Config("ffn_hidden must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sparse operators that run `k` GCN layers on every node's k-hop subgraph
/// at once.
///
/// Subgraph copies are stacked block-diagonally: block `v` holds the nodes of
/// `v`'s subgraph (root first) and carries that subgraph's own
/// `D̃^{-1/2}(A+I)D̃^{-1/2}`. `first` maps global features into the stack,
/// `middle` propagates within blocks, and `last` reads out each root row.
#[derive(Debug, Clone)]
pub struct SubgraphPlan {
    k: usize,
    first: Arc<SparseMatrix>,
    middle: Arc<SparseMatrix>,
    last: Arc<SparseMatrix>,
    stacked_rows: usize,
}

struct Block {
    nodes: Vec<usize>,
    /// Normalized propagation entries `(row, col, value)` in local indices.
    entries: Vec<(usize, usize, f64)>,
}

fn normalized_block(g: &Graph, v: usize, k: usize) -> Block {
    let sub = extract_k_hop_subgraph(g, v, k);
    let mut deg = vec![1.0f64; sub.len()];
    for &(a, b) in &sub.edges {
        deg[a] += 1.0;
        deg[b] += 1.0;
    }
    let mut entries: Vec<(usize, usize, f64)> = (0..sub.len()).map(|a| (a, a, 1.0 / deg[a])).collect();
    for &(a, b) in &sub.edges {
        let w = 1.0 / (deg[a] * deg[b]).sqrt();
        entries.push((a, b, w));
        entries.push((b, a, w));
    }
    Block {
        nodes: sub.nodes,
        entries,
    }
}

impl SubgraphPlan {
    pub fn build(g: &Graph, k: usize) -> Result<Self> {
        let n = g.num_nodes();
        let blocks: Vec<Block> = (0..n).into_par_iter().map(|v| normalized_block(g, v, k)).collect();
        let mut offsets = Vec::with_capacity(n);
        let mut total = 0;
        for b in &blocks {
            offsets.push(total);
            total += b.nodes.len();
        }

        let mut first = Vec::new();
        let mut middle = Vec::new();
        let mut last = Vec::new();
        for (v, b) in blocks.iter().enumerate() {
            let off = offsets[v];
            for &(r, c, w) in &b.entries {
                if k == 1 {
                    if r == 0 {
                        first.push((v, b.nodes[c], w));
                    }
                } else {
                    first.push((off + r, b.nodes[c], w));
                    middle.push((off + r, off + c, w));
                    if r == 0 {
                        last.push((v, off + c, w));
                    }
                }
            }
        }
        let first_rows = if k == 1 { n } else { total };
        Ok(Self {
            k,
            first: Arc::new(SparseMatrix::from_triplets(first_rows, n, first)?),
            middle: Arc::new(SparseMatrix::from_triplets(total, total, middle)?),
            last: Arc::new(SparseMatrix::from_triplets(n, total, last)?),
            stacked_rows: total,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Total number of stacked subgraph rows.
    pub fn stacked_rows(&self) -> usize {
        self.stacked_rows
    }
}

fn gcn_weight(layer: usize) -> String {
    format!("encoder.gcn.{layer}.weight")
}

/// GCN on each node's k-hop subgraph, reading out the root row.
/// ReLU between layers, none after the last.
pub fn structure_extract(tape: &mut Tape, plan: &SubgraphPlan, features: Var, p: &BoundParams) -> Result<Var> {
    let z = tape.matmul(features, p.var(&gcn_weight(0))?)?;
    if plan.k == 1 {
        return Ok(tape.spmm(plan.first.clone(), z)?);
    }
    let mut h = tape.spmm(plan.first.clone(), z)?;
    h = tape.relu(h);
    for layer in 1..plan.k - 1 {
        let z = tape.matmul(h, p.var(&gcn_weight(layer))?)?;
        let z = tape.spmm(plan.middle.clone(), z)?;
        h = tape.relu(z);
    }
    let z = tape.matmul(h, p.var(&gcn_weight(plan.k - 1))?)?;
    Ok(tape.spmm(plan.last.clone(), z)?)
}

/// `α = σ([h_pos ∥ h_sub] W_a)`, `h = α·h_pos + (1−α)·h_sub`.
pub fn fuse(tape: &mut Tape, h_pos: Var, h_sub: Var, w_a: Var) -> Result<(Var, Var)> {
    let cat = tape.concat(&[h_pos, h_sub])?;
    let logit = tape.matmul(cat, w_a)?;
    let alpha = tape.sigmoid(logit);
    let diff = tape.sub(h_pos, h_sub)?;
    let gated = tape.mul_col(diff, alpha)?;
    let h = tape.add(h_sub, gated)?;
    Ok((alpha, h))
}

/// Output of one Transformer block, with the per-head attention matrices.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub out: Var,
    pub attention: Vec<Var>,
}

fn layer_norm_affine(tape: &mut Tape, x: Var, p: &BoundParams, prefix: &str) -> Result<Var> {
    let y = tape.layer_norm(x, LAYER_NORM_EPS);
    let y = tape.mul_row(y, p.var(&format!("{prefix}.gain"))?)?;
    Ok(tape.add_row(y, p.var(&format!("{prefix}.bias"))?)?)
}

/// Pre-LN block: `H' = MHA(LN(H)) + H`, `H'' = FFN(LN(H')) + H'`.
pub fn transformer_layer(tape: &mut Tape, h: Var, p: &BoundParams, prefix: &str, heads: usize) -> Result<BlockOutput> {
    let d = tape.value(h).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("width {d} is not divisible by {heads} heads")));
    }
    let dk = d / heads;
    let x = layer_norm_affine(tape, h, p, &format!("{prefix}.ln1"))?;
    let q = tape.matmul(x, p.var(&format!("{prefix}.attn.wq"))?)?;
    let k = tape.matmul(x, p.var(&format!("{prefix}.attn.wk"))?)?;
    let v = tape.matmul(x, p.var(&format!("{prefix}.attn.wv"))?)?;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut attention = Vec::with_capacity(heads);
    for head in 0..heads {
        let (lo, hi) = (head * dk, (head + 1) * dk);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.row_softmax(scores);
        outs.push(tape.matmul(attn, vh)?);
        attention.push(attn);
    }
    let merged = if heads == 1 { outs[0] } else { tape.concat(&outs)? };
    let mha = tape.matmul(merged, p.var(&format!("{prefix}.attn.wo"))?)?;
    let h1 = tape.add(h, mha)?;

    let y = layer_norm_affine(tape, h1, p, &format!("{prefix}.ln2"))?;
    let f = tape.matmul(y, p.var(&format!("{prefix}.ffn.w1"))?)?;
    let f = tape.add_row(f, p.var(&format!("{prefix}.ffn.b1"))?)?;
    let f = tape.relu(f);
    let f = tape.matmul(f, p.var(&format!("{prefix}.ffn.w2"))?)?;
    let f = tape.add_row(f, p.var(&format!("{prefix}.ffn.b2"))?)?;
    let out = tape.add(h1, f)?;
    Ok(BlockOutput { out, attention })
}

pub fn register_transformer_params(
    reg: &mut ParamRegistry,
    prefix: &str,
    d: usize,
    ffn_hidden: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    reg.insert(format!("{prefix}.ln1.gain"), Tensor::ones(1, d))?;
    reg.insert(format!("{prefix}.ln1.bias"), Tensor::zeros(1, d))?;
    for w in ["wq", "wk", "wv", "wo"] {
        reg.insert_uniform(format!("{prefix}.attn.{w}"), d, d, rng)?;
    }
    reg.insert(format!("{prefix}.ln2.gain"), Tensor::ones(1, d))?;
    reg.insert(format!("{prefix}.ln2.bias"), Tensor::zeros(1, d))?;
    reg.insert_uniform(format!("{prefix}.ffn.w1"), d, ffn_hidden, rng)?;
    reg.insert(format!("{prefix}.ffn.b1"), Tensor::zeros(1, ffn_hidden))?;
    reg.insert_uniform(format!("{prefix}.ffn.w2"), ffn_hidden, d, rng)?;
    reg.insert(format!("{prefix}.ffn.b2"), Tensor::zeros(1, d))?;
    Ok(())
}

pub fn register_encoder_params(reg: &mut ParamRegistry, cfg: &EncoderConfig, feature_dim: usize, rng: &mut impl Rng) -> Result<()> {
    for layer in 0..cfg.k {
        let fan_in = if layer == 0 { feature_dim } else { cfg.d_h };
        reg.insert_uniform(gcn_weight(layer), fan_in, cfg.d_h, rng)?;
    }
    reg.insert_uniform("encoder.fuse.weight", 2 * cfg.d_h, 1, rng)?;
    for layer in 0..cfg.layers {
        register_transformer_params(reg, &format!("encoder.block.{layer}"), cfg.d_h, cfg.ffn_hidden, rng)?;
    }
    Ok(())
}

/// Handles for every intermediate of the encoder.
#[derive(Debug, Clone)]
pub struct NodeEmbeddings {
    pub h_sub: Var,
    pub h_pos: Var,
    /// `n × 1` fusion gates.
    pub alpha: Var,
    pub h_fused: Var,
    pub h_a: Var,
    pub attention: Vec<Vec<Var>>,
}

/// Runs the full encoder. With `skip_structure` the subgraph GCN is bypassed
/// and the fused representation is the positional encoding alone.
pub fn encode(
    tape: &mut Tape,
    plan: &SubgraphPlan,
    features: Var,
    pe: Var,
    cfg: &EncoderConfig,
    p: &BoundParams,
    skip_structure: bool,
) -> Result<NodeEmbeddings> {
    let n = tape.value(features).rows();
    if tape.value(pe).shape() != [n, cfg.d_h] {
        return Err(Error::Shape(format!(
            "positional encoding is {:?}, expected [{n}, {}]",
            tape.value(pe).shape(),
            cfg.d_h
        )));
    }
    let (h_sub, alpha, h_fused) = if skip_structure {
        let zeros = tape.constant(Tensor::zeros(n, cfg.d_h));
        let ones = tape.constant(Tensor::ones(n, 1));
        (zeros, ones, pe)
    } else {
        let h_sub = structure_extract(tape, plan, features, p)?;
        let (alpha, h) = fuse(tape, pe, h_sub, p.var("encoder.fuse.weight")?)?;
        (h_sub, alpha, h)
    };
    let mut h = h_fused;
    let mut attention = Vec::with_capacity(cfg.layers);
    for layer in 0..cfg.layers {
        let block = transformer_layer(tape, h, p, &format!("encoder.block.{layer}"), cfg.heads)?;
        h = block.out;
        attention.push(block.attention);
    }
    Ok(NodeEmbeddings {
        h_sub,
        h_pos: pe,
        alpha,
        h_fused,
        h_a: h,
        attention,
    })
}
