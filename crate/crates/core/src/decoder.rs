//! Attribute, edge and neighbourhood reconstruction, and the per-node
//! reconstruction losses.

use gthna_autodiff::{BoundParams, ParamRegistry, Tape, Tensor, Var};
use rand::Rng;

use crate::encoder::{register_transformer_params, transformer_layer};
use crate::error::{Error, Result};
use crate::graph::{neighborhood_statistics, Graph, EPS_VAR};

const ATTR: &str = "decoder.attr";
const HEADS: [&str; 3] = ["count", "mean", "logvar"];

fn linear(tape: &mut Tape, x: Var, p: &BoundParams, prefix: &str) -> Result<Var> {
    let y = tape.matmul(x, p.var(&format!("{prefix}.w"))?)?;
    Ok(tape.add_row(y, p.var(&format!("{prefix}.b"))?)?)
}

fn register_linear(reg: &mut ParamRegistry, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<()> {
    reg.insert_uniform(format!("{prefix}.w"), fan_in, fan_out, rng)?;
    reg.insert(format!("{prefix}.b"), Tensor::zeros(1, fan_out))?;
    Ok(())
}

/// Registers every decoder weight. Inputs are `2·d_h` wide; outputs are `d`.
pub fn register_decoder_params(
    reg: &mut ParamRegistry,
    d_h: usize,
    feature_dim: usize,
    ffn_hidden: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    register_linear(reg, &format!("{ATTR}.in"), 2 * d_h, d_h, rng)?;
    register_transformer_params(reg, &format!("{ATTR}.block"), d_h, ffn_hidden, rng)?;
    register_linear(reg, &format!("{ATTR}.out"), d_h, feature_dim, rng)?;
    for head in HEADS {
        let out = if head == "count" { 1 } else { feature_dim };
        register_linear(reg, &format!("decoder.{head}.hidden"), 2 * d_h, d_h, rng)?;
        register_linear(reg, &format!("decoder.{head}.out"), d_h, out, rng)?;
    }
    Ok(())
}

/// Linear down to `d_h`, one Transformer block, linear out to `d`.
pub fn decode_attributes(tape: &mut Tape, h_bar: Var, p: &BoundParams, heads: usize) -> Result<Var> {
    let h = linear(tape, h_bar, p, &format!("{ATTR}.in"))?;
    let h = transformer_layer(tape, h, p, &format!("{ATTR}.block"), heads)?.out;
    linear(tape, h, p, &format!("{ATTR}.out"))
}

/// Dense edge probabilities `σ(h̄ h̄ᵀ)`, diagonal included.
pub fn predict_edges(tape: &mut Tape, h_bar: Var) -> Result<Var> {
    let t = tape.transpose(h_bar);
    let logits = tape.matmul(h_bar, t)?;
    Ok(tape.sigmoid(logits))
}

#[derive(Debug, Clone, Copy)]
pub struct NeighborhoodOutput {
    /// `n × 1` predicted neighbour counts.
    pub c_hat: Var,
    pub eps_hat: Var,
    /// Log of the predicted per-dimension variances.
    pub log_omega_hat: Var,
    pub omega_hat: Var,
}

fn head(tape: &mut Tape, h_bar: Var, p: &BoundParams, name: &str) -> Result<Var> {
    let h = linear(tape, h_bar, p, &format!("decoder.{name}.hidden"))?;
    let h = tape.relu(h);
    linear(tape, h, p, &format!("decoder.{name}.out"))
}

pub fn decode_neighborhood(tape: &mut Tape, h_bar: Var, p: &BoundParams) -> Result<NeighborhoodOutput> {
    let c_hat = head(tape, h_bar, p, "count")?;
    let eps_hat = head(tape, h_bar, p, "mean")?;
    let log_omega_hat = head(tape, h_bar, p, "logvar")?;
    let omega_hat = tape.exp(log_omega_hat);
    Ok(NeighborhoodOutput {
        c_hat,
        eps_hat,
        log_omega_hat,
        omega_hat,
    })
}

/// `KL(N(mean1, diag var1) ‖ N(mean2, diag var2))`.
pub fn kl_diag_gaussian(mean1: &[f64], var1: &[f64], mean2: &[f64], var2: &[f64]) -> Result<f64> {
    let d = mean1.len();
    if var1.len() != d || mean2.len() != d || var2.len() != d {
        return Err(Error::Shape("KL arguments must share one dimension".into()));
    }
    if let Some(v) = var1.iter().chain(var2).find(|v| !(**v > 0.0)) {
        return Err(Error::Config(format!("KL needs positive variances, got {v}")));
    }
    Ok(0.5
        * (0..d)
            .map(|k| (var2[k] / var1[k]).ln() + (var1[k] + (mean1[k] - mean2[k]).powi(2)) / var2[k] - 1.0)
            .sum::<f64>())
}

/// Fixed reconstruction targets derived from the graph.
#[derive(Debug, Clone)]
pub struct ReconTargets {
    pub adjacency: Tensor,
    /// `1 − I`, masks the diagonal out of the edge loss.
    pub off_diagonal: Tensor,
    pub features: Tensor,
    pub counts: Tensor,
    pub means: Tensor,
    /// Empirical variances floored at [`EPS_VAR`].
    pub vars: Tensor,
    /// 1 for nodes with at least one neighbour, 0 otherwise.
    pub has_neighbors: Tensor,
}

impl ReconTargets {
    pub fn new(g: &Graph) -> Self {
        let n = g.num_nodes();
        let d = g.feature_dim();
        let mut counts = Tensor::zeros(n, 1);
        let mut means = Tensor::zeros(n, d);
        let mut vars = Tensor::full(n, d, EPS_VAR);
        let mut has_neighbors = Tensor::zeros(n, 1);
        for v in 0..n {
            let s = neighborhood_statistics(g, v);
            counts.set(v, 0, s.count as f64);
            if s.degenerate {
                continue;
            }
            has_neighbors.set(v, 0, 1.0);
            means.row_mut(v).copy_from_slice(&s.mean);
            for (o, &x) in vars.row_mut(v).iter_mut().zip(&s.var) {
                *o = x.max(EPS_VAR);
            }
        }
        Self {
            adjacency: g.adjacency_tensor(),
            off_diagonal: Tensor::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }),
            features: g.features().clone(),
            counts,
            means,
            vars,
            has_neighbors,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReconOutput {
    pub x_hat: Var,
    pub a_hat: Var,
    pub neighborhood: NeighborhoodOutput,
}

/// Per-node structure, attribute and neighbourhood losses, each `n × 1`.
#[derive(Debug, Clone, Copy)]
pub struct ReconLosses {
    pub l_s: Var,
    pub l_a: Var,
    pub l_n: Var,
}

pub fn reconstruction_losses(tape: &mut Tape, recon: &ReconOutput, t: &ReconTargets) -> Result<ReconLosses> {
    let adj = tape.constant(t.adjacency.clone());
    let mask = tape.constant(t.off_diagonal.clone());
    let e = tape.sub(adj, recon.a_hat)?;
    let e = tape.mul(e, mask)?;
    let e = tape.square(e);
    let l_s = tape.sum_rows(e);

    let x = tape.constant(t.features.clone());
    let e = tape.sub(x, recon.x_hat)?;
    let e = tape.square(e);
    let l_a = tape.sum_rows(e);

    // ½ Σ [log ω̂ − log ω + (ω + (ε − ε̂)²)/ω̂ − 1], with ω̂ = exp(L).
    let nb = &recon.neighborhood;
    let means = tape.constant(t.means.clone());
    let vars = tape.constant(t.vars.clone());
    let offset = tape.constant(t.vars.map(|v| -v.ln() - 1.0));
    let diff = tape.sub(means, nb.eps_hat)?;
    let diff = tape.square(diff);
    let num = tape.add(diff, vars)?;
    let neg_log = tape.scale(nb.log_omega_hat, -1.0);
    let inv = tape.exp(neg_log);
    let ratio = tape.mul(num, inv)?;
    let terms = tape.add(ratio, nb.log_omega_hat)?;
    let terms = tape.add(terms, offset)?;
    let kl = tape.sum_rows(terms);
    let kl = tape.scale(kl, 0.5);
    let keep = tape.constant(t.has_neighbors.clone());
    let kl = tape.mul(kl, keep)?;

    let counts = tape.constant(t.counts.clone());
    let c = tape.sub(counts, nb.c_hat)?;
    let c = tape.square(c);
    let l_n = tape.add(kl, c)?;
    Ok(ReconLosses { l_s, l_a, l_n })
}
