use std::path::{Path, PathBuf};

use gthna_autodiff::{Checkpoint, Tensor};
use nalgebra::DMatrix;

use super::Graph;
use crate::error::{Error, Result};

/// Eigenvalues below this are treated as the trivial (per-component) zero mode.
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-8;

const CACHE_KIND: &str = "laplacian-bundle";
const CACHE_VERSION: &str = "1";

/// Normalized Laplacian, its eigendecomposition and the positional encodings
/// derived from it. Built once per graph before training.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianBundle {
    pub laplacian: Tensor,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `j` is the unit eigenvector for `eigenvalues[j]`.
    pub eigenvectors: Tensor,
    /// `n × d_h`; row `i` holds node `i`'s coordinates in the selected eigenvectors.
    pub pe: Tensor,
    pub graph_hash: String,
}

/// `L̂ = I − D^{-1/2} A D^{-1/2}`; isolated nodes use `D^{-1/2} = 0`.
fn normalized_laplacian(g: &Graph) -> Tensor {
    let n = g.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| match g.degree(i) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect();
    Tensor::from_fn(n, n, |i, j| {
        let a = if g.has_edge(i, j) { inv_sqrt[i] * inv_sqrt[j] } else { 0.0 };
        if i == j {
            1.0 - a
        } else {
            -a
        }
    })
}

/// Flips each column so its first entry with magnitude above 1e-8 is positive.
fn canonicalize_signs(vectors: &mut Tensor) {
    let (n, m) = (vectors.rows(), vectors.cols());
    for j in 0..m {
        let flip = (0..n)
            .map(|i| vectors.get(i, j))
            .find(|v| v.abs() > 1e-8)
            .is_some_and(|v| v < 0.0);
        if flip {
            for i in 0..n {
                vectors.set(i, j, -vectors.get(i, j));
            }
        }
    }
}

pub fn build_laplacian_bundle(g: &Graph, d_h: usize) -> Result<LaplacianBundle> {
    if d_h == 0 {
        return Err(Error::Config("positional encoding width must be at least 1".into()));
    }
    let n = g.num_nodes();
    let laplacian = normalized_laplacian(g);
    let eig = DMatrix::from_row_slice(n, n, laplacian.data()).symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut eigenvectors = Tensor::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    canonicalize_signs(&mut eigenvectors);

    // Skip the zero modes unless nothing else is left.
    let mut chosen: Vec<usize> = (0..n).filter(|&j| eigenvalues[j] > ZERO_EIGENVALUE_TOL).collect();
    if chosen.is_empty() {
        chosen = (0..n).collect();
    }
    chosen.truncate(d_h);
    let pe = Tensor::from_fn(n, d_h, |i, c| chosen.get(c).map_or(0.0, |&j| eigenvectors.get(i, j)));

    Ok(LaplacianBundle {
        laplacian,
        eigenvalues,
        eigenvectors,
        pe,
        graph_hash: g.content_hash(),
    })
}

impl LaplacianBundle {
    pub fn d_h(&self) -> usize {
        self.pe.cols()
    }

    /// `‖L̂ − μ diag(e) μᵀ‖_max`.
    pub fn reconstruction_error(&self) -> f64 {
        let n = self.eigenvalues.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n)
                    .map(|k| self.eigenvectors.get(i, k) * self.eigenvalues[k] * self.eigenvectors.get(j, k))
                    .sum();
                worst = worst.max((r - self.laplacian.get(i, j)).abs());
            }
        }
        worst
    }

    /// Rows of the positional encoding reordered so old node `perm[i]` is node `i`.
    pub fn permuted_pe(&self, perm: &[usize]) -> Tensor {
        self.pe.select_rows(perm)
    }

    pub fn with_pe(&self, pe: Tensor) -> Self {
        Self { pe, ..self.clone() }
    }

    pub fn cache_path(dir: &Path, graph_hash: &str, d_h: usize) -> PathBuf {
        dir.join(format!("pe-{}-{d_h}.ckpt", &graph_hash[..16.min(graph_hash.len())]))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        c.push_meta("kind", CACHE_KIND);
        c.push_meta("version", CACHE_VERSION);
        c.push_meta("graph_hash", self.graph_hash.clone());
        c.push_meta("d_h", self.d_h().to_string());
        c.tensors.push(("laplacian".into(), self.laplacian.clone()));
        c.tensors.push((
            "eigenvalues".into(),
            Tensor::new(1, self.eigenvalues.len(), self.eigenvalues.clone()).expect("row vector"),
        ));
        c.tensors.push(("eigenvectors".into(), self.eigenvectors.clone()));
        c.tensors.push(("pe".into(), self.pe.clone()));
        c
    }

    /// Restores a cached bundle, checking it belongs to `graph_hash` and `d_h`.
    pub fn from_checkpoint(c: &Checkpoint, graph_hash: &str, d_h: usize) -> Result<Self> {
        let check = |key: &str, want: &str| match c.meta(key) {
            Some(v) if v == want => Ok(()),
            other => Err(Error::Cache(format!("{key} is {other:?}, expected {want}"))),
        };
        check("kind", CACHE_KIND)?;
        check("version", CACHE_VERSION)?;
        check("graph_hash", graph_hash)?;
        check("d_h", &d_h.to_string())?;
        let get = |name: &str| {
            c.tensor(name)
                .cloned()
                .ok_or_else(|| Error::Cache(format!("missing tensor {name}")))
        };
        Ok(Self {
            laplacian: get("laplacian")?,
            eigenvalues: get("eigenvalues")?.into_data(),
            eigenvectors: get("eigenvectors")?,
            pe: get("pe")?,
            graph_hash: graph_hash.to_string(),
        })
    }

    /// Loads from `cache_dir` when a matching artifact exists, otherwise builds
    /// and writes one.
    pub fn load_or_build(g: &Graph, d_h: usize, cache_dir: Option<&Path>) -> Result<Self> {
        let Some(dir) = cache_dir else {
            return build_laplacian_bundle(g, d_h);
        };
        let hash = g.content_hash();
        let path = Self::cache_path(dir, &hash, d_h);
        if path.exists() {
            match Checkpoint::load(&path)
                .map_err(Error::from)
                .and_then(|c| Self::from_checkpoint(&c, &hash, d_h))
            {
                Ok(b) => return Ok(b),
                Err(e) => log::warn!("ignoring stale cache {}: {e}", path.display()),
            }
        }
        let bundle = build_laplacian_bundle(g, d_h)?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        bundle.to_checkpoint().save(&path)?;
        Ok(bundle)
    }
}
