//! Visual–temporal affinity graph over segment nodes.
//!
//! Dense fused affinities `alpha * max(0, <h_i, h_j>) + (1 - alpha) * exp(-|t_i - t_j| / tau)`
//! are computed row by row, self-loops dropped, each row cut to its `top_k`
//! strongest entries, and the result symmetrized as `(W + W^T) / 2`. The
//! diffusion operator is the symmetric normalization `D^-1/2 W D^-1/2`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::segmenter::SegmentNode;
use crate::vector::dot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Visual vs temporal fusion weight.
    pub alpha: f64,
    /// Temporal decay, seconds.
    pub tau: f64,
    pub top_k: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            tau: 30.0,
            top_k: 8,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AffinityGraph {
    w_sparse: CsMat<f64>,
    degrees: Vec<f64>,
    w_norm: CsMat<f64>,
}

/// Clipped cosine affinity between unit-norm node features.
pub fn visual_affinity(features: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if features.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let k = features.len();
    Ok(DMatrix::from_fn(k, k, |i, j| dot(&features[i], &features[j]).max(0.0)))
}

pub fn temporal_affinity(center_times: &[f64], tau: f64) -> Result<DMatrix<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    let k = center_times.len();
    Ok(DMatrix::from_fn(k, k, |i, j| {
        temporal_kernel(center_times[i] - center_times[j], tau)
    }))
}

#[inline]
pub fn temporal_kernel(dt: f64, tau: f64) -> f64 {
    (-dt.abs() / tau).exp()
}

/// Keeps the `top_k` largest positive entries of `row` (diagonal excluded),
/// ties resolved toward the smaller column index.
fn top_k_row(i: usize, row: &[f64], top_k: usize, out: &mut Vec<(usize, f64)>) {
    out.clear();
    out.extend(
        row.iter()
            .enumerate()
            .filter(|&(j, &w)| j != i && w > 0.0)
            .map(|(j, &w)| (j, w)),
    );
    let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if out.len() > top_k {
        out.select_nth_unstable_by(top_k - 1, order);
        out.truncate(top_k);
    }
    out.sort_unstable_by(order);
}

impl AffinityGraph {
    pub fn build(features: &[Vec<f64>], center_times: &[f64], cfg: &GraphConfig) -> Result<Self> {
        cfg.validate()?;
        if features.is_empty() {
            return Err(Error::EmptyGraph);
        }
        if features.len() != center_times.len() {
            return Err(Error::ShapeError {
                expected: features.len(),
                actual: center_times.len(),
            });
        }
        let (alpha, tau) = (cfg.alpha, cfg.tau);
        Ok(Self::sparsify_rows(features.len(), cfg.top_k, |i, row| {
            for (j, w) in row.iter_mut().enumerate() {
                let sim = dot(&features[i], &features[j]).max(0.0);
                let time = temporal_kernel(center_times[i] - center_times[j], tau);
                *w = alpha * sim + (1.0 - alpha) * time;
            }
        }))
    }

    pub fn from_nodes(nodes: &[SegmentNode], cfg: &GraphConfig) -> Result<Self> {
        let features: Vec<Vec<f64>> = nodes.iter().map(|n| n.feature.clone()).collect();
        let times: Vec<f64> = nodes.iter().map(|n| n.center_time).collect();
        Self::build(&features, &times, cfg)
    }

    /// Builds the graph from an already fused dense affinity matrix.
    pub fn from_fused(fused: &DMatrix<f64>, top_k: usize) -> Result<Self> {
        if fused.nrows() == 0 {
            return Err(Error::EmptyGraph);
        }
        if fused.nrows() != fused.ncols() {
            return Err(Error::ShapeError {
                expected: fused.nrows(),
                actual: fused.ncols(),
            });
        }
        if top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(Self::sparsify_rows(fused.nrows(), top_k, |i, row| {
            for (j, w) in row.iter_mut().enumerate() {
                *w = fused[(i, j)];
            }
        }))
    }

    fn sparsify_rows(k: usize, top_k: usize, fill_row: impl Fn(usize, &mut [f64])) -> Self {
        let mut row = vec![0.0; k];
        let mut kept = Vec::with_capacity(k);
        let mut tri = TriMat::with_capacity((k, k), 2 * k * top_k.min(k));
        for i in 0..k {
            fill_row(i, &mut row);
            top_k_row(i, &row, top_k, &mut kept);
            for &(j, w) in &kept {
                tri.add_triplet(i, j, 0.5 * w);
                tri.add_triplet(j, i, 0.5 * w);
            }
        }
        // duplicate triplets are summed on conversion
        let w_sparse: CsMat<f64> = tri.to_csr();
        let degrees: Vec<f64> = w_sparse
            .outer_iterator()
            .map(|r| r.data().iter().sum())
            .collect();
        let inv_sqrt: Vec<f64> = degrees
            .iter()
            .map(|&d| if d > 0.0 { d.sqrt().recip() } else { 1.0 })
            .collect();
        let mut w_norm = w_sparse.clone();
        for (i, mut r) in w_norm.outer_iterator_mut().enumerate() {
            for (j, v) in r.iter_mut() {
                *v *= inv_sqrt[i] * inv_sqrt[j];
            }
        }
        Self {
            w_sparse,
            degrees,
            w_norm,
        }
    }

    pub fn k_nodes(&self) -> usize {
        self.degrees.len()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn w_sparse(&self) -> &CsMat<f64> {
        &self.w_sparse
    }

    pub fn w_norm(&self) -> &CsMat<f64> {
        &self.w_norm
    }

    pub fn nnz(&self) -> usize {
        self.w_sparse.nnz()
    }

    /// Sparsified symmetric weight `W~_ij` (zero when absent).
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w_sparse.get(i, j).copied().unwrap_or(0.0)
    }

    pub fn normalized_weight(&self, i: usize, j: usize) -> f64 {
        self.w_norm.get(i, j).copied().unwrap_or(0.0)
    }

    /// Neighbours of `i` in `W~` with their weights, ascending by index.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.w_sparse.indptr().outer_inds_sz(i);
        self.w_sparse.indices()[span.clone()]
            .iter()
            .copied()
            .zip(self.w_sparse.data()[span].iter().copied())
    }

    /// `out = W_norm * x`.
    pub fn normalized_mul(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.k_nodes());
        for (o, row) in out.iter_mut().zip(self.w_norm.outer_iterator()) {
            *o = row.iter().map(|(j, w)| w * x[j]).sum();
        }
    }

    pub fn w_norm_dense(&self) -> DMatrix<f64> {
        let k = self.k_nodes();
        let mut m = DMatrix::zeros(k, k);
        for (i, row) in self.w_norm.outer_iterator().enumerate() {
            for (j, &w) in row.iter() {
                m[(i, j)] = w;
            }
        }
        m
    }

    pub fn w_sparse_dense(&self) -> DMatrix<f64> {
        let k = self.k_nodes();
        let mut m = DMatrix::zeros(k, k);
        for (i, row) in self.w_sparse.outer_iterator().enumerate() {
            for (j, &w) in row.iter() {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// Power-iteration estimate of the spectral radius of `W_norm`.
    pub fn spectral_radius(&self, max_iters: usize, tol: f64) -> f64 {
        let k = self.k_nodes();
        let mut x: Vec<f64> = (0..k).map(|i| 1.0 + 1e-3 * (i % 7) as f64).collect();
        let mut y = vec![0.0; k];
        let mut estimate = 0.0;
        for _ in 0..max_iters {
            let xn = crate::vector::norm(&x);
            if xn == 0.0 {
                return 0.0;
            }
            x.iter_mut().for_each(|v| *v /= xn);
            self.normalized_mul(&x, &mut y);
            let next = crate::vector::norm(&y);
            std::mem::swap(&mut x, &mut y);
            if (next - estimate).abs() < tol {
                return next;
            }
            estimate = next;
        }
        estimate
    }

    pub fn export(&self) -> GraphExport {
        let mut edges = Vec::with_capacity(self.nnz());
        for (i, row) in self.w_sparse.outer_iterator().enumerate() {
            for (j, &w) in row.iter() {
                edges.push(GraphEdge {
                    source: i,
                    target: j,
                    weight: w,
                    normalized: self.normalized_weight(i, j),
                });
            }
        }
        GraphExport {
            k_nodes: self.k_nodes(),
            degrees: self.degrees.clone(),
            edges,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
    pub normalized: f64,
}

/// Inspection dump of a built graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphExport {
    pub k_nodes: usize,
    pub degrees: Vec<f64>,
    pub edges: Vec<GraphEdge>,
}
