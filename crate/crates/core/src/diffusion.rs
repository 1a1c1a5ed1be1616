//! Manifold-regularized relevance diffusion.
//!
//! The belief field minimizes `||F - Y||^2 + mu * F^T L F` with the symmetric
//! normalized Laplacian `L = I - W_norm`. With `beta = mu / (1 + mu)` the
//! minimizer is the fixed point of
//!
//! ```text
//! F <- beta * W_norm * F + (1 - beta) * Y
//! ```
//!
//! which equals `(1 - beta) (I - beta W_norm)^-1 Y`. Each sweep is one sparse
//! mat-vec, so a run costs `O(iters * nnz)`. Because the fixed point depends
//! only on `Y`, a run may start from any previous belief (warm start) and
//! still land on the same answer.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AffinityGraph;
use crate::vector::inf_norm_diff;

pub const DEFAULT_BETA: f64 = 0.6;
pub const DEFAULT_PROPAGATION_ITERS: usize = 7;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_DENSE_CAP: usize = 2048;

/// When a diffusion run stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StopRule {
    /// Exactly this many sweeps.
    Fixed { iters: usize },
    /// Until the remaining sup-norm error is certified below `tol`.
    ///
    /// `W_norm` is symmetric with spectral radius at most 1, so after a sweep
    /// with change `d` the distance to the fixed point is at most
    /// `beta / (1 - beta) * |d|_2`, which also bounds the sup-norm error.
    Tolerance { tol: f64, max_iters: usize },
}

impl StopRule {
    pub fn production() -> Self {
        StopRule::Fixed {
            iters: DEFAULT_PROPAGATION_ITERS,
        }
    }

    pub fn converge() -> Self {
        StopRule::Tolerance {
            tol: DEFAULT_TOL,
            max_iters: 100_000,
        }
    }

    fn max_iters(&self) -> usize {
        match *self {
            StopRule::Fixed { iters } => iters,
            StopRule::Tolerance { max_iters, .. } => max_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionParams {
    pub beta: f64,
    pub stop: StopRule,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            stop: StopRule::production(),
        }
    }
}

impl DiffusionParams {
    pub fn converging(beta: f64, tol: f64, max_iters: usize) -> Self {
        Self {
            beta,
            stop: StopRule::Tolerance { tol, max_iters },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if let StopRule::Tolerance { tol, .. } = self.stop {
            if !(tol > 0.0) {
                return Err(Error::Config(format!("tol must be positive, got {tol}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionRun {
    pub belief: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm change of the final sweep.
    pub last_delta: f64,
}

fn check_vector(v: &[f64], k: usize) -> Result<()> {
    if v.len() != k {
        return Err(Error::ShapeError {
            expected: k,
            actual: v.len(),
        });
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInjection(i));
    }
    Ok(())
}

fn iterate(
    graph: &AffinityGraph,
    start: Vec<f64>,
    injection: &[f64],
    params: &DiffusionParams,
) -> DiffusionRun {
    let beta = params.beta;
    let mut belief = start;
    let mut spread = vec![0.0; belief.len()];
    let mut iterations = 0;
    let mut last_delta = 0.0;
    let contraction = beta / (1.0 - beta);
    for _ in 0..params.stop.max_iters() {
        graph.normalized_mul(&belief, &mut spread);
        last_delta = 0.0;
        let mut sq = 0.0;
        for ((f, s), y) in belief.iter_mut().zip(&spread).zip(injection) {
            let next = beta * s + (1.0 - beta) * y;
            let d = (next - *f).abs();
            last_delta = f64::max(last_delta, d);
            sq += d * d;
            *f = next;
        }
        iterations += 1;
        if let StopRule::Tolerance { tol, .. } = params.stop {
            if contraction * sq.sqrt() < tol {
                break;
            }
        }
    }
    DiffusionRun {
        belief,
        iterations,
        last_delta,
    }
}

/// Cold-start diffusion from `F(0) = Y`.
pub fn diffuse(
    graph: &AffinityGraph,
    injection: &[f64],
    params: &DiffusionParams,
) -> Result<DiffusionRun> {
    params.validate()?;
    check_vector(injection, graph.k_nodes())?;
    Ok(iterate(graph, injection.to_vec(), injection, params))
}

/// Diffusion continued from a previous belief after the injection changed.
pub fn warm_start_diffuse(
    graph: &AffinityGraph,
    prior_belief: &[f64],
    new_injection: &[f64],
    params: &DiffusionParams,
) -> Result<DiffusionRun> {
    params.validate()?;
    check_vector(new_injection, graph.k_nodes())?;
    check_vector(prior_belief, graph.k_nodes())?;
    Ok(iterate(graph, prior_belief.to_vec(), new_injection, params))
}

/// Dense LU solve of `(1 - beta) (I - beta W_norm)^-1 Y`.
pub fn closed_form_solve(
    graph: &AffinityGraph,
    injection: &[f64],
    beta: f64,
    dense_cap: usize,
) -> Result<Vec<f64>> {
    let k = graph.k_nodes();
    if k > dense_cap {
        return Err(Error::TooLargeForDense { k, cap: dense_cap });
    }
    check_vector(injection, k)?;
    let system = DMatrix::<f64>::identity(k, k) - graph.w_norm_dense() * beta;
    let rhs = DVector::from_column_slice(injection) * (1.0 - beta);
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Invariant("I - beta W_norm is singular".into()))?;
    Ok(solution.iter().copied().collect())
}

/// Sup-norm distance between two beliefs.
pub fn belief_distance(a: &[f64], b: &[f64]) -> f64 {
    inf_norm_diff(a, b)
}
