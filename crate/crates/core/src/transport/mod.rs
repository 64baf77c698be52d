//! Exact primal 1-Wasserstein solvers with Euclidean ground cost.
//!
//! [`w1_exact`] dispatches uniform equal-size problems to the assignment
//! solver (Birkhoff: some optimal plan is a permutation) and everything else
//! to the network simplex. [`w1_grad_dst`] is the envelope gradient of the
//! optimal cost with the plan held fixed.

mod assignment;
mod cloud;
mod oned;
mod simplex;
mod sliced;

pub use assignment::min_cost_assignment;
pub use cloud::{euclidean, TransportPlan, WeightedPointCloud, WEIGHT_SUM_TOL};
pub(crate) use oned::argsort;
pub use oned::{monotone_coupling, w1_1d, w1_1d_weighted};
pub use simplex::network_simplex;
pub use sliced::{random_directions, sliced_w1, sliced_w1_along, sliced_w1_grad_dst};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor2;
use crate::error::{shape, validation, Result};
use cloud::cost_matrix;

pub const DEFAULT_MAX_POINTS: usize = 4096;

/// Distances below this are treated as coincident points (zero subgradient).
pub const COINCIDENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Assignment for uniform equal-size inputs, network simplex otherwise.
    #[default]
    Auto,
    NetworkSimplex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportConfig {
    pub max_points: usize,
    pub solver: Solver,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            max_points: DEFAULT_MAX_POINTS,
            solver: Solver::Auto,
        }
    }
}

pub fn w1_exact(src: &WeightedPointCloud, dst: &WeightedPointCloud) -> Result<TransportPlan> {
    w1_exact_with(src, dst, &TransportConfig::default())
}

pub fn w1_exact_with(
    src: &WeightedPointCloud,
    dst: &WeightedPointCloud,
    cfg: &TransportConfig,
) -> Result<TransportPlan> {
    if src.dim() != dst.dim() {
        return Err(shape(format!(
            "source points are in R^{}, target points in R^{}",
            src.dim(),
            dst.dim()
        )));
    }
    let (n, m) = (src.len(), dst.len());
    if n > cfg.max_points || m > cfg.max_points {
        return Err(validation(format!(
            "{n}x{m} problem exceeds the {}-point cap",
            cfg.max_points
        )));
    }
    let cost = cost_matrix(src, dst);
    let mut coupling = Tensor2::zeros(n, m);
    let fast = cfg.solver == Solver::Auto && n == m && src.is_uniform() && dst.is_uniform();
    if fast {
        let w = 1.0 / n as f64;
        for (i, j) in min_cost_assignment(&cost, n).into_iter().enumerate() {
            coupling.set(i, j, w);
        }
    } else {
        let plan = network_simplex(src.weights(), dst.weights(), &cost)?;
        coupling.data_mut().copy_from_slice(&plan);
    }
    let total = coupling
        .data()
        .iter()
        .zip(&cost)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, c)| p * c)
        .sum();
    Ok(TransportPlan {
        coupling,
        cost: total,
    })
}

/// Gradient of the plan's cost with respect to `dst`'s points, plan fixed:
/// `sum_i pi_ij (y_j - x_i) / |y_j - x_i|`.
pub fn w1_grad_dst(
    plan: &TransportPlan,
    src: &WeightedPointCloud,
    dst: &WeightedPointCloud,
) -> Result<Tensor2> {
    let c = &plan.coupling;
    if c.rows() != src.len() || c.cols() != dst.len() || src.dim() != dst.dim() {
        return Err(shape(format!(
            "plan is {}x{} but clouds have {} and {} points",
            c.rows(),
            c.cols(),
            src.len(),
            dst.len()
        )));
    }
    let d = dst.dim();
    let mut grad = Tensor2::zeros(dst.len(), d);
    for (i, j, mass) in plan.support() {
        let x = src.point(i);
        let y = dst.point(j);
        let dist = euclidean(x, y);
        if dist < COINCIDENT_TOL {
            continue;
        }
        let row = grad.row_mut(j);
        for k in 0..d {
            row[k] += mass * (y[k] - x[k]) / dist;
        }
    }
    Ok(grad)
}
