use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor2;
use crate::error::{shape, validation, Result};

pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Empirical measure: `n` points in `R^d` carrying nonnegative weights that sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPointCloud {
    points: Tensor2,
    weights: Vec<f64>,
    uniform: bool,
}

impl WeightedPointCloud {
    pub fn new(points: Tensor2, weights: Vec<f64>) -> Result<Self> {
        if points.rows() == 0 {
            return Err(validation("point cloud must contain at least one point"));
        }
        if weights.len() != points.rows() {
            return Err(shape(format!(
                "{} points but {} weights",
                points.rows(),
                weights.len()
            )));
        }
        if !points.all_finite() {
            return Err(validation("point coordinates must be finite"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(validation("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(validation(format!("weights sum to {total}, expected 1")));
        }
        let w0 = weights[0];
        let uniform = weights.iter().all(|w| *w == w0);
        Ok(Self {
            points,
            weights,
            uniform,
        })
    }

    /// Every point carries weight `1/n`.
    pub fn uniform(points: Tensor2) -> Result<Self> {
        let n = points.rows().max(1);
        Self::new(points, vec![1.0 / n as f64; n])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::uniform(Tensor2::from_rows(rows)?)
    }

    pub fn points(&self) -> &Tensor2 {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Same weights, coordinates replaced.
    pub fn with_points(&self, points: Tensor2) -> Result<Self> {
        Self::new(points, self.weights.clone())
    }
}

/// An optimal coupling between two clouds and its cost under the Euclidean ground metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    /// `n x m`, row `i` sums to the source weight of point `i`.
    pub coupling: Tensor2,
    pub cost: f64,
}

impl TransportPlan {
    /// Largest deviation of the plan's row/column sums from the given weights.
    pub fn marginal_error(&self, src_w: &[f64], dst_w: &[f64]) -> f64 {
        let c = &self.coupling;
        let mut err: f64 = 0.0;
        for (i, w) in src_w.iter().enumerate() {
            let s: f64 = c.row(i).iter().sum();
            err = err.max((s - w).abs());
        }
        for (j, w) in dst_w.iter().enumerate() {
            let s: f64 = (0..c.rows()).map(|i| c.get(i, j)).sum();
            err = err.max((s - w).abs());
        }
        err
    }

    /// Nonzero entries as `(i, j, mass)`.
    pub fn support(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let m = self.coupling.cols();
        self.coupling
            .data()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(move |(k, v)| (k / m, k % m, *v))
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn cost_matrix(src: &WeightedPointCloud, dst: &WeightedPointCloud) -> Vec<f64> {
    let (n, m) = (src.len(), dst.len());
    let mut c = Vec::with_capacity(n * m);
    for i in 0..n {
        let x = src.point(i);
        for j in 0..m {
            c.push(euclidean(x, dst.point(j)));
        }
    }
    c
}
