//! Marginally-penalized Wasserstein distance.
//!
//! `MPW(mu, nu) = W1(mu, nu) + sum_S lambda_S * W1(p_S # mu, p_S # nu)` where
//! `p_S` keeps the coordinates in `S`. The usual form penalizes every single
//! coordinate; arbitrary coordinate subsets are supported as well.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor2;
use crate::error::{validation, Result};
use crate::exec::Exec;
use crate::transport::{
    monotone_coupling, w1_exact_with, w1_grad_dst, TransportConfig, WeightedPointCloud,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyTerm {
    pub coords: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalPenaltySpec {
    pub terms: Vec<PenaltyTerm>,
}

impl MarginalPenaltySpec {
    /// One singleton term per coordinate, each weighted `lambda`.
    pub fn uniform(dim: usize, lambda: f64) -> Self {
        Self::singletons(&vec![lambda; dim])
    }

    pub fn singletons(lambdas: &[f64]) -> Self {
        Self {
            terms: lambdas
                .iter()
                .enumerate()
                .map(|(j, &w)| PenaltyTerm {
                    coords: vec![j],
                    weight: w,
                })
                .collect(),
        }
    }

    pub fn none() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for (k, t) in self.terms.iter().enumerate() {
            if t.coords.is_empty() {
                return Err(validation(format!(
                    "penalty term {k} has an empty coordinate set"
                )));
            }
            if let Some(c) = t.coords.iter().find(|&&c| c >= dim) {
                return Err(validation(format!(
                    "penalty term {k} references coordinate {c} of a {dim}-dimensional space"
                )));
            }
            let mut s = t.coords.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != t.coords.len() {
                return Err(validation(format!("penalty term {k} repeats a coordinate")));
            }
            if !t.weight.is_finite() || t.weight < 0.0 {
                return Err(validation(format!(
                    "penalty term {k} weight {} invalid",
                    t.weight
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpwBreakdown {
    pub joint: f64,
    /// Unweighted W1 of each projected pair, aligned with the spec's terms.
    pub penalties: Vec<(Vec<usize>, f64)>,
    pub total: f64,
}

/// Restricts every point to the coordinates in `coords`, in that order.
pub fn project(cloud: &WeightedPointCloud, coords: &[usize]) -> Result<WeightedPointCloud> {
    if let Some(c) = coords.iter().find(|&&c| c >= cloud.dim()) {
        return Err(validation(format!(
            "coordinate {c} out of range for dimension {}",
            cloud.dim()
        )));
    }
    cloud.with_points(cloud.points().select_cols(coords))
}

/// Value and `dst`-gradient of one penalty term.
fn marginal_term(
    mu: &WeightedPointCloud,
    nu: &WeightedPointCloud,
    coords: &[usize],
    cfg: &TransportConfig,
    want_grad: bool,
) -> Result<(f64, Option<Tensor2>)> {
    if let [j] = coords {
        let j = *j;
        let xs = mu.points().column(j);
        let ys = nu.points().column(j);
        let uniform_equal = mu.len() == nu.len() && mu.is_uniform() && nu.is_uniform();
        let mut grad = want_grad.then(|| vec![0.0; nu.len()]);
        let value = if uniform_equal {
            // Sorting path: match order statistics.
            let ox = crate::transport::argsort(&xs);
            let oy = crate::transport::argsort(&ys);
            let w = 1.0 / xs.len() as f64;
            let mut total = 0.0;
            for (&i, &k) in ox.iter().zip(&oy) {
                let diff = ys[k] - xs[i];
                total += diff.abs();
                if let Some(g) = grad.as_mut() {
                    if diff != 0.0 {
                        g[k] = w * diff.signum();
                    }
                }
            }
            total * w
        } else {
            let mut total = 0.0;
            for (i, k, mass) in monotone_coupling(&xs, mu.weights(), &ys, nu.weights()) {
                let diff = ys[k] - xs[i];
                total += mass * diff.abs();
                if let Some(g) = grad.as_mut() {
                    if diff != 0.0 {
                        g[k] += mass * diff.signum();
                    }
                }
            }
            total
        };
        let grad = grad.map(|g| Tensor2::from_vec(nu.len(), 1, g).expect("sized"));
        return Ok((value, grad));
    }
    let pm = project(mu, coords)?;
    let pn = project(nu, coords)?;
    let plan = w1_exact_with(&pm, &pn, cfg)?;
    let grad = if want_grad {
        Some(w1_grad_dst(&plan, &pm, &pn)?)
    } else {
        None
    };
    Ok((plan.cost, grad))
}

fn check_pair(
    mu: &WeightedPointCloud,
    nu: &WeightedPointCloud,
    spec: &MarginalPenaltySpec,
) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(crate::Error::Shape(format!(
            "clouds live in R^{} and R^{}",
            mu.dim(),
            nu.dim()
        )));
    }
    spec.validate(mu.dim())
}

pub fn mpw_distance(
    mu: &WeightedPointCloud,
    nu: &WeightedPointCloud,
    spec: &MarginalPenaltySpec,
) -> Result<MpwBreakdown> {
    mpw_distance_with(mu, nu, spec, &TransportConfig::default(), Exec::default())
}

pub fn mpw_distance_with(
    mu: &WeightedPointCloud,
    nu: &WeightedPointCloud,
    spec: &MarginalPenaltySpec,
    cfg: &TransportConfig,
    exec: Exec,
) -> Result<MpwBreakdown> {
    check_pair(mu, nu, spec)?;
    let joint = w1_exact_with(mu, nu, cfg)?.cost;
    let values = exec.try_map(spec.terms.len(), |k| {
        marginal_term(mu, nu, &spec.terms[k].coords, cfg, false).map(|(v, _)| v)
    })?;
    Ok(assemble(joint, spec, values))
}

fn assemble(joint: f64, spec: &MarginalPenaltySpec, values: Vec<f64>) -> MpwBreakdown {
    let mut total = joint;
    for (t, v) in spec.terms.iter().zip(&values) {
        total += t.weight * v;
    }
    MpwBreakdown {
        joint,
        penalties: spec
            .terms
            .iter()
            .zip(values)
            .map(|(t, v)| (t.coords.clone(), v))
            .collect(),
        total,
    }
}

/// Gradient of the MPW total with respect to `nu`'s points (every plan held
/// fixed), together with the value breakdown.
pub fn mpw_grad_dst(
    mu: &WeightedPointCloud,
    nu: &WeightedPointCloud,
    spec: &MarginalPenaltySpec,
) -> Result<(Tensor2, MpwBreakdown)> {
    mpw_grad_dst_with(mu, nu, spec, &TransportConfig::default(), Exec::default())
}

pub fn mpw_grad_dst_with(
    mu: &WeightedPointCloud,
    nu: &WeightedPointCloud,
    spec: &MarginalPenaltySpec,
    cfg: &TransportConfig,
    exec: Exec,
) -> Result<(Tensor2, MpwBreakdown)> {
    check_pair(mu, nu, spec)?;
    let plan = w1_exact_with(mu, nu, cfg)?;
    let mut grad = w1_grad_dst(&plan, mu, nu)?;
    let terms = exec.try_map(spec.terms.len(), |k| {
        let t = &spec.terms[k];
        marginal_term(mu, nu, &t.coords, cfg, t.weight != 0.0)
    })?;
    let mut values = Vec::with_capacity(terms.len());
    for (t, (v, g)) in spec.terms.iter().zip(terms) {
        values.push(v);
        if let Some(g) = g {
            for r in 0..nu.len() {
                let src = g.row(r);
                let dst = grad.row_mut(r);
                for (c, &coord) in t.coords.iter().enumerate() {
                    dst[coord] += t.weight * src[c];
                }
            }
        }
    }
    Ok((grad, assemble(plan.cost, spec, values)))
}
