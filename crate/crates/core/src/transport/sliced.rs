//! Sliced W1: Monte Carlo average of 1D distances along random directions.

use rand::Rng;

use super::cloud::WeightedPointCloud;
use super::oned::{monotone_coupling, w1_1d_weighted};
use crate::autodiff::Tensor2;
use crate::error::{shape, validation, Result};
use crate::rng::standard_normal;

/// `count` directions drawn uniformly from the unit sphere in `R^dim`.
pub fn random_directions<R: Rng + ?Sized>(rng: &mut R, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

pub(crate) fn project(cloud: &WeightedPointCloud, dir: &[f64]) -> Vec<f64> {
    cloud
        .points()
        .iter_rows()
        .map(|p| p.iter().zip(dir).map(|(a, b)| a * b).sum())
        .collect()
}

fn check(src: &WeightedPointCloud, dst: &WeightedPointCloud, n_projections: usize) -> Result<()> {
    if src.dim() != dst.dim() {
        return Err(shape(format!(
            "clouds live in R^{} and R^{}",
            src.dim(),
            dst.dim()
        )));
    }
    if n_projections == 0 {
        return Err(validation("sliced W1 needs at least one projection"));
    }
    Ok(())
}

/// Sliced W1 over explicit directions.
pub fn sliced_w1_along(
    src: &WeightedPointCloud,
    dst: &WeightedPointCloud,
    directions: &[Vec<f64>],
) -> Result<f64> {
    check(src, dst, directions.len())?;
    let mut total = 0.0;
    for dir in directions {
        let a = project(src, dir);
        let b = project(dst, dir);
        total += w1_1d_weighted(&a, src.weights(), &b, dst.weights())?;
    }
    Ok(total / directions.len() as f64)
}

pub fn sliced_w1<R: Rng + ?Sized>(
    src: &WeightedPointCloud,
    dst: &WeightedPointCloud,
    n_projections: usize,
    rng: &mut R,
) -> Result<f64> {
    check(src, dst, n_projections)?;
    let dirs = random_directions(rng, n_projections, src.dim());
    sliced_w1_along(src, dst, &dirs)
}

/// Sliced W1 along `directions` and its gradient with respect to `dst`'s points.
pub fn sliced_w1_grad_dst(
    src: &WeightedPointCloud,
    dst: &WeightedPointCloud,
    directions: &[Vec<f64>],
) -> Result<(f64, Tensor2)> {
    check(src, dst, directions.len())?;
    let d = dst.dim();
    let mut grad = Tensor2::zeros(dst.len(), d);
    let mut total = 0.0;
    let scale = 1.0 / directions.len() as f64;
    for dir in directions {
        let a = project(src, dir);
        let b = project(dst, dir);
        for (i, j, mass) in monotone_coupling(&a, src.weights(), &b, dst.weights()) {
            let diff = b[j] - a[i];
            total += mass * diff.abs();
            if diff != 0.0 {
                let s = mass * diff.signum() * scale;
                let row = grad.row_mut(j);
                for k in 0..d {
                    row[k] += s * dir[k];
                }
            }
        }
    }
    Ok((total * scale, grad))
}
