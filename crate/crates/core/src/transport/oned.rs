//! One-dimensional W1 by sorting.

use crate::error::{validation, Result};

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// W1 between two equal-size uniform samples on the line: mean absolute
/// difference of the order statistics. `O(m log m)`.
pub fn w1_1d(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(validation("w1_1d needs non-empty samples"));
    }
    if xs.len() != ys.len() {
        return Err(validation(format!(
            "w1_1d fast path needs equal sizes, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let a = sorted(xs);
    let b = sorted(ys);
    let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / xs.len() as f64)
}

/// Indices that sort `v` ascending; ties keep input order.
pub(crate) fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

/// Monotone (north-west corner on sorted atoms) coupling between two weighted
/// samples on the line, which is optimal for any convex ground cost.
///
/// Returns `(i, j, mass)` triples in original indices.
pub fn monotone_coupling(
    xs: &[f64],
    wx: &[f64],
    ys: &[f64],
    wy: &[f64],
) -> Vec<(usize, usize, f64)> {
    let ox = argsort(xs);
    let oy = argsort(ys);
    let mut out = Vec::with_capacity(xs.len() + ys.len());
    let (mut a, mut b) = (0usize, 0usize);
    let mut ra = wx.get(ox[0]).copied().unwrap_or(0.0);
    let mut rb = wy.get(oy[0]).copied().unwrap_or(0.0);
    while a < ox.len() && b < oy.len() {
        let mass = ra.min(rb);
        if mass > 0.0 {
            out.push((ox[a], oy[b], mass));
        }
        ra -= mass;
        rb -= mass;
        // advance whichever side is exhausted
        if ra <= rb {
            a += 1;
            if a < ox.len() {
                ra = wx[ox[a]];
            }
        } else {
            b += 1;
            if b < oy.len() {
                rb = wy[oy[b]];
            }
        }
    }
    out
}

/// W1 between two weighted samples on the line.
pub fn w1_1d_weighted(xs: &[f64], wx: &[f64], ys: &[f64], wy: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(validation("w1_1d needs non-empty samples"));
    }
    Ok(monotone_coupling(xs, wx, ys, wy)
        .into_iter()
        .map(|(i, j, m)| m * (xs[i] - ys[j]).abs())
        .sum())
}
