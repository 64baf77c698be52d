//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::HashMap;

use margot::autodiff::{backward, forward, GeneratorParams, LayerParams, LayerSpec, Mode, Tensor2};
use margot::mpw::{mpw_distance, MarginalPenaltySpec};
use margot::rng::{normal_matrix, seeded, StreamRng};
use margot::tabular::{Column, ColumnSpec, Table, TableSchema};
use margot::train::{block_loss, LossKind};
use margot::transport::WeightedPointCloud;
use margot::Exec;
use rand::Rng;

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn random_tensor(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_vec(rows, cols, normal_matrix(rng, rows, cols)).unwrap()
}

fn dot(a: &Tensor2, b: &Tensor2) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Random layer of the given kind with matching random parameters.
pub fn random_layer(rng: &mut StreamRng, kind: usize) -> LayerSpec {
    let dim = rng.random_range(1..=8);
    match kind {
        0 => LayerSpec::dense(dim, rng.random_range(1..=8)),
        1 => LayerSpec::Relu { dim },
        2 => LayerSpec::batch_norm(dim),
        3 => LayerSpec::Dropout {
            dim,
            rate: rng.random_range(0.0..0.8),
        },
        _ => {
            let dim = dim.max(2);
            let a = rng.random_range(0..dim - 1);
            let b = rng.random_range(a + 2..=dim);
            let mut blocks = Vec::with_capacity(2);
            blocks.push(a..b);
            if b + 2 <= dim {
                blocks.push(b..dim);
            }
            LayerSpec::SoftmaxBlocks { dim, blocks }
        }
    }
}

/// Relative error between backward and central differences of
/// `sum(forward(z) * upstream)` over parameters and inputs, for a single
/// layer. Returns `(param_err, input_err)`.
pub fn single_layer_check(spec: LayerSpec, seed: u64, mode: Mode) -> (f64, f64) {
    let mut rng = seeded(seed);
    let chain = vec![spec.clone()];
    let mut params = GeneratorParams::init(&chain, &mut rng).unwrap();
    let len = params.trainable_len();
    let flat: Vec<f64> = normal_matrix(&mut rng, 1, len);
    params.assign_flat(&flat).unwrap();
    if let LayerParams::BatchNorm {
        running_mean,
        running_var,
        ..
    } = &mut params.layers[0]
    {
        running_mean
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
        running_var
            .iter_mut()
            .for_each(|v| *v = rng.random_range(0.5..2.0));
    }
    let rows = rng.random_range(2..=8);
    let mut z = random_tensor(&mut rng, rows, spec.in_dim());
    if matches!(spec, LayerSpec::Relu { .. }) {
        // keep inputs away from the kink
        z.data_mut().iter_mut().for_each(|v| {
            if v.abs() < 1e-2 {
                *v += 0.1f64.copysign(*v);
            }
        });
    }
    let upstream = random_tensor(&mut rng, rows, spec.out_dim());
    let fwd_seed = rng.random::<u64>();
    let loss = |p: &GeneratorParams, z: &Tensor2| {
        let (out, _) = forward(p, &chain, z, mode, &mut seeded(fwd_seed)).unwrap();
        dot(&out, &upstream)
    };
    let (_, cache) = forward(&params, &chain, &z, mode, &mut seeded(fwd_seed)).unwrap();
    let (g, gz) = backward(&params, &chain, &cache, &upstream).unwrap();

    let h = 1e-5;
    let base = params.flatten();
    let mut fd = Vec::with_capacity(len);
    let mut p = params.clone();
    for i in 0..len {
        let mut v = base.clone();
        v[i] += h;
        p.assign_flat(&v).unwrap();
        let up = loss(&p, &z);
        v[i] -= 2.0 * h;
        p.assign_flat(&v).unwrap();
        let dn = loss(&p, &z);
        fd.push((up - dn) / (2.0 * h));
    }
    let mut fdz = Vec::with_capacity(z.data().len());
    for i in 0..z.data().len() {
        let mut zp = z.clone();
        zp.data_mut()[i] += h;
        let up = loss(&params, &zp);
        zp.data_mut()[i] -= 2.0 * h;
        let dn = loss(&params, &zp);
        fdz.push((up - dn) / (2.0 * h));
    }
    (rel_err(&g.0, &fd), rel_err(gz.data(), &fdz))
}

/// Gradient of `MPW(real, G_theta(z))` with respect to `theta`, analytic
/// (envelope, plans fixed) versus central differences of the exact value.
pub fn end_to_end_check(seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let d = rng.random_range(1..=3);
    let dz = rng.random_range(1..=3);
    let hidden = rng.random_range(2..=5);
    let k = rng.random_range(3..=7);
    let chain = vec![
        LayerSpec::dense(dz, hidden),
        LayerSpec::batch_norm(hidden),
        LayerSpec::Relu { dim: hidden },
        LayerSpec::dense(hidden, d),
    ];
    let params = GeneratorParams::init(&chain, &mut rng).unwrap();
    let real = random_tensor(&mut rng, k, d);
    let z = random_tensor(&mut rng, k, dz);
    let lambdas: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..2.0)).collect();
    let spec = MarginalPenaltySpec::singletons(&lambdas);
    let mu = WeightedPointCloud::uniform(real.clone()).unwrap();
    let value = |p: &GeneratorParams| {
        let (out, _) = forward(p, &chain, &z, Mode::Train, &mut seeded(0)).unwrap();
        mpw_distance(&mu, &WeightedPointCloud::uniform(out).unwrap(), &spec)
            .unwrap()
            .total
    };
    let (out, cache) = forward(&params, &chain, &z, Mode::Train, &mut seeded(0)).unwrap();
    let bl = block_loss(LossKind::Mpw, &real, &out, &spec, &[], Exec::Sequential).unwrap();
    let (g, _) = backward(&params, &chain, &cache, &bl.grad).unwrap();
    let h = 1e-6;
    let base = params.flatten();
    let mut p = params.clone();
    let mut fd = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] += h;
        p.assign_flat(&v).unwrap();
        let up = value(&p);
        v[i] -= 2.0 * h;
        p.assign_flat(&v).unwrap();
        let dn = value(&p);
        fd.push((up - dn) / (2.0 * h));
    }
    rel_err(&g.0, &fd)
}

/// Minimum over all permutations of the mean matched distance.
pub fn brute_force_w1(x: &Tensor2, y: &Tensor2) -> f64 {
    fn rec(x: &Tensor2, y: &Tensor2, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == x.rows() {
            *best = best.min(acc);
            return;
        }
        for j in 0..y.rows() {
            if !used[j] {
                used[j] = true;
                let d: f64 = x
                    .row(row)
                    .iter()
                    .zip(y.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                rec(x, y, row + 1, used, acc + d, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(x, y, 0, &mut vec![false; y.rows()], 0.0, &mut best);
    best / x.rows() as f64
}

/// Histogram TV computed with an explicit dense cell index per point.
pub fn naive_tv(x: &Tensor2, y: &Tensor2, bounds: &[(f64, f64)], bins: usize) -> f64 {
    let cell = |r: &[f64]| -> usize {
        let mut idx = 0usize;
        for (v, &(lo, hi)) in r.iter().zip(bounds) {
            let mut k = 0usize;
            // linear scan over bin edges
            for b in 1..bins {
                let edge = lo + (hi - lo) * b as f64 / bins as f64;
                if *v >= edge {
                    k = b;
                }
            }
            idx = idx * bins + k;
        }
        idx
    };
    let mut hx: HashMap<usize, f64> = HashMap::new();
    let mut hy: HashMap<usize, f64> = HashMap::new();
    for r in x.iter_rows() {
        *hx.entry(cell(r)).or_default() += 1.0 / x.rows() as f64;
    }
    for r in y.iter_rows() {
        *hy.entry(cell(r)).or_default() += 1.0 / y.rows() as f64;
    }
    let mut keys: Vec<usize> = hx.keys().chain(hy.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|k| (hx.get(k).unwrap_or(&0.0) - hy.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Direct double loop for the biased Gaussian-kernel MMD^2.
pub fn naive_mmd2(x: &Tensor2, y: &Tensor2, s: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        (-d2 / (2.0 * s * s)).exp()
    };
    let mean = |a: &Tensor2, b: &Tensor2| {
        let mut t = 0.0;
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                t += k(a.row(i), b.row(j));
            }
        }
        t / (a.rows() * b.rows()) as f64
    };
    mean(x, x) + mean(y, y) - 2.0 * mean(x, y)
}

/// Random table mixing all four column kinds, with its schema.
pub fn random_mixed_table(rng: &mut StreamRng) -> (TableSchema, Table) {
    let rows = rng.random_range(1..=30);
    let cols = rng.random_range(1..=6);
    let mut specs = Vec::new();
    let mut data = Vec::new();
    for c in 0..cols {
        let name = format!("c{c}");
        match rng.random_range(0..4) {
            0 => {
                let scale = 10f64.powi(rng.random_range(-3..4));
                let v = (0..rows)
                    .map(|_| rng.random_range(-1.0..1.0) * scale)
                    .collect();
                specs.push(ColumnSpec::continuous(&name));
                data.push(Column::Numeric(v));
            }
            1 => {
                let v = (0..rows)
                    .map(|_| rng.random_range(-50i64..50) as f64)
                    .collect();
                specs.push(ColumnSpec::discrete(&name));
                data.push(Column::Numeric(v));
            }
            k => {
                let levels: Vec<String> = (0..rng.random_range(1..=5))
                    .map(|l| format!("l{l}"))
                    .collect();
                let refs: Vec<&str> = levels.iter().map(String::as_str).collect();
                let v = (0..rows)
                    .map(|_| levels[rng.random_range(0..levels.len())].clone())
                    .collect();
                specs.push(if k == 2 {
                    ColumnSpec::ordinal(&name, &refs)
                } else {
                    ColumnSpec::categorical(&name, &refs)
                });
                data.push(Column::Labels(v));
            }
        }
    }
    let names = specs.iter().map(|s| s.name.clone()).collect();
    (
        TableSchema::new(specs).unwrap(),
        Table::new(names, data).unwrap(),
    )
}

/// Whether `back` equals `orig` exactly on labelled and discrete columns and
/// within `tol` (relative to the column range) on continuous ones.
pub fn tables_match(orig: &Table, back: &Table, tol: f64) -> bool {
    if orig.names != back.names {
        return false;
    }
    orig.columns
        .iter()
        .zip(&back.columns)
        .all(|(a, b)| match (a, b) {
            (Column::Numeric(a), Column::Numeric(b)) => {
                let span = a.iter().fold(0f64, |m, v| m.max(v.abs()));
                a.iter()
                    .zip(b)
                    .all(|(x, y)| (x - y).abs() <= tol * span.max(1.0))
            }
            (Column::Labels(a), Column::Labels(b)) => a == b,
            _ => false,
        })
}
