//! Fixed-chain feedforward network with hand-derived reverse-mode gradients.
//!
//! A network is a list of [`LayerSpec`]s applied in order. Trainable state
//! lives in [`GeneratorParams`]; a forward pass in [`Mode::Train`] records a
//! [`ForwardCache`] that [`backward`] consumes to produce parameter and input
//! gradients.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::AdamWState;
use super::tensor::{gemm, Tensor2};
use crate::error::{shape, validation, Error, Result};

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_DROPOUT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Relu {
        dim: usize,
    },
    BatchNorm {
        dim: usize,
        eps: f64,
        momentum: f64,
    },
    Dropout {
        dim: usize,
        rate: f64,
    },
    /// Softmax over each listed column range; columns outside every range pass through.
    SoftmaxBlocks {
        dim: usize,
        blocks: Vec<Range<usize>>,
    },
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Dense { in_dim, out_dim }
    }

    pub fn batch_norm(dim: usize) -> Self {
        LayerSpec::BatchNorm {
            dim,
            eps: DEFAULT_BN_EPS,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    pub fn in_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_dim, .. } => in_dim,
            LayerSpec::Relu { dim }
            | LayerSpec::BatchNorm { dim, .. }
            | LayerSpec::Dropout { dim, .. }
            | LayerSpec::SoftmaxBlocks { dim, .. } => dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match *self {
            LayerSpec::Dense { out_dim, .. } => out_dim,
            _ => self.in_dim(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu { .. } => "relu",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::SoftmaxBlocks { .. } => "softmax",
        }
    }
}

/// Checks dimension compatibility and per-layer invariants of a chain.
pub fn validate_chain(chain: &[LayerSpec]) -> Result<()> {
    if chain.is_empty() {
        return Err(validation("network needs at least one layer"));
    }
    for (i, layer) in chain.iter().enumerate() {
        match layer {
            LayerSpec::Dropout { rate, .. } if !(0.0..1.0).contains(rate) => {
                return Err(validation(format!(
                    "layer {i}: dropout rate {rate} outside [0,1)"
                )));
            }
            LayerSpec::BatchNorm { eps, momentum, .. }
                if *eps <= 0.0 || !(0.0..=1.0).contains(momentum) =>
            {
                return Err(validation(format!("layer {i}: bad batchnorm eps/momentum")));
            }
            LayerSpec::SoftmaxBlocks { dim, blocks } => {
                let mut sorted: Vec<&Range<usize>> = blocks.iter().collect();
                sorted.sort_by_key(|r| r.start);
                let mut end = 0;
                for r in sorted {
                    if r.is_empty() || r.end > *dim || r.start < end {
                        return Err(validation(format!(
                            "layer {i}: softmax block {r:?} empty, overlapping, or beyond width {dim}"
                        )));
                    }
                    end = r.end;
                }
            }
            _ => {}
        }
        if i > 0 && chain[i - 1].out_dim() != layer.in_dim() {
            return Err(shape(format!(
                "layer {} outputs {} columns but layer {i} ({}) expects {}",
                i - 1,
                chain[i - 1].out_dim(),
                layer.name(),
                layer.in_dim()
            )));
        }
    }
    Ok(())
}

/// Hidden stack `dense -> batchnorm -> dropout -> relu` per width, then a
/// linear output layer, then softmax over the categorical blocks (if any).
pub fn mlp_chain(
    input_dim: usize,
    hidden: &[usize],
    output_dim: usize,
    dropout: f64,
    softmax_blocks: Vec<Range<usize>>,
) -> Vec<LayerSpec> {
    let mut chain = Vec::with_capacity(hidden.len() * 4 + 2);
    let mut prev = input_dim;
    for &w in hidden {
        chain.push(LayerSpec::dense(prev, w));
        chain.push(LayerSpec::batch_norm(w));
        if dropout > 0.0 {
            chain.push(LayerSpec::Dropout {
                dim: w,
                rate: dropout,
            });
        }
        chain.push(LayerSpec::Relu { dim: w });
        prev = w;
    }
    chain.push(LayerSpec::dense(prev, output_dim));
    if !softmax_blocks.is_empty() {
        chain.push(LayerSpec::SoftmaxBlocks {
            dim: output_dim,
            blocks: softmax_blocks,
        });
    }
    chain
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerParams {
    Dense {
        /// `out_dim x in_dim`
        weight: Tensor2,
        bias: Vec<f64>,
    },
    BatchNorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    Stateless,
}

/// Network parameters together with their optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub layers: Vec<LayerParams>,
    pub optim: AdamWState,
    /// Bumped on every parameter update; forward caches remember it.
    pub version: u64,
}

impl GeneratorParams {
    /// PyTorch-style initialisation: dense weights and biases uniform in
    /// `±1/sqrt(in_dim)`, batchnorm scale 1 and shift 0.
    pub fn init<R: Rng + ?Sized>(chain: &[LayerSpec], rng: &mut R) -> Result<Self> {
        validate_chain(chain)?;
        let layers: Vec<LayerParams> = chain
            .iter()
            .map(|spec| match *spec {
                LayerSpec::Dense { in_dim, out_dim } => {
                    let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
                    let mut draw = || rng.random_range(-bound..=bound);
                    let w: Vec<f64> = (0..in_dim * out_dim).map(|_| draw()).collect();
                    let bias: Vec<f64> = (0..out_dim).map(|_| draw()).collect();
                    LayerParams::Dense {
                        weight: Tensor2::from_vec(out_dim, in_dim, w).expect("sized"),
                        bias,
                    }
                }
                LayerSpec::BatchNorm { dim, .. } => LayerParams::BatchNorm {
                    gamma: vec![1.0; dim],
                    beta: vec![0.0; dim],
                    running_mean: vec![0.0; dim],
                    running_var: vec![1.0; dim],
                },
                _ => LayerParams::Stateless,
            })
            .collect();
        let mut params = Self {
            layers,
            optim: AdamWState::default(),
            version: 0,
        };
        params.optim = AdamWState::zeros(params.trainable_len());
        Ok(params)
    }

    pub fn trainable_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerParams::Dense { weight, bias } => weight.data().len() + bias.len(),
                LayerParams::BatchNorm { gamma, beta, .. } => gamma.len() + beta.len(),
                LayerParams::Stateless => 0,
            })
            .sum()
    }

    /// Trainable slices in canonical order: per layer, dense weight then bias,
    /// batchnorm scale then shift.
    pub fn trainable_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerParams::Dense { weight, bias } => {
                    out.push(weight.data_mut());
                    out.push(bias.as_mut_slice());
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma.as_mut_slice());
                    out.push(beta.as_mut_slice());
                }
                LayerParams::Stateless => {}
            }
        }
        out
    }

    /// Flat copy of the trainable parameters in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_len());
        for l in &self.layers {
            match l {
                LayerParams::Dense { weight, bias } => {
                    out.extend_from_slice(weight.data());
                    out.extend_from_slice(bias);
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.extend_from_slice(gamma);
                    out.extend_from_slice(beta);
                }
                LayerParams::Stateless => {}
            }
        }
        out
    }

    /// Overwrites the trainable parameters from a flat vector.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.trainable_len() {
            return Err(shape(format!(
                "expected {} parameters, got {}",
                self.trainable_len(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for s in self.trainable_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        self.version += 1;
        Ok(())
    }

    /// Folds the batch statistics recorded by a training forward pass into
    /// the batchnorm running averages.
    pub fn commit_running_stats(
        &mut self,
        chain: &[LayerSpec],
        cache: &ForwardCache,
    ) -> Result<()> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Contract("cache does not match parameters".into()));
        }
        for ((layer, spec), c) in self.layers.iter_mut().zip(chain).zip(&cache.layers) {
            if let (
                LayerParams::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                },
                LayerSpec::BatchNorm { momentum, .. },
                LayerCache::BatchNormTrain {
                    batch_mean,
                    batch_var,
                    batch,
                    ..
                },
            ) = (layer, spec, c)
            {
                let unbias = if *batch > 1 {
                    *batch as f64 / (*batch as f64 - 1.0)
                } else {
                    1.0
                };
                for k in 0..running_mean.len() {
                    running_mean[k] = (1.0 - momentum) * running_mean[k] + momentum * batch_mean[k];
                    running_var[k] =
                        (1.0 - momentum) * running_var[k] + momentum * batch_var[k] * unbias;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Dense {
        input: Tensor2,
    },
    Relu {
        input: Tensor2,
    },
    BatchNormTrain {
        xhat: Tensor2,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
        batch: usize,
    },
    BatchNormEval {
        xhat: Tensor2,
        inv_std: Vec<f64>,
    },
    /// Per-entry multiplier (0 or 1/keep); `None` means identity.
    Dropout {
        scale: Option<Vec<f64>>,
    },
    Softmax {
        output: Tensor2,
    },
}

/// Activations recorded by [`forward`] for use by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    version: u64,
    input_dims: (usize, usize),
}

/// Trainable-parameter gradients, flat in the canonical order of
/// [`GeneratorParams::flatten`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

pub fn forward<R: Rng + ?Sized>(
    params: &GeneratorParams,
    chain: &[LayerSpec],
    z: &Tensor2,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor2, ForwardCache)> {
    if chain.len() != params.layers.len() {
        return Err(shape(format!(
            "{} layer specs but {} parameter blocks",
            chain.len(),
            params.layers.len()
        )));
    }
    let first = chain.first().ok_or_else(|| validation("empty network"))?;
    if z.cols() != first.in_dim() {
        return Err(shape(format!(
            "input has {} columns, network expects {}",
            z.cols(),
            first.in_dim()
        )));
    }
    let input_dims = (z.rows(), z.cols());
    let mut x = z.clone();
    let mut caches = Vec::with_capacity(chain.len());
    for (idx, (spec, p)) in chain.iter().zip(&params.layers).enumerate() {
        let (y, cache) = layer_forward(spec, p, x, mode, rng)?;
        if !y.all_finite() {
            return Err(Error::NumericLayer {
                layer: idx,
                detail: format!("{} produced a non-finite activation", spec.name()),
            });
        }
        caches.push(cache);
        x = y;
    }
    Ok((
        x,
        ForwardCache {
            layers: caches,
            version: params.version,
            input_dims,
        },
    ))
}

fn layer_forward<R: Rng + ?Sized>(
    spec: &LayerSpec,
    p: &LayerParams,
    x: Tensor2,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor2, LayerCache)> {
    let rows = x.rows();
    match (spec, p) {
        (LayerSpec::Dense { in_dim, out_dim }, LayerParams::Dense { weight, bias }) => {
            let mut y = Tensor2::zeros(rows, *out_dim);
            for r in 0..rows {
                y.row_mut(r).copy_from_slice(bias);
            }
            gemm(
                rows,
                *in_dim,
                *out_dim,
                1.0,
                x.data(),
                false,
                weight.data(),
                true,
                1.0,
                y.data_mut(),
            );
            Ok((y, LayerCache::Dense { input: x }))
        }
        (LayerSpec::Relu { .. }, _) => {
            let mut y = x.clone();
            y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            Ok((y, LayerCache::Relu { input: x }))
        }
        (
            LayerSpec::BatchNorm { dim, eps, .. },
            LayerParams::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            },
        ) => {
            let (mean, var) = match mode {
                Mode::Train => column_moments(&x),
                Mode::Eval => (running_mean.clone(), running_var.clone()),
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut xhat = x;
            let mut y = Tensor2::zeros(rows, *dim);
            for r in 0..rows {
                let xr = xhat.row_mut(r);
                for k in 0..*dim {
                    xr[k] = (xr[k] - mean[k]) * inv_std[k];
                }
                let yr = y.row_mut(r);
                let xr = xhat.row(r);
                for k in 0..*dim {
                    yr[k] = gamma[k] * xr[k] + beta[k];
                }
            }
            let cache = match mode {
                Mode::Train => LayerCache::BatchNormTrain {
                    xhat,
                    inv_std,
                    batch_mean: mean,
                    batch_var: var,
                    batch: rows,
                },
                Mode::Eval => LayerCache::BatchNormEval { xhat, inv_std },
            };
            Ok((y, cache))
        }
        (LayerSpec::Dropout { rate, .. }, _) => {
            if mode == Mode::Eval || *rate == 0.0 {
                return Ok((x, LayerCache::Dropout { scale: None }));
            }
            let keep = 1.0 - rate;
            let scale: Vec<f64> = (0..x.data().len())
                .map(|_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut y = x;
            y.data_mut()
                .iter_mut()
                .zip(&scale)
                .for_each(|(v, s)| *v *= s);
            Ok((y, LayerCache::Dropout { scale: Some(scale) }))
        }
        (LayerSpec::SoftmaxBlocks { blocks, .. }, _) => {
            let mut y = x;
            for r in 0..rows {
                let row = y.row_mut(r);
                for b in blocks {
                    softmax_in_place(&mut row[b.clone()]);
                }
            }
            Ok((y.clone(), LayerCache::Softmax { output: y }))
        }
        _ => Err(Error::Contract(format!(
            "parameters do not match {} layer",
            spec.name()
        ))),
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

/// Per-column mean and biased variance.
fn column_moments(x: &Tensor2) -> (Vec<f64>, Vec<f64>) {
    let mean = x.column_means();
    let mut var = vec![0.0; x.cols()];
    for r in x.iter_rows() {
        for k in 0..r.len() {
            let d = r[k] - mean[k];
            var[k] += d * d;
        }
    }
    let n = x.rows().max(1) as f64;
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Reverse pass: returns parameter gradients and the gradient with respect to
/// the network input.
pub fn backward(
    params: &GeneratorParams,
    chain: &[LayerSpec],
    cache: &ForwardCache,
    upstream: &Tensor2,
) -> Result<(Gradients, Tensor2)> {
    if cache.version != params.version {
        return Err(Error::Contract(format!(
            "cache was recorded at parameter version {}, parameters are at {}",
            cache.version, params.version
        )));
    }
    if cache.layers.len() != chain.len() || chain.len() != params.layers.len() {
        return Err(Error::Contract("cache does not match network".into()));
    }
    let out_dim = chain.last().map_or(0, LayerSpec::out_dim);
    if upstream.rows() != cache.input_dims.0 || upstream.cols() != out_dim {
        return Err(shape(format!(
            "upstream gradient is {}x{}, expected {}x{out_dim}",
            upstream.rows(),
            upstream.cols(),
            cache.input_dims.0
        )));
    }

    // Gradient blocks are produced last layer first and reversed at the end.
    let mut blocks: Vec<Vec<f64>> = Vec::new();
    let mut g = upstream.clone();
    for ((spec, p), c) in chain.iter().zip(&params.layers).zip(&cache.layers).rev() {
        g = match (spec, p, c) {
            (
                LayerSpec::Dense { in_dim, out_dim },
                LayerParams::Dense { weight, .. },
                LayerCache::Dense { input },
            ) => {
                let rows = input.rows();
                let mut dw = vec![0.0; out_dim * in_dim];
                gemm(
                    *out_dim,
                    rows,
                    *in_dim,
                    1.0,
                    g.data(),
                    true,
                    input.data(),
                    false,
                    0.0,
                    &mut dw,
                );
                let mut db = vec![0.0; *out_dim];
                for r in g.iter_rows() {
                    db.iter_mut().zip(r).for_each(|(d, v)| *d += v);
                }
                let mut dx = Tensor2::zeros(rows, *in_dim);
                gemm(
                    rows,
                    *out_dim,
                    *in_dim,
                    1.0,
                    g.data(),
                    false,
                    weight.data(),
                    false,
                    0.0,
                    dx.data_mut(),
                );
                blocks.push(db);
                blocks.push(dw);
                dx
            }
            (LayerSpec::Relu { .. }, _, LayerCache::Relu { input }) => {
                let mut dx = g;
                dx.data_mut()
                    .iter_mut()
                    .zip(input.data())
                    .for_each(|(d, x)| {
                        if *x <= 0.0 {
                            *d = 0.0
                        }
                    });
                dx
            }
            (LayerSpec::BatchNorm { dim, .. }, LayerParams::BatchNorm { gamma, .. }, bn) => {
                let (xhat, inv_std, train) = match bn {
                    LayerCache::BatchNormTrain { xhat, inv_std, .. } => (xhat, inv_std, true),
                    LayerCache::BatchNormEval { xhat, inv_std } => (xhat, inv_std, false),
                    _ => return Err(Error::Contract("batchnorm cache mismatch".into())),
                };
                let rows = g.rows();
                let mut dgamma = vec![0.0; *dim];
                let mut dbeta = vec![0.0; *dim];
                for (gr, xr) in g.iter_rows().zip(xhat.iter_rows()) {
                    for k in 0..*dim {
                        dgamma[k] += gr[k] * xr[k];
                        dbeta[k] += gr[k];
                    }
                }
                let mut dx = Tensor2::zeros(rows, *dim);
                let n = rows as f64;
                for r in 0..rows {
                    let gr = g.row(r);
                    let xr = xhat.row(r);
                    let dr = dx.row_mut(r);
                    for k in 0..*dim {
                        let dxhat = gr[k] * gamma[k];
                        dr[k] = if train {
                            // d/dx of (x - mean) / std with batch statistics:
                            // inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                            inv_std[k] * (dxhat - gamma[k] * (dbeta[k] + xr[k] * dgamma[k]) / n)
                        } else {
                            inv_std[k] * dxhat
                        };
                    }
                }
                blocks.push(dbeta);
                blocks.push(dgamma);
                dx
            }
            (LayerSpec::Dropout { .. }, _, LayerCache::Dropout { scale }) => {
                let mut dx = g;
                if let Some(s) = scale {
                    dx.data_mut().iter_mut().zip(s).for_each(|(d, s)| *d *= s);
                }
                dx
            }
            (
                LayerSpec::SoftmaxBlocks { blocks: ranges, .. },
                _,
                LayerCache::Softmax { output },
            ) => {
                let mut dx = g;
                for r in 0..output.rows() {
                    let s = output.row(r);
                    let d = dx.row_mut(r);
                    for b in ranges {
                        let dot: f64 = b.clone().map(|k| d[k] * s[k]).sum();
                        for k in b.clone() {
                            d[k] = s[k] * (d[k] - dot);
                        }
                    }
                }
                dx
            }
            _ => {
                return Err(Error::Contract(format!(
                    "stale cache for {} layer",
                    spec.name()
                )))
            }
        };
    }
    blocks.reverse();
    let flat: Vec<f64> = blocks.into_iter().flatten().collect();
    Ok((Gradients(flat), g))
}

#[cfg(test)]
#[allow(clippy::single_range_in_vec_init)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn dense_identity(dim: usize) -> (Vec<LayerSpec>, GeneratorParams) {
        let chain = vec![LayerSpec::dense(dim, dim)];
        let mut rng = seeded(0);
        let mut p = GeneratorParams::init(&chain, &mut rng).unwrap();
        let mut w = Tensor2::zeros(dim, dim);
        for i in 0..dim {
            w.set(i, i, 1.0);
        }
        p.layers[0] = LayerParams::Dense {
            weight: w,
            bias: vec![0.0; dim],
        };
        (chain, p)
    }

    #[test]
    fn identity_dense() {
        let (chain, p) = dense_identity(2);
        let z = Tensor2::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (y, _) = forward(&p, &chain, &z, Mode::Eval, &mut seeded(0)).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_clips() {
        let chain = vec![LayerSpec::Relu { dim: 2 }];
        let p = GeneratorParams::init(&chain, &mut seeded(0)).unwrap();
        let z = Tensor2::from_rows(&[vec![-1.0, 3.0]]).unwrap();
        let (y, _) = forward(&p, &chain, &z, Mode::Train, &mut seeded(0)).unwrap();
        assert_eq!(y.data(), &[0.0, 3.0]);
    }

    #[test]
    fn softmax_uniform() {
        let chain = vec![LayerSpec::SoftmaxBlocks {
            dim: 3,
            blocks: vec![0..3],
        }];
        let p = GeneratorParams::init(&chain, &mut seeded(0)).unwrap();
        let z = Tensor2::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
        let (y, _) = forward(&p, &chain, &z, Mode::Eval, &mut seeded(0)).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_chain_rule() {
        let chain = vec![LayerSpec::dense(1, 1)];
        let mut p = GeneratorParams::init(&chain, &mut seeded(0)).unwrap();
        p.layers[0] = LayerParams::Dense {
            weight: Tensor2::from_vec(1, 1, vec![2.0]).unwrap(),
            bias: vec![0.0],
        };
        let z = Tensor2::from_vec(1, 1, vec![3.0]).unwrap();
        let (_, cache) = forward(&p, &chain, &z, Mode::Train, &mut seeded(0)).unwrap();
        let g = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let (grads, dx) = backward(&p, &chain, &cache, &g).unwrap();
        assert_eq!(grads.0, vec![3.0, 1.0]);
        assert_eq!(dx.data(), &[2.0]);
    }

    #[test]
    fn dropout_eval_is_identity_both_ways() {
        let chain = vec![LayerSpec::Dropout { dim: 3, rate: 0.5 }];
        let p = GeneratorParams::init(&chain, &mut seeded(0)).unwrap();
        let z = Tensor2::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        let (y, cache) = forward(&p, &chain, &z, Mode::Eval, &mut seeded(0)).unwrap();
        assert_eq!(y, z);
        let up = Tensor2::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        let (_, dx) = backward(&p, &chain, &cache, &up).unwrap();
        assert_eq!(dx, up);
    }

    #[test]
    fn shape_mismatch_detected() {
        let chain = vec![LayerSpec::dense(2, 3), LayerSpec::Relu { dim: 4 }];
        assert!(matches!(validate_chain(&chain), Err(Error::Shape(_))));
        let chain = vec![LayerSpec::dense(2, 3)];
        let p = GeneratorParams::init(&chain, &mut seeded(0)).unwrap();
        let z = Tensor2::zeros(1, 5);
        assert!(matches!(
            forward(&p, &chain, &z, Mode::Eval, &mut seeded(0)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn non_finite_reports_layer() {
        let chain = vec![LayerSpec::Relu { dim: 1 }, LayerSpec::dense(1, 1)];
        let mut p = GeneratorParams::init(&chain, &mut seeded(0)).unwrap();
        p.layers[1] = LayerParams::Dense {
            weight: Tensor2::from_vec(1, 1, vec![f64::MAX]).unwrap(),
            bias: vec![0.0],
        };
        let z = Tensor2::from_vec(1, 1, vec![10.0]).unwrap();
        let err = forward(&p, &chain, &z, Mode::Eval, &mut seeded(0)).unwrap_err();
        assert!(matches!(err, Error::NumericLayer { layer: 1, .. }));
    }

    #[test]
    fn stale_cache_rejected() {
        let chain = vec![LayerSpec::dense(1, 1)];
        let mut p = GeneratorParams::init(&chain, &mut seeded(0)).unwrap();
        let z = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let (_, cache) = forward(&p, &chain, &z, Mode::Train, &mut seeded(0)).unwrap();
        let flat = p.flatten();
        p.assign_flat(&flat).unwrap();
        let g = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        assert!(matches!(
            backward(&p, &chain, &cache, &g),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn overlapping_softmax_blocks_rejected() {
        let chain = vec![LayerSpec::SoftmaxBlocks {
            dim: 4,
            blocks: vec![0..2, 1..3],
        }];
        assert!(validate_chain(&chain).is_err());
        let chain = vec![LayerSpec::SoftmaxBlocks {
            dim: 4,
            blocks: vec![2..5],
        }];
        assert!(validate_chain(&chain).is_err());
    }

    #[test]
    fn running_stats_update() {
        let chain = vec![LayerSpec::batch_norm(1)];
        let mut p = GeneratorParams::init(&chain, &mut seeded(0)).unwrap();
        let z = Tensor2::from_vec(2, 1, vec![1.0, 3.0]).unwrap();
        let (_, cache) = forward(&p, &chain, &z, Mode::Train, &mut seeded(0)).unwrap();
        p.commit_running_stats(&chain, &cache).unwrap();
        match &p.layers[0] {
            LayerParams::BatchNorm {
                running_mean,
                running_var,
                ..
            } => {
                assert!((running_mean[0] - 0.2).abs() < 1e-15);
                // unbiased batch variance is 2
                assert!((running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
    }
}
