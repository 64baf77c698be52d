//! Minibatch training of the generator against an exact transport loss.
//!
//! Each epoch draws one uniform permutation of the rows and walks it in
//! blocks of `batch_size` (the last block may be shorter). For every block a
//! fresh Gaussian noise batch of the same size is pushed through the
//! generator, the loss between real and generated rows is evaluated with all
//! transport plans held fixed, its gradient is backpropagated, and one AdamW
//! step is taken. The conditional variant prepends the block's encoded
//! conditioning columns to the noise.

use serde::{Deserialize, Serialize};

use crate::autodiff::{
    adamw_step, backward, forward, mlp_chain, validate_chain, AdamWConfig, GeneratorParams,
    LayerSpec, Mode, Tensor2, DEFAULT_DROPOUT,
};
use crate::error::{shape, validation, Error, Result};
use crate::exec::Exec;
use crate::mpw::{mpw_grad_dst_with, MarginalPenaltySpec, MpwBreakdown};
use crate::rng::{normal_matrix, permutation, seeded, StreamRng};
use crate::tabular::{self, FittedTransformer, Table};
use crate::transport::{
    random_directions, sliced_w1_grad_dst, TransportConfig, WeightedPointCloud,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Joint W1 plus weighted marginal W1 penalties.
    Mpw,
    /// Joint W1 only.
    Ot,
    /// Sliced W1.
    Sw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Noise dimension; defaults to the encoded width.
    pub latent_dim: Option<usize>,
    pub loss: LossKind,
    /// Weight of every singleton marginal term when `penalty` is unset.
    pub lambda: f64,
    pub penalty: Option<MarginalPenaltySpec>,
    pub n_projections: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Overwrite generated conditioning coordinates with the given ones
    /// before the loss (conditional training only).
    pub copy_conditions: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            latent_dim: None,
            loss: LossKind::Mpw,
            lambda: 1.0,
            penalty: None,
            n_projections: 64,
            optimizer: AdamWConfig::default(),
            seed: 0,
            copy_conditions: false,
        }
    }
}

impl TrainConfig {
    pub fn penalty_spec(&self, width: usize) -> MarginalPenaltySpec {
        self.penalty
            .clone()
            .unwrap_or_else(|| MarginalPenaltySpec::uniform(width, self.lambda))
    }

    pub fn validate(&self, n: usize, width: usize) -> Result<()> {
        if self.batch_size < 2 {
            return Err(validation("batch size must be at least 2"));
        }
        if self.batch_size > n {
            return Err(validation(format!(
                "batch size {} exceeds the {n} available rows",
                self.batch_size
            )));
        }
        if self.latent_dim == Some(0) {
            return Err(validation("latent dimension must be at least 1"));
        }
        if self.loss == LossKind::Sw && self.n_projections == 0 {
            return Err(validation("sliced loss needs at least one projection"));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(validation("lambda must be finite and nonnegative"));
        }
        self.penalty_spec(width).validate(width)?;
        self.optimizer.validate()
    }
}

/// Hidden-layer layout used to build the default generator chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden: vec![500, 200, 100],
            dropout: DEFAULT_DROPOUT,
        }
    }
}

impl ArchConfig {
    pub fn chain(&self, input_dim: usize, tr: &FittedTransformer) -> Vec<LayerSpec> {
        mlp_chain(
            input_dim,
            &self.hidden,
            tr.width,
            self.dropout,
            tr.softmax_blocks(),
        )
    }
}

/// Columns whose encoded values are fed to the generator alongside the noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningSpec {
    pub columns: Vec<usize>,
    /// Encoded coordinates of those columns, in order; its length is `d_c`.
    pub encoded: Vec<usize>,
}

impl ConditioningSpec {
    pub fn none() -> Self {
        Self {
            columns: Vec::new(),
            encoded: Vec::new(),
        }
    }

    pub fn from_names(tr: &FittedTransformer, names: &[&str]) -> Result<Self> {
        let mut columns = Vec::new();
        let mut encoded = Vec::new();
        for name in names {
            let idx = tr
                .layout
                .iter()
                .position(|l| l.name == *name)
                .ok_or_else(|| validation(format!("no column named '{name}'")))?;
            if columns.contains(&idx) {
                return Err(validation(format!("column '{name}' listed twice")));
            }
            columns.push(idx);
            encoded.extend(tr.layout[idx].range.clone());
        }
        Ok(Self { columns, encoded })
    }

    pub fn width(&self) -> usize {
        self.encoded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoded.is_empty()
    }

    fn validate(&self, tr: &FittedTransformer) -> Result<()> {
        let mut expect = Vec::new();
        for &c in &self.columns {
            let lay = tr
                .layout
                .get(c)
                .ok_or_else(|| validation(format!("conditioning column {c} out of range")))?;
            expect.extend(lay.range.clone());
        }
        if expect != self.encoded {
            return Err(validation(
                "conditioning encoded indices do not match the layout",
            ));
        }
        if self.columns.len() == tr.layout.len() && !self.columns.is_empty() {
            return Err(validation(
                "conditioning on every column leaves nothing to generate",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub total: f64,
    pub joint: f64,
    /// `sum_S lambda_S * W1_S`.
    pub marginal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub chain: Vec<LayerSpec>,
    pub params: GeneratorParams,
    pub transformer: FittedTransformer,
    pub config: TrainConfig,
    pub conditioning: Option<ConditioningSpec>,
    pub loss_trace: Vec<EpochLoss>,
}

impl TrainedModel {
    pub fn latent_dim(&self) -> usize {
        self.chain[0].in_dim()
            - self
                .conditioning
                .as_ref()
                .map_or(0, ConditioningSpec::width)
    }

    pub fn is_conditional(&self) -> bool {
        self.conditioning.as_ref().is_some_and(|c| !c.is_empty())
    }
}

/// Loss between a real block and generated rows, with the gradient of the
/// loss with respect to the generated rows.
#[derive(Debug, Clone)]
pub struct BlockLoss {
    pub breakdown: MpwBreakdown,
    pub grad: Tensor2,
}

pub fn block_loss(
    kind: LossKind,
    real: &Tensor2,
    generated: &Tensor2,
    penalty: &MarginalPenaltySpec,
    directions: &[Vec<f64>],
    exec: Exec,
) -> Result<BlockLoss> {
    let mu = WeightedPointCloud::uniform(real.clone())?;
    let nu = WeightedPointCloud::uniform(generated.clone())?;
    let cfg = TransportConfig::default();
    match kind {
        LossKind::Mpw => {
            let (grad, breakdown) = mpw_grad_dst_with(&mu, &nu, penalty, &cfg, exec)?;
            Ok(BlockLoss { breakdown, grad })
        }
        LossKind::Ot => {
            let (grad, breakdown) =
                mpw_grad_dst_with(&mu, &nu, &MarginalPenaltySpec::none(), &cfg, exec)?;
            Ok(BlockLoss { breakdown, grad })
        }
        LossKind::Sw => {
            let (value, grad) = sliced_w1_grad_dst(&mu, &nu, directions)?;
            Ok(BlockLoss {
                breakdown: MpwBreakdown {
                    joint: value,
                    penalties: Vec::new(),
                    total: value,
                },
                grad,
            })
        }
    }
}

fn marginal_sum(b: &MpwBreakdown, penalty: &MarginalPenaltySpec) -> f64 {
    b.penalties
        .iter()
        .zip(&penalty.terms)
        .map(|((_, v), t)| t.weight * v)
        .sum()
}

/// Row indices of each block of one epoch: a uniform permutation cut into
/// consecutive runs of `m`, the last run possibly shorter.
pub fn epoch_blocks<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Vec<Vec<usize>> {
    permutation(rng, n)
        .chunks(m.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Default generator chain for a transformer: noise (plus conditioning) in,
/// encoded row out.
pub fn default_chain(
    tr: &FittedTransformer,
    cfg: &TrainConfig,
    cond: Option<&ConditioningSpec>,
    arch: &ArchConfig,
) -> Vec<LayerSpec> {
    let dz = cfg.latent_dim.unwrap_or(tr.width);
    arch.chain(dz + cond.map_or(0, ConditioningSpec::width), tr)
}

pub fn fit(
    data: &Tensor2,
    tr: &FittedTransformer,
    cfg: &TrainConfig,
    chain: Vec<LayerSpec>,
) -> Result<TrainedModel> {
    fit_inner(data, tr, None, cfg, chain, Exec::default())
}

pub fn fit_conditional(
    data: &Tensor2,
    tr: &FittedTransformer,
    cond: &ConditioningSpec,
    cfg: &TrainConfig,
    chain: Vec<LayerSpec>,
) -> Result<TrainedModel> {
    cond.validate(tr)?;
    fit_inner(data, tr, Some(cond), cfg, chain, Exec::default())
}

/// [`fit`] / [`fit_conditional`] with an explicit execution policy for the
/// per-block marginal solves.
pub fn fit_with(
    data: &Tensor2,
    tr: &FittedTransformer,
    cond: Option<&ConditioningSpec>,
    cfg: &TrainConfig,
    chain: Vec<LayerSpec>,
    exec: Exec,
) -> Result<TrainedModel> {
    if let Some(c) = cond {
        c.validate(tr)?;
    }
    fit_inner(data, tr, cond, cfg, chain, exec)
}

fn fit_inner(
    data: &Tensor2,
    tr: &FittedTransformer,
    cond: Option<&ConditioningSpec>,
    cfg: &TrainConfig,
    chain: Vec<LayerSpec>,
    exec: Exec,
) -> Result<TrainedModel> {
    let n = data.rows();
    let width = tr.width;
    if data.cols() != width {
        return Err(shape(format!(
            "data has {} encoded columns, transformer layout has {width}",
            data.cols()
        )));
    }
    cfg.validate(n, width)?;
    validate_chain(&chain)?;
    let dc = cond.map_or(0, ConditioningSpec::width);
    let out_dim = chain.last().map_or(0, LayerSpec::out_dim);
    if out_dim != width {
        return Err(shape(format!(
            "generator outputs {out_dim} columns, transformer layout has {width}"
        )));
    }
    let in_dim = chain[0].in_dim();
    if in_dim <= dc {
        return Err(shape(format!(
            "generator input width {in_dim} leaves no room for noise after {dc} conditioning columns"
        )));
    }
    let dz = in_dim - dc;
    if let Some(l) = cfg.latent_dim {
        if l != dz {
            return Err(shape(format!(
                "configured latent dimension {l} but generator input implies {dz}"
            )));
        }
    }

    let penalty = cfg.penalty_spec(width);
    let m = cfg.batch_size;
    let n_blocks = n.div_ceil(m);
    let mut opt = cfg.optimizer;
    opt.schedule.period = (cfg.epochs * n_blocks) as u64;

    let mut rng: StreamRng = seeded(cfg.seed);
    let mut params = GeneratorParams::init(&chain, &mut rng)?;
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let blocks = epoch_blocks(&mut rng, n, m);
        let mut acc = EpochLoss {
            total: 0.0,
            joint: 0.0,
            marginal: 0.0,
        };
        for (b, idx) in blocks.iter().enumerate() {
            let real = data.select_rows(idx);
            let k = idx.len();
            let noise = Tensor2::from_vec(k, dz, normal_matrix(&mut rng, k, dz))?;
            let input = match cond {
                Some(c) if !c.is_empty() => real.select_cols(&c.encoded).hconcat(&noise)?,
                _ => noise,
            };
            let (mut generated, cache) = forward(&params, &chain, &input, Mode::Train, &mut rng)?;
            if let (Some(c), true) = (cond, cfg.copy_conditions) {
                for r in 0..k {
                    for &j in &c.encoded {
                        generated.set(r, j, real.get(r, j));
                    }
                }
            }
            let dirs = if cfg.loss == LossKind::Sw {
                random_directions(&mut rng, cfg.n_projections, width)
            } else {
                Vec::new()
            };
            let loss = block_loss(cfg.loss, &real, &generated, &penalty, &dirs, exec)?;
            if !loss.breakdown.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, block {b}"
                )));
            }
            let mut grad = loss.grad;
            if let (Some(c), true) = (cond, cfg.copy_conditions) {
                for r in 0..k {
                    for &j in &c.encoded {
                        grad.set(r, j, 0.0);
                    }
                }
            }
            let (grads, _) = backward(&params, &chain, &cache, &grad)?;
            params.commit_running_stats(&chain, &cache)?;
            adamw_step(&mut params, &grads, &opt).map_err(|e| match e {
                Error::Numeric(d) => Error::Numeric(format!("epoch {epoch}, block {b}: {d}")),
                other => other,
            })?;
            acc.total += loss.breakdown.total;
            acc.joint += loss.breakdown.joint;
            acc.marginal += marginal_sum(&loss.breakdown, &penalty);
        }
        let nb = n_blocks as f64;
        trace.push(EpochLoss {
            total: acc.total / nb,
            joint: acc.joint / nb,
            marginal: acc.marginal / nb,
        });
    }

    let mut config = cfg.clone();
    config.latent_dim = Some(dz);
    config.optimizer = opt;
    Ok(TrainedModel {
        chain,
        params,
        transformer: tr.clone(),
        config,
        conditioning: cond.cloned(),
        loss_trace: trace,
    })
}

/// Raw generator output for `count` noise rows (eval mode), in encoded space.
///
/// `conditions` holds the encoded conditioning values, one row per sample,
/// and must be present exactly when the model is conditional.
pub fn sample_encoded(
    model: &TrainedModel,
    count: usize,
    seed: u64,
    conditions: Option<&Tensor2>,
) -> Result<Tensor2> {
    let dz = model.latent_dim();
    let dc = model
        .conditioning
        .as_ref()
        .map_or(0, ConditioningSpec::width);
    match (model.is_conditional(), conditions) {
        (true, None) => return Err(validation("conditional model needs conditioning rows")),
        (false, Some(_)) => {
            return Err(validation(
                "unconditional model does not take conditioning rows",
            ))
        }
        (true, Some(c)) if c.rows() != count || c.cols() != dc => {
            return Err(shape(format!(
                "conditioning rows are {}x{}, expected {count}x{dc}",
                c.rows(),
                c.cols()
            )))
        }
        _ => {}
    }
    if count == 0 {
        return Ok(Tensor2::zeros(0, model.transformer.width));
    }
    let mut rng = seeded(seed);
    let noise = Tensor2::from_vec(count, dz, normal_matrix(&mut rng, count, dz))?;
    let input = match conditions {
        Some(c) => c.hconcat(&noise)?,
        None => noise,
    };
    let (mut out, _) = forward(&model.params, &model.chain, &input, Mode::Eval, &mut rng)?;
    if let (Some(spec), Some(c)) = (&model.conditioning, conditions) {
        for r in 0..count {
            for (k, &j) in spec.encoded.iter().enumerate() {
                out.set(r, j, c.get(r, k));
            }
        }
    }
    Ok(out)
}

/// Encodes a table holding just the conditioning columns of `model`.
pub fn encode_conditions(model: &TrainedModel, table: &Table) -> Result<Tensor2> {
    let spec = model
        .conditioning
        .as_ref()
        .ok_or_else(|| validation("model is not conditional"))?;
    let sub = tabular::subset(&model.transformer, &spec.columns)?;
    Ok(tabular::encode(&sub, table)?.matrix)
}

/// Draws `count` rows and decodes them to the original column types.
pub fn sample(
    model: &TrainedModel,
    count: usize,
    seed: u64,
    conditions: Option<&Table>,
) -> Result<Table> {
    let cond = match conditions {
        Some(t) => Some(encode_conditions(model, t)?),
        None => None,
    };
    let raw = sample_encoded(model, count, seed, cond.as_ref())?;
    tabular::decode(&model.transformer, &raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{ColumnSpec, TableSchema};

    fn tiny_table(n: usize) -> (FittedTransformer, Tensor2) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let t = Table::from_matrix(&["a", "b"], &Tensor2::from_rows(&rows).unwrap()).unwrap();
        let s = TableSchema::continuous(&["a", "b"]);
        let tr = tabular::fit(&s, &t).unwrap();
        let e = tabular::encode(&tr, &t).unwrap().matrix;
        (tr, e)
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn small_arch() -> ArchConfig {
        ArchConfig {
            hidden: vec![8],
            dropout: 0.1,
        }
    }

    #[test]
    fn deterministic_traces() {
        let (tr, e) = tiny_table(10);
        let cfg = quick_cfg();
        let chain = default_chain(&tr, &cfg, None, &small_arch());
        let a = fit(&e, &tr, &cfg, chain.clone()).unwrap();
        let b = fit(&e, &tr, &cfg, chain).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_trace.len(), 3);
    }

    #[test]
    fn zero_lambda_matches_plain_ot() {
        let (tr, e) = tiny_table(10);
        let mut cfg = quick_cfg();
        cfg.lambda = 0.0;
        let chain = default_chain(&tr, &cfg, None, &small_arch());
        let a = fit(&e, &tr, &cfg, chain.clone()).unwrap();
        cfg.loss = LossKind::Ot;
        let b = fit(&e, &tr, &cfg, chain).unwrap();
        let ta: Vec<f64> = a.loss_trace.iter().map(|l| l.total).collect();
        let tb: Vec<f64> = b.loss_trace.iter().map(|l| l.total).collect();
        assert_eq!(ta, tb);
    }

    #[test]
    fn rejects_bad_config() {
        let (tr, e) = tiny_table(10);
        let mut cfg = quick_cfg();
        cfg.batch_size = 1;
        let chain = default_chain(&tr, &cfg, None, &small_arch());
        assert!(fit(&e, &tr, &cfg, chain.clone()).is_err());
        cfg.batch_size = 11;
        assert!(fit(&e, &tr, &cfg, chain).is_err());
        let cfg = quick_cfg();
        let wrong = mlp_chain(2, &[4], 3, 0.0, vec![]);
        assert!(matches!(fit(&e, &tr, &cfg, wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn sample_edge_cases() {
        let (tr, e) = tiny_table(10);
        let cfg = quick_cfg();
        let chain = default_chain(&tr, &cfg, None, &small_arch());
        let model = fit(&e, &tr, &cfg, chain).unwrap();
        assert_eq!(sample(&model, 0, 1, None).unwrap().n_rows(), 0);
        assert_eq!(
            sample(&model, 7, 1, None).unwrap(),
            sample(&model, 7, 1, None).unwrap()
        );
        assert_ne!(
            sample(&model, 7, 1, None).unwrap(),
            sample(&model, 7, 2, None).unwrap()
        );
        let c = Tensor2::zeros(7, 1);
        assert!(sample_encoded(&model, 7, 1, Some(&c)).is_err());
    }

    #[test]
    fn conditional_needs_rows_and_empty_condition_matches_fit() {
        let (tr, e) = tiny_table(10);
        let cfg = quick_cfg();
        let chain = default_chain(&tr, &cfg, None, &small_arch());
        let plain = fit(&e, &tr, &cfg, chain.clone()).unwrap();
        let none = fit_conditional(&e, &tr, &ConditioningSpec::none(), &cfg, chain).unwrap();
        assert_eq!(plain.loss_trace, none.loss_trace);
        assert_eq!(plain.params, none.params);

        let cond = ConditioningSpec::from_names(&tr, &["a"]).unwrap();
        let chain = default_chain(&tr, &cfg, Some(&cond), &small_arch());
        let model = fit_conditional(&e, &tr, &cond, &cfg, chain).unwrap();
        assert!(model.is_conditional());
        assert!(sample(&model, 3, 0, None).is_err());
        let rows = Table::from_matrix(
            &["a"],
            &Tensor2::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap(),
        )
        .unwrap();
        let out = sample(&model, 3, 0, Some(&rows)).unwrap();
        assert_eq!(out.columns[0], rows.columns[0]);
    }

    #[test]
    fn loss_decomposition_holds() {
        let (tr, e) = tiny_table(12);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 5,
            lambda: 0.7,
            ..quick_cfg()
        };
        let chain = default_chain(&tr, &cfg, None, &small_arch());
        let model = fit(&e, &tr, &cfg, chain).unwrap();
        for l in &model.loss_trace {
            assert!((l.total - (l.joint + l.marginal)).abs() < 1e-9);
        }
    }

    #[test]
    fn unused_columns_schema_roundtrip() {
        let s = TableSchema::new(vec![ColumnSpec::continuous("x")]).unwrap();
        assert_eq!(s.names(), vec!["x"]);
    }
}
