//! Synthetic benchmark datasets and the experiment runner that trains each
//! loss variant on them and scores the result.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor2;
use crate::error::{validation, Error, Result};
use crate::eval::{self, CoverageConfig, CoverageResult, EvalConfig, MetricReport, TvGrid};
use crate::exec::Exec;
use crate::rng::{seeded, standard_normal, substream, StreamRng};
use crate::tabular::{self, Table, TableSchema};
use crate::train::{self, ArchConfig, EpochLoss, LossKind, TrainConfig, TrainedModel};

/// Multivariate normal draws through a Cholesky factor.
#[derive(Debug, Clone)]
pub struct Mvn {
    mean: Vec<f64>,
    chol: DMatrix<f64>,
}

impl Mvn {
    pub fn new(mean: Vec<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(validation("covariance shape does not match the mean"));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| validation("covariance is not positive definite"))?
            .l();
        Ok(Self { mean, chol })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
        for (i, o) in out.iter_mut().enumerate().take(d) {
            let mut v = self.mean[i];
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                v += self.chol[(i, k)] * zk;
            }
            *o = v;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Tensor2 {
        let d = self.dim();
        let mut t = Tensor2::zeros(n, d);
        for r in 0..n {
            self.draw_into(rng, t.row_mut(r));
        }
        t
    }
}

/// Finite mixture of multivariate normals.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub components: Vec<Mvn>,
}

impl Mixture {
    pub fn means(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.mean.clone()).collect()
    }

    /// Draws `n` rows and the component label of each.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> (Tensor2, Vec<usize>) {
        let d = self.components[0].dim();
        let mut t = Tensor2::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        for r in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = self.weights.len() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = i;
                    break;
                }
            }
            self.components[k].draw_into(rng, t.row_mut(r));
            labels.push(k);
        }
        (t, labels)
    }
}

fn names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

fn table(prefix: &str, m: &Tensor2) -> Table {
    let n = names(prefix, m.cols());
    let refs: Vec<&str> = n.iter().map(String::as_str).collect();
    Table::from_matrix(&refs, m).expect("column count matches")
}

/// The 20-dimensional three-component mixture.
pub fn gmm20_mixture() -> Mixture {
    let d = 20;
    let mu3: Vec<f64> = (0..d)
        .map(|i| if i % 2 == 0 { -5.0 } else { 5.0 })
        .collect();
    let eye = DMatrix::<f64>::identity(d, d);
    let mut s3 = eye.clone();
    s3[(0, 1)] = -0.09;
    s3[(1, 0)] = -0.09;
    Mixture {
        weights: vec![0.1, 0.1, 0.8],
        components: vec![
            Mvn::new(vec![0.0; d], &eye).expect("identity"),
            Mvn::new(vec![6.0; d], &eye).expect("identity"),
            Mvn::new(mu3, &s3).expect("diagonally dominant"),
        ],
    }
}

pub fn gen_gmm20(n: usize, seed: u64) -> (Table, Vec<usize>) {
    let (m, labels) = gmm20_mixture().sample(&mut seeded(seed), n);
    (table("x", &m), labels)
}

/// Two isotropic components at `+-delta * 1_d` with weights `(w, 1 - w)`.
pub fn two_component_mixture(d: usize, delta: f64, sigma: f64, w: f64) -> Mixture {
    let cov = DMatrix::<f64>::identity(d, d) * (sigma * sigma);
    Mixture {
        weights: vec![w, 1.0 - w],
        components: vec![
            Mvn::new(vec![delta; d], &cov).expect("isotropic"),
            Mvn::new(vec![-delta; d], &cov).expect("isotropic"),
        ],
    }
}

pub fn gen_scurve(n: usize, seed: u64) -> Table {
    let mut rng = seeded(seed);
    let mut m = Tensor2::zeros(n, 3);
    for r in 0..n {
        let u: f64 = rng.random_range(-1.5 * PI..1.5 * PI);
        let x2: f64 = rng.random_range(0.0..2.0);
        let sgn = if u > 0.0 {
            1.0
        } else if u < 0.0 {
            -1.0
        } else {
            0.0
        };
        m.row_mut(r)
            .copy_from_slice(&[u.sin(), x2, sgn * (u.cos() - 1.0)]);
    }
    table("x", &m)
}

pub fn gauss3_covariance() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        3,
        &[30.0, 10.3, -20.2, 10.3, 20.0, 0.3, -20.2, 0.3, 20.0],
    )
}

pub fn gauss3() -> Mvn {
    Mvn::new(vec![0.0; 3], &gauss3_covariance()).expect("printed covariance is positive definite")
}

pub fn gen_gauss3(n: usize, seed: u64) -> Table {
    table("x", &gauss3().sample(&mut seeded(seed), n))
}

/// Reference parameter used to simulate the observed data.
pub const ABC_PHI_STAR: [f64; 5] = [0.7, -2.9, -1.0, -0.9, 0.6];
pub const ABC_CHUNK: usize = 1 << 15;
pub const ABC_MIN_RATE: f64 = 1e-6;
/// Proposals examined before the acceptance-rate floor is enforced.
pub const ABC_RATE_CHECK_AFTER: usize = 10_000_000;

fn abc_simulate<R: Rng + ?Sized>(rng: &mut R, phi: &[f64; 5], out: &mut [f64; 8]) {
    let s1 = phi[2] * phi[2];
    let s2 = phi[3] * phi[3];
    let rho = phi[4].tanh();
    let tail = (1.0 - rho * rho).max(0.0).sqrt();
    for j in 0..4 {
        let z1 = standard_normal(rng);
        let z2 = standard_normal(rng);
        out[2 * j] = phi[0] + s1 * z1;
        out[2 * j + 1] = phi[1] + s2 * (rho * z1 + tail * z2);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcSample {
    pub table: Table,
    pub x_obs: [f64; 8],
    pub proposals: usize,
}

impl AbcSample {
    pub fn acceptance_rate(&self) -> f64 {
        self.table.n_rows() as f64 / self.proposals as f64
    }
}

pub fn gen_abc5d(n_target: usize, eps: f64, seed: u64) -> Result<AbcSample> {
    gen_abc5d_with(n_target, eps, seed, &ABC_PHI_STAR, Exec::default())
}

/// Rejection sampler over the uniform prior on `[-3, 3]^5`. Proposals are
/// drawn in fixed-size chunks, chunk `c` from substream `(seed, c + 1)`;
/// accepted rows keep chunk order, so the result does not depend on `exec`.
pub fn gen_abc5d_with(
    n_target: usize,
    eps: f64,
    seed: u64,
    phi_star: &[f64; 5],
    exec: Exec,
) -> Result<AbcSample> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(validation(format!("epsilon must be positive, got {eps}")));
    }
    let mut obs = [0.0; 8];
    abc_simulate(&mut substream(seed, 0), phi_star, &mut obs);
    let round = 16usize;
    let mut accepted: Vec<[f64; 5]> = Vec::with_capacity(n_target);
    let mut proposals = 0usize;
    let mut chunk = 0u64;
    while accepted.len() < n_target {
        let batches = exec.map(round, |k| {
            let mut rng = substream(seed, chunk + 1 + k as u64);
            let mut x = [0.0; 8];
            let mut keep = Vec::new();
            for _ in 0..ABC_CHUNK {
                let phi: [f64; 5] = std::array::from_fn(|_| rng.random_range(-3.0..=3.0));
                abc_simulate(&mut rng, &phi, &mut x);
                let d: f64 = x.iter().zip(&obs).map(|(a, b)| (a - b).abs()).sum();
                if d < eps {
                    keep.push(phi);
                }
            }
            keep
        });
        for b in batches {
            proposals += ABC_CHUNK;
            accepted.extend(b);
            if accepted.len() >= n_target {
                break;
            }
        }
        chunk += round as u64;
        let rate = accepted.len() as f64 / proposals as f64;
        if proposals >= ABC_RATE_CHECK_AFTER && rate < ABC_MIN_RATE {
            return Err(Error::Numeric(format!(
                "ABC acceptance rate {rate:.3e} below {ABC_MIN_RATE:e} after {proposals} proposals \
                 ({} accepted, eps {eps})",
                accepted.len()
            )));
        }
    }
    accepted.truncate(n_target);
    let flat: Vec<f64> = accepted.iter().flatten().copied().collect();
    let m = Tensor2::from_vec(accepted.len(), 5, flat)?;
    Ok(AbcSample {
        table: table("phi", &m),
        x_obs: obs,
        proposals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Abc5d,
    Gmm20,
    Scurve,
    Gauss3Coverage,
    GmmModecollapse2comp,
}

impl Experiment {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "abc5d" => Ok(Self::Abc5d),
            "gmm20" => Ok(Self::Gmm20),
            "scurve" => Ok(Self::Scurve),
            "gauss3_coverage" => Ok(Self::Gauss3Coverage),
            "gmm_modecollapse_2comp" => Ok(Self::GmmModecollapse2comp),
            other => Err(validation(format!(
                "unknown experiment '{other}' (expected abc5d, gmm20, scurve, gauss3_coverage, \
                 gmm_modecollapse_2comp)"
            ))),
        }
    }

    fn default_n(self) -> usize {
        match self {
            Self::Abc5d => 3000,
            Self::Gmm20 | Self::GmmModecollapse2comp => 2000,
            Self::Scurve => 2000,
            Self::Gauss3Coverage => 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Real rows generated.
    pub n: usize,
    /// Synthetic rows drawn for evaluation; defaults to `n`.
    pub n_synth: Option<usize>,
    /// Seeds data generation; training and sampling use fixed substreams.
    pub seed: u64,
    pub losses: Vec<LossKind>,
    pub train: TrainConfig,
    pub arch: ArchConfig,
    pub abc_eps: f64,
    pub abc_phi_star: [f64; 5],
    pub mixture_delta: f64,
    pub mixture_dim: usize,
    pub mixture_weight: f64,
    pub coverage: CoverageConfig,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        let train = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        Self {
            experiment,
            n: experiment.default_n(),
            n_synth: None,
            seed,
            losses: vec![LossKind::Mpw, LossKind::Ot],
            train,
            // Dropout stays in the chain but at rate 0: masks active only in
            // training shrink the sampled tails.
            arch: ArchConfig {
                dropout: 0.0,
                ..ArchConfig::default()
            },
            abc_eps: 1.5,
            abc_phi_star: ABC_PHI_STAR,
            mixture_delta: 6.0,
            mixture_dim: 3,
            mixture_weight: 0.8,
            coverage: CoverageConfig {
                seed,
                ..CoverageConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(validation(format!(
                "experiment size {} is below 10",
                self.n
            )));
        }
        if self.n_synth.is_some_and(|s| s < 10) {
            return Err(validation("synthetic sample size is below 10"));
        }
        if self.losses.is_empty() {
            return Err(validation("no loss variants requested"));
        }
        if self.experiment == Experiment::Gauss3Coverage && self.coverage.n_sets == 0 {
            return Err(validation("coverage study needs at least one set"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub loss: LossKind,
    pub final_loss: Option<EpochLoss>,
    pub metrics: MetricReport,
    pub coverage: Option<CoverageSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub s1: (f64, f64),
    pub s2: f64,
}

impl From<CoverageResult> for CoverageSummary {
    fn from(r: CoverageResult) -> Self {
        Self { s1: r.s1, s2: r.s2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub n_real: usize,
    pub variants: Vec<VariantReport>,
}

/// Real data for an experiment plus the metric settings used to score it.
pub struct Prepared {
    pub table: Table,
    pub eval: EvalConfig,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let n = cfg.n;
    let seed = cfg.seed;
    Ok(match cfg.experiment {
        Experiment::Abc5d => Prepared {
            table: gen_abc5d_with(n, cfg.abc_eps, seed, &cfg.abc_phi_star, Exec::default())?.table,
            eval: EvalConfig {
                tv_bins: 5,
                tv_bounds: Some(TvGrid::abc5d().bounds),
                ..EvalConfig::default()
            },
        },
        Experiment::Gmm20 => Prepared {
            table: gen_gmm20(n, seed).0,
            eval: EvalConfig {
                centers: gmm20_mixture().means(),
                box_radius: 3.0,
                component_tail: Some(2.0),
                ..EvalConfig::default()
            },
        },
        Experiment::Scurve => Prepared {
            table: gen_scurve(n, seed),
            eval: EvalConfig::default(),
        },
        Experiment::Gauss3Coverage => Prepared {
            table: gen_gauss3(n, seed),
            eval: EvalConfig::default(),
        },
        Experiment::GmmModecollapse2comp => {
            let mix =
                two_component_mixture(cfg.mixture_dim, cfg.mixture_delta, 1.0, cfg.mixture_weight);
            let (m, _) = mix.sample(&mut seeded(seed), n);
            Prepared {
                table: table("x", &m),
                eval: EvalConfig {
                    centers: mix.means(),
                    box_radius: 3.0,
                    component_tail: Some(2.0),
                    ..EvalConfig::default()
                },
            }
        }
    })
}

/// Fits every column as continuous and trains one loss variant.
pub fn train_variant(
    table: &Table,
    train_cfg: &TrainConfig,
    arch: &ArchConfig,
    exec: Exec,
) -> Result<TrainedModel> {
    let names: Vec<&str> = table.names.iter().map(String::as_str).collect();
    let tr = tabular::fit(&TableSchema::continuous(&names), table)?;
    let enc = tabular::encode(&tr, table)?.matrix;
    let chain = train::default_chain(&tr, train_cfg, None, arch);
    train::fit_with(&enc, &tr, None, train_cfg, chain, exec)
}

/// Sampling seed for variant `k` of an experiment seeded `seed`.
pub fn sample_seed(seed: u64, k: usize) -> u64 {
    substream(seed, (1u64 << 32) | k as u64).random()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(cfg, Exec::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, exec: Exec) -> Result<ExperimentReport> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let real = prep.table.to_matrix()?;
    let n_synth = cfg.n_synth.unwrap_or(cfg.n);
    let variants = exec.try_map(cfg.losses.len(), |k| {
        let loss = cfg.losses[k];
        let mut tc = cfg.train.clone();
        tc.loss = loss;
        let model = train_variant(&prep.table, &tc, &cfg.arch, exec)?;
        let synth = train::sample(&model, n_synth, sample_seed(cfg.seed, k), None)?.to_matrix()?;
        let metrics = eval::evaluate_with(&real, &synth, &prep.eval, exec)?;
        let coverage = if cfg.experiment == Experiment::Gauss3Coverage {
            Some(coverage_of_model(&model, &cfg.coverage, exec)?.into())
        } else {
            None
        };
        Ok::<_, Error>(VariantReport {
            loss,
            final_loss: model.loss_trace.last().cloned(),
            metrics,
            coverage,
        })
    })?;
    Ok(ExperimentReport {
        config: cfg.clone(),
        n_real: real.rows(),
        variants,
    })
}

/// Coverage study whose replicate sets are drawn from a trained model.
pub fn coverage_of_model(
    model: &TrainedModel,
    cfg: &CoverageConfig,
    exec: Exec,
) -> Result<CoverageResult> {
    eval::coverage_study(
        |rng: &mut StreamRng, n| train::sample(model, n, rng.random(), None)?.to_matrix(),
        cfg,
        exec,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scurve_identity_and_ranges() {
        let t = gen_scurve(500, 3).to_matrix().unwrap();
        for r in t.iter_rows() {
            assert!((-1.0..=1.0).contains(&r[0]));
            assert!((0.0..=2.0).contains(&r[1]));
            assert!((-2.0..=2.0).contains(&r[2]));
            assert!((r[0] * r[0] + (r[2].abs() - 1.0).powi(2) - 1.0).abs() < 1e-12);
        }
        assert_eq!(gen_scurve(50, 3), gen_scurve(50, 3));
    }

    #[test]
    fn gauss3_cov_is_spd() {
        let ev = gauss3_covariance().symmetric_eigenvalues();
        assert!(ev.iter().all(|v| *v > 0.0));
        let c = gauss3_covariance();
        assert_eq!(c, c.transpose());
    }

    #[test]
    fn gmm20_means() {
        let mix = gmm20_mixture();
        let m = mix.means();
        assert_eq!(m[0], vec![0.0; 20]);
        assert_eq!(m[1], vec![6.0; 20]);
        assert_eq!(&m[2][..4], &[-5.0, 5.0, -5.0, 5.0]);
        let (a, la) = gen_gmm20(30, 1);
        let (b, lb) = gen_gmm20(30, 1);
        assert_eq!((a, la), (b, lb));
    }

    #[test]
    fn experiment_names() {
        assert_eq!(Experiment::parse("gmm20").unwrap(), Experiment::Gmm20);
        assert!(Experiment::parse("mnist").is_err());
        let mut cfg = ExperimentConfig::new(Experiment::Scurve, 1);
        cfg.n = 5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn abc_small_run_is_exec_independent() {
        let a = gen_abc5d_with(20, 5.0, 4, &ABC_PHI_STAR, Exec::Sequential).unwrap();
        let b = gen_abc5d_with(20, 5.0, 4, &ABC_PHI_STAR, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let t = a.table.to_matrix().unwrap();
        assert!(t.data().iter().all(|v| (-3.0..=3.0).contains(v)));
    }
}
