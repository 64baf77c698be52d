//! Distribution-quality metrics and mode-collapse diagnostics.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::autodiff::Tensor2;
use crate::error::{shape, validation, Result};
use crate::exec::Exec;
use crate::rng::{substream, StreamRng};

/// Regular grid for binned TV: one interval per dimension, split into
/// `bins_per_dim` equal cells. Values outside an interval fall into the
/// nearest edge cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvGrid {
    pub bounds: Vec<(f64, f64)>,
    pub bins_per_dim: usize,
}

impl TvGrid {
    pub fn new(bounds: Vec<(f64, f64)>, bins_per_dim: usize) -> Result<Self> {
        let g = Self {
            bounds,
            bins_per_dim,
        };
        g.validate()?;
        Ok(g)
    }

    /// `[-3, 3]^5` with 5 bins per dimension (3125 cells).
    pub fn abc5d() -> Self {
        Self {
            bounds: vec![(-3.0, 3.0); 5],
            bins_per_dim: 5,
        }
    }

    /// Per-column min/max of `x`.
    pub fn fitted(x: &Tensor2, bins_per_dim: usize) -> Result<Self> {
        if x.rows() == 0 {
            return Err(validation("cannot fit TV bounds to an empty sample"));
        }
        let bounds = (0..x.cols())
            .map(|j| {
                x.iter_rows()
                    .map(|r| r[j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .collect();
        Self::new(bounds, bins_per_dim)
    }

    pub fn n_cells(&self) -> f64 {
        (self.bins_per_dim as f64).powi(self.bounds.len() as i32)
    }

    fn validate(&self) -> Result<()> {
        if self.bins_per_dim == 0 {
            return Err(validation("bins per dimension must be at least 1"));
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(validation(format!(
                    "TV bounds for dimension {j} invalid: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    fn cell(&self, row: &[f64]) -> Vec<u32> {
        let b = self.bins_per_dim;
        row.iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| {
                let width = hi - lo;
                let k = if width > 0.0 {
                    ((v - lo) / width * b as f64).floor()
                } else {
                    0.0
                };
                // NaN maps to cell 0 through the saturating cast.
                (k.max(0.0) as usize).min(b - 1) as u32
            })
            .collect()
    }
}

fn histogram(x: &Tensor2, grid: &TvGrid) -> HashMap<Vec<u32>, usize> {
    let mut h = HashMap::new();
    for r in x.iter_rows() {
        *h.entry(grid.cell(r)).or_insert(0) += 1;
    }
    h
}

/// Half the L1 distance between the two binned empirical distributions.
pub fn tv_binned(x: &Tensor2, y: &Tensor2, grid: &TvGrid) -> Result<f64> {
    grid.validate()?;
    if x.rows() == 0 || y.rows() == 0 {
        return Err(validation("TV needs two non-empty samples"));
    }
    for m in [x, y] {
        if m.cols() != grid.bounds.len() {
            return Err(shape(format!(
                "sample has {} columns, grid has {} dimensions",
                m.cols(),
                grid.bounds.len()
            )));
        }
    }
    let hx = histogram(x, grid);
    let hy = histogram(y, grid);
    let (nx, ny) = (x.rows() as f64, y.rows() as f64);
    let mut cells: Vec<&Vec<u32>> = hx.keys().chain(hy.keys()).collect();
    cells.sort_unstable();
    cells.dedup();
    let sum: f64 = cells
        .into_iter()
        .map(|c| {
            let px = hx.get(c).copied().unwrap_or(0) as f64 / nx;
            let py = hy.get(c).copied().unwrap_or(0) as f64 / ny;
            (px - py).abs()
        })
        .sum();
    Ok((0.5 * sum).clamp(0.0, 1.0))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kernel_mean(a: &Tensor2, b: &Tensor2, inv: f64, exec: Exec) -> f64 {
    let rows = exec.map(a.rows(), |i| {
        let ai = a.row(i);
        b.iter_rows()
            .map(|bj| (-sq_dist(ai, bj) * inv).exp())
            .sum::<f64>()
    });
    rows.iter().sum::<f64>() / (a.rows() as f64 * b.rows() as f64)
}

/// Biased (V-statistic) squared MMD with kernel `exp(-|a-b|^2 / (2 s^2))`.
pub fn mmd2_gaussian(x: &Tensor2, y: &Tensor2, bandwidth: f64) -> Result<f64> {
    mmd2_gaussian_with(x, y, bandwidth, Exec::default())
}

pub fn mmd2_gaussian_with(x: &Tensor2, y: &Tensor2, bandwidth: f64, exec: Exec) -> Result<f64> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(validation("MMD needs two non-empty samples"));
    }
    if x.cols() != y.cols() {
        return Err(shape(format!(
            "samples have {} and {} columns",
            x.cols(),
            y.cols()
        )));
    }
    if bandwidth <= 0.0 || !bandwidth.is_finite() {
        return Err(validation(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let xx = kernel_mean(x, x, inv, exec);
    let yy = kernel_mean(y, y, inv, exec);
    let xy = kernel_mean(x, y, inv, exec);
    Ok(xx + yy - 2.0 * xy)
}

/// Points used for the median heuristic; larger pools are strided down.
pub const MEDIAN_POOL_CAP: usize = 2000;

/// Median pairwise Euclidean distance over the pooled sample. Falls back to
/// 1 when every pair coincides.
pub fn median_bandwidth(x: &Tensor2, y: &Tensor2) -> f64 {
    let total = x.rows() + y.rows();
    let stride = total.div_ceil(MEDIAN_POOL_CAP).max(1);
    let pool: Vec<&[f64]> = x.iter_rows().chain(y.iter_rows()).step_by(stride).collect();
    let mut d = Vec::with_capacity(pool.len() * pool.len().saturating_sub(1) / 2);
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            d.push(sq_dist(pool[i], pool[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

/// Natural log of `max(mmd2, 1e-300)`.
pub fn log_mmd(mmd2: f64) -> f64 {
    mmd2.max(1e-300).ln()
}

/// Unbiased sample covariance, `d x d` row-major.
pub fn sample_covariance(x: &Tensor2) -> Result<DMatrix<f64>> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(validation("covariance needs at least two rows"));
    }
    let mean = x.column_means();
    let mut c = DMatrix::zeros(d, d);
    for r in x.iter_rows() {
        for a in 0..d {
            let da = r[a] - mean[a];
            for b in a..d {
                c[(a, b)] += da * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = c[(a, b)] / (n - 1) as f64;
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovDiagnostics {
    /// Spectral norm of `cov(Y) - cov(X)`.
    pub cov_bias: f64,
    /// `lambda_max / lambda_min` of `cov(X)`; infinite when `lambda_min <= 0`.
    #[serde(with = "inf_marker")]
    pub condition_number: f64,
}

pub fn cov_diagnostics(x: &Tensor2, y: &Tensor2) -> Result<CovDiagnostics> {
    if x.cols() != y.cols() {
        return Err(shape(format!(
            "samples have {} and {} columns",
            x.cols(),
            y.cols()
        )));
    }
    let d = x.cols();
    if x.rows() <= d || y.rows() <= d {
        return Err(validation(format!(
            "covariance diagnostics need more rows than the {d} columns"
        )));
    }
    let cx = sample_covariance(x)?;
    let cy = sample_covariance(y)?;
    let diff = &cy - &cx;
    let cov_bias = diff
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let ev = cx.symmetric_eigenvalues();
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let condition_number = if lo <= 0.0 { f64::INFINITY } else { hi / lo };
    Ok(CovDiagnostics {
        cov_bias,
        condition_number,
    })
}

/// Fraction of samples inside the L-infinity box of radius `r` around each
/// center.
pub fn mode_weights(samples: &Tensor2, centers: &[Vec<f64>], r: f64) -> Result<Vec<f64>> {
    if r.is_nan() || r <= 0.0 {
        return Err(validation(format!("box radius must be positive, got {r}")));
    }
    check_centers(samples, centers)?;
    let n = samples.rows().max(1) as f64;
    Ok(centers
        .iter()
        .map(|c| samples.iter_rows().filter(|x| linf(x, c) <= r).count() as f64 / n)
        .collect())
}

fn check_centers(samples: &Tensor2, centers: &[Vec<f64>]) -> Result<()> {
    if let Some(c) = centers.iter().find(|c| c.len() != samples.cols()) {
        return Err(shape(format!(
            "center has {} coordinates, samples have {}",
            c.len(),
            samples.cols()
        )));
    }
    Ok(())
}

fn linf(x: &[f64], c: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

/// Fraction of samples with Euclidean norm at least `r`.
pub fn tail_mass(samples: &Tensor2, r: f64) -> Result<f64> {
    if r.is_nan() || r < 0.0 {
        return Err(validation(format!(
            "tail radius must be nonnegative, got {r}"
        )));
    }
    if samples.rows() == 0 {
        return Ok(0.0);
    }
    let hits = samples
        .iter_rows()
        .filter(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt() >= r)
        .count();
    Ok(hits as f64 / samples.rows() as f64)
}

/// Per-component tail: each sample is attributed to its nearest center
/// (Euclidean) and counted as tail when its L-infinity distance to that
/// center exceeds `threshold`. Entry `k` is the tail fraction among the
/// samples attributed to center `k` (0 when none are).
pub fn component_tail_mass(
    samples: &Tensor2,
    centers: &[Vec<f64>],
    threshold: f64,
) -> Result<Vec<f64>> {
    check_centers(samples, centers)?;
    if centers.is_empty() {
        return Ok(Vec::new());
    }
    let mut members = vec![0usize; centers.len()];
    let mut tail = vec![0usize; centers.len()];
    for x in samples.iter_rows() {
        let k = (0..centers.len())
            .min_by(|&a, &b| sq_dist(x, &centers[a]).total_cmp(&sq_dist(x, &centers[b])))
            .unwrap_or(0);
        members[k] += 1;
        if linf(x, &centers[k]) > threshold {
            tail[k] += 1;
        }
    }
    Ok(members
        .iter()
        .zip(&tail)
        .map(|(&m, &t)| if m == 0 { 0.0 } else { t as f64 / m as f64 })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    /// 2.5% and 97.5% percentiles of the replicate means.
    pub s1: (f64, f64),
    /// Fraction of replicate t-intervals containing the true mean.
    pub s2: f64,
    pub means: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageConfig {
    pub n_per_set: usize,
    pub n_sets: usize,
    pub seed: u64,
    /// Column analysed (0-based).
    pub column: usize,
    pub truth: f64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            n_per_set: 300,
            n_sets: 1000,
            seed: 0,
            column: 0,
            truth: 0.0,
        }
    }
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Replicate study: `sampler(rng, n)` draws one synthetic set of `n` rows;
/// replicate `k` receives the substream `(seed, k)`.
pub fn coverage_study<F>(sampler: F, cfg: &CoverageConfig, exec: Exec) -> Result<CoverageResult>
where
    F: Fn(&mut StreamRng, usize) -> Result<Tensor2> + Sync,
{
    if cfg.n_per_set < 2 || cfg.n_sets == 0 {
        return Err(validation(
            "coverage study needs at least 2 rows per set and 1 set",
        ));
    }
    let n = cfg.n_per_set;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| validation(format!("t distribution: {e}")))?
        .inverse_cdf(0.975);
    let stats = exec.try_map(cfg.n_sets, |k| {
        let mut rng = substream(cfg.seed, k as u64);
        let set = sampler(&mut rng, n)?;
        if set.rows() != n || set.cols() <= cfg.column {
            return Err(shape(format!(
                "sampler returned {}x{}, expected {n} rows with column {}",
                set.rows(),
                set.cols(),
                cfg.column
            )));
        }
        let col = set.column(cfg.column);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        let covers = if sd == 0.0 {
            mean == cfg.truth
        } else {
            (mean - cfg.truth).abs() <= t * sd / (n as f64).sqrt()
        };
        Ok((mean, covers))
    })?;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let mut sorted = means.clone();
    sorted.sort_by(f64::total_cmp);
    let s2 = stats.iter().filter(|s| s.1).count() as f64 / cfg.n_sets as f64;
    Ok(CoverageResult {
        s1: (percentile(&sorted, 0.025), percentile(&sorted, 0.975)),
        s2,
        means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tv_bins: usize,
    /// TV bounds; `None` uses the real sample's per-column range.
    pub tv_bounds: Option<Vec<(f64, f64)>>,
    /// MMD bandwidth; `None` uses the median heuristic.
    pub mmd_bandwidth: Option<f64>,
    pub centers: Vec<Vec<f64>>,
    pub box_radius: f64,
    pub tail_radius: Option<f64>,
    /// L-infinity threshold for [`component_tail_mass`]; needs `centers`.
    pub component_tail: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tv_bins: 5,
            tv_bounds: None,
            mmd_bandwidth: None,
            centers: Vec::new(),
            box_radius: 3.0,
            tail_radius: None,
            component_tail: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tv_binned: f64,
    pub mmd2: f64,
    pub log_mmd: f64,
    pub mmd_bandwidth: f64,
    pub cov_bias: Option<f64>,
    #[serde(with = "opt_inf_marker")]
    pub condition_number: Option<f64>,
    /// Condition number of the synthetic sample's covariance.
    #[serde(with = "opt_inf_marker")]
    pub synth_condition_number: Option<f64>,
    pub mode_weights: Option<Vec<f64>>,
    pub real_mode_weights: Option<Vec<f64>>,
    pub tail_mass: Option<f64>,
    pub component_tail: Option<Vec<f64>>,
    pub real_component_tail: Option<Vec<f64>>,
}

/// Runs the metric suite comparing `synth` against `real`.
pub fn evaluate(real: &Tensor2, synth: &Tensor2, cfg: &EvalConfig) -> Result<MetricReport> {
    evaluate_with(real, synth, cfg, Exec::default())
}

pub fn evaluate_with(
    real: &Tensor2,
    synth: &Tensor2,
    cfg: &EvalConfig,
    exec: Exec,
) -> Result<MetricReport> {
    if real.cols() != synth.cols() {
        return Err(shape(format!(
            "real has {} columns, synthetic {}",
            real.cols(),
            synth.cols()
        )));
    }
    let grid = match &cfg.tv_bounds {
        Some(b) => TvGrid::new(b.clone(), cfg.tv_bins)?,
        None => TvGrid::fitted(real, cfg.tv_bins)?,
    };
    let tv = tv_binned(real, synth, &grid)?;
    let bw = cfg
        .mmd_bandwidth
        .unwrap_or_else(|| median_bandwidth(real, synth));
    let mmd2 = mmd2_gaussian_with(real, synth, bw, exec)?;
    let d = real.cols();
    let (cov_bias, condition_number, synth_condition_number) =
        if real.rows() > d && synth.rows() > d {
            let c = cov_diagnostics(real, synth)?;
            let s = cov_diagnostics(synth, real)?;
            (
                Some(c.cov_bias),
                Some(c.condition_number),
                Some(s.condition_number),
            )
        } else {
            (None, None, None)
        };
    let (mode_w, real_w) = if cfg.centers.is_empty() {
        (None, None)
    } else {
        (
            Some(mode_weights(synth, &cfg.centers, cfg.box_radius)?),
            Some(mode_weights(real, &cfg.centers, cfg.box_radius)?),
        )
    };
    let tail = cfg.tail_radius.map(|r| tail_mass(synth, r)).transpose()?;
    let (ct, rct) = match cfg.component_tail {
        Some(th) if !cfg.centers.is_empty() => (
            Some(component_tail_mass(synth, &cfg.centers, th)?),
            Some(component_tail_mass(real, &cfg.centers, th)?),
        ),
        _ => (None, None),
    };
    Ok(MetricReport {
        tv_binned: tv,
        mmd2,
        log_mmd: log_mmd(mmd2),
        mmd_bandwidth: bw,
        cov_bias,
        condition_number,
        synth_condition_number,
        mode_weights: mode_w,
        real_mode_weights: real_w,
        tail_mass: tail,
        component_tail: ct,
        real_component_tail: rct,
    })
}

/// Writes infinite values as the string `"inf"` so reports stay valid JSON.
mod inf_marker {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("unexpected marker '{s}'"))),
        }
    }
}

mod opt_inf_marker {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::inf_marker")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}
