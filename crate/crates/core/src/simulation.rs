//! Fabricated-data simulation, null calibration and numerical oracles.
//!
//! Random streams: every run is driven by `ChaCha8Rng::seed_from_u64(seed)`
//! with an explicit stream id. Single datasets use stream 0; replicate `r`
//! of a calibration uses stream `r + 1`. Replicates are therefore
//! independent of scheduling and a parallel run reproduces a serial one bit
//! for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::density::logdet_unchecked;
use crate::error::{Error, Result};
use crate::evidence::{log_chi_unchecked, pergroup_evidence, pooled_evidence, Extended};
use crate::study::{per_cell_count, StudySummary};

pub const GENERATOR_ID: &str = "chacha8";

/// Upper end of the correlation range scanned by the oracles.
pub const ORACLE_RHO_MAX: f64 = 1.0 - 1e-6;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrueParams {
    pub mu: Vec<f64>,
    pub sigma2: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub stream: u64,
    pub generator: &'static str,
}

/// Raw observations `X[i][j]`, cell `i`, subject `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawDataset {
    pub values: Vec<Vec<f64>>,
    pub true_params: TrueParams,
    pub provenance: Provenance,
}

impl RawDataset {
    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn per_cell(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn cell_means(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect()
    }

    /// `X - mu`, the realized measurement errors.
    pub fn errors(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .zip(&self.true_params.mu)
            .map(|(row, m)| row.iter().map(|x| x - m).collect())
            .collect()
    }
}

/// The latent draws of the copying model.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyingDraw {
    /// `deltas[i][j]`: error of cell `i`, subject `j` is the shared value.
    pub deltas: Vec<Vec<bool>>,
    pub shared: Vec<f64>,
    pub idiosyncratic: Vec<Vec<f64>>,
}

impl CopyingDraw {
    pub fn errors(&self) -> Vec<Vec<f64>> {
        self.deltas
            .iter()
            .zip(&self.idiosyncratic)
            .map(|(d, v)| {
                d.iter()
                    .zip(v)
                    .zip(&self.shared)
                    .map(|((&copy, &own), &u)| if copy { u } else { own })
                    .collect()
            })
            .collect()
    }
}

fn check_sim_params(cells: usize, n: usize, sigma2: f64, rho: f64) -> Result<()> {
    if cells == 0 {
        return Err(Error::Domain("need at least one cell".into()));
    }
    if n < 2 {
        return Err(Error::Domain(format!(
            "raw data need at least 2 observations per cell, got {n}"
        )));
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::Domain(format!("sigma2 {sigma2} must be positive")));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!("correlation {rho} outside [0, 1)")));
    }
    Ok(())
}

/// Draws `U`, `Delta`, `V` for `cells × n` errors. Column-major order: for
/// each subject `j`, first `U_j`, then `(Delta_ij, V_ij)` for every cell.
pub fn draw_copying<R: Rng + ?Sized>(
    rng: &mut R,
    cells: usize,
    n: usize,
    sigma2: f64,
    rho: f64,
) -> CopyingDraw {
    let normal = Normal::new(0.0, sigma2.sqrt()).expect("positive variance");
    let copy_prob = rho.sqrt();
    let mut deltas = vec![vec![false; n]; cells];
    let mut idio = vec![vec![0.0; n]; cells];
    let mut shared = vec![0.0; n];
    for j in 0..n {
        shared[j] = normal.sample(rng);
        for i in 0..cells {
            deltas[i][j] = rng.random_bool(copy_prob);
            idio[i][j] = normal.sample(rng);
        }
    }
    CopyingDraw {
        deltas,
        shared,
        idiosyncratic: idio,
    }
}

/// Raw data under the copying model: `X_ij = mu_i + eps_ij`, where each error
/// is, with probability `sqrt(rho)`, the subject's shared value `U_j`.
pub fn fabricate(
    cells: usize,
    n: usize,
    mu: &[f64],
    sigma2: f64,
    rho: f64,
    seed: u64,
) -> Result<RawDataset> {
    fabricate_with_draw(cells, n, mu, sigma2, rho, seed).map(|(d, _)| d)
}

pub fn fabricate_with_draw(
    cells: usize,
    n: usize,
    mu: &[f64],
    sigma2: f64,
    rho: f64,
    seed: u64,
) -> Result<(RawDataset, CopyingDraw)> {
    check_sim_params(cells, n, sigma2, rho)?;
    if mu.len() != cells {
        return Err(Error::Domain(format!(
            "{} cell means for {cells} cells",
            mu.len()
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let draw = draw_copying(&mut rng, cells, n, sigma2, rho);
    let values = draw
        .errors()
        .into_iter()
        .zip(mu)
        .map(|(row, m)| row.into_iter().map(|e| m + e).collect())
        .collect();
    Ok((
        RawDataset {
            values,
            true_params: TrueParams {
                mu: mu.to_vec(),
                sigma2,
                rho,
            },
            provenance: Provenance {
                seed,
                stream: 0,
                generator: GENERATOR_ID,
            },
        },
        draw,
    ))
}

/// Mean square error `(1/(I(n-1))) sum_i sum_j (X_ij - X_i.)^2`.
pub fn mse_estimate(data: &RawDataset) -> Result<f64> {
    mse_of(&data.values)
}

pub fn mse_of(values: &[Vec<f64>]) -> Result<f64> {
    let n = values.first().map_or(0, Vec::len);
    if values.is_empty() || n < 2 || values.iter().any(|r| r.len() != n) {
        return Err(Error::Domain("need a rectangular table with n >= 2".into()));
    }
    let ss: f64 = values
        .iter()
        .map(|row| {
            let m = row.iter().sum::<f64>() / n as f64;
            row.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        })
        .sum();
    Ok(ss / (values.len() * (n - 1)) as f64)
}

/// Mean pairwise correlation between cells, with a batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub batches: usize,
}

fn mean_pairwise_corr(rows: &[Vec<f64>], range: std::ops::Range<usize>) -> f64 {
    let len = range.len() as f64;
    let stats: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| {
            let m = r[range.clone()].iter().sum::<f64>() / len;
            let v = r[range.clone()]
                .iter()
                .map(|x| (x - m).powi(2))
                .sum::<f64>()
                / len;
            (m, v.sqrt())
        })
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..rows.len() {
        for b in (a + 1)..rows.len() {
            let cov = range
                .clone()
                .map(|j| (rows[a][j] - stats[a].0) * (rows[b][j] - stats[b].0))
                .sum::<f64>()
                / len;
            total += cov / (stats[a].1 * stats[b].1);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Empirical cross-cell correlation of the errors `X - mu`.
///
/// The standard error comes from `batches` equal column blocks.
pub fn error_correlation(data: &RawDataset, batches: usize) -> Result<CorrelationEstimate> {
    let rows = data.errors();
    let n = data.per_cell();
    if rows.len() < 2 {
        return Err(Error::Domain("correlation needs at least two cells".into()));
    }
    let batches = batches.clamp(2, n / 2);
    let size = n / batches;
    if size < 2 {
        return Err(Error::Domain(
            "too few subjects for batch standard errors".into(),
        ));
    }
    let mean = mean_pairwise_corr(&rows, 0..n);
    let per: Vec<f64> = (0..batches)
        .map(|b| mean_pairwise_corr(&rows, b * size..(b + 1) * size))
        .collect();
    let bm = per.iter().sum::<f64>() / batches as f64;
    let var = per.iter().map(|c| (c - bm).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok(CorrelationEstimate {
        mean,
        std_error: (var / batches as f64).sqrt(),
        batches,
    })
}

/// Sample of equicorrelated standard normals with its mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EquicorrSample {
    pub z: Vec<f64>,
    pub zbar: f64,
    pub s2: f64,
}

impl EquicorrSample {
    pub fn from_values(z: Vec<f64>) -> Result<Self> {
        let d = z.len();
        if d < 2 {
            return Err(Error::Domain("need at least two values".into()));
        }
        let zbar = z.iter().sum::<f64>() / d as f64;
        let s2 = z.iter().map(|x| (x - zbar).powi(2)).sum::<f64>() / (d - 1) as f64;
        Ok(Self { z, zbar, s2 })
    }
}

/// `Z_i = sqrt(rho) W_0 + sqrt(1 - rho) W_i` with i.i.d. standard normal `W`.
pub fn draw_equicorr_sample<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    rho: f64,
) -> Result<EquicorrSample> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!("correlation {rho} outside [0, 1)")));
    }
    let common: f64 = StandardNormal.sample(rng);
    let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
    let z = (0..d)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            a * common + b * w
        })
        .collect();
    EquicorrSample::from_values(z)
}

/// `sqrt(d (1-rho) / (1 + (d-1) rho)) * zbar / s`, t-distributed with `d-1`
/// degrees of freedom for equicorrelated normal data.
pub fn dependent_t(sample: &EquicorrSample, rho: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!("correlation {rho} outside [0, 1)")));
    }
    if sample.s2 <= 0.0 {
        return Err(Error::Domain("sample variance is zero".into()));
    }
    let d = sample.z.len() as f64;
    Ok((d * (1.0 - rho) / (1.0 + (d - 1.0) * rho)).sqrt() * sample.zbar / sample.s2.sqrt())
}

/// Outcome of a brute-force search over `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupOracle {
    pub rho_star: f64,
    pub log_value: f64,
    pub value: Extended,
    /// The objective was still increasing at the top of the scanned range.
    pub diverged: bool,
}

/// Maximizes `f` over `[0, ORACLE_RHO_MAX]`: a grid uniform in `rho` merged
/// with a grid geometric in `1 - rho`, then golden-section refinement on the
/// bracket around the best grid point.
fn sup_over_rho<F: Fn(f64) -> f64>(f: F, resolution: usize) -> (f64, f64, bool) {
    let mut grid: Vec<f64> = (0..resolution)
        .map(|k| ORACLE_RHO_MAX * k as f64 / (resolution - 1) as f64)
        .collect();
    let lmin = (1.0 - ORACLE_RHO_MAX).ln();
    grid.extend((0..resolution).map(|k| 1.0 - (lmin * k as f64 / (resolution - 1) as f64).exp()));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let vals: Vec<f64> = grid.iter().map(|&r| f(r)).collect();
    let (best, _) =
        vals.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
        );
    let last = grid.len() - 1;
    let at_top = best == last;
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(last)];
    let (r, v) = golden_max(&f, lo, hi);
    if v > vals[best] {
        (r, v, at_top)
    } else {
        (grid[best], vals[best], at_top)
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn golden_min<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let (x, v) = golden_max(&|t| -f(t), a, b);
    (x, -v)
}

/// Brute-force supremum of `chi` over `rho`, independent of the closed form.
pub fn sup_chi_oracle(
    ss: f64,
    dim: usize,
    n: f64,
    sigma2: f64,
    resolution: usize,
) -> Result<SupOracle> {
    if resolution < 1000 {
        return Err(Error::Domain(format!(
            "oracle resolution {resolution} below 1000"
        )));
    }
    if dim < 2 || !(ss >= 0.0 && n > 0.0 && sigma2 > 0.0) {
        return Err(Error::Domain("invalid oracle inputs".into()));
    }
    let (rho, log_value, at_top) =
        sup_over_rho(|r| log_chi_unchecked(r, ss, dim, n, sigma2), resolution);
    let diverged = ss == 0.0 || at_top;
    Ok(SupOracle {
        rho_star: rho,
        log_value,
        value: if ss == 0.0 {
            Extended(f64::INFINITY)
        } else {
            Extended(log_value.exp())
        },
        diverged,
    })
}

/// `sup_rho log[f(x; nu, rho) / f(x; nu, 0)]` for one block with fixed `nu`.
fn block_log_ratio_sup(
    devs_sum: f64,
    devs_sq: f64,
    dim: usize,
    n: f64,
    sigma2: f64,
    resolution: usize,
) -> f64 {
    let k = dim as f64;
    let objective = |rho: f64| {
        let quad = (devs_sq - rho / (1.0 + (k - 1.0) * rho) * devs_sum * devs_sum) / (1.0 - rho);
        -0.5 * logdet_unchecked(dim, rho) - n / (2.0 * sigma2) * (quad - devs_sq)
    };
    sup_over_rho(objective, resolution).1
}

/// Evidence with the nuisance means minimized out after maximizing over the
/// per-group correlations: `inf_nu sup_rho f(nu, rho) / f(nu, 0)`.
///
/// Coordinate descent over the group means, starting at the sample group
/// means, with a golden-section line search per coordinate.
pub fn v_tilde(means: &[f64], groups: &[Vec<usize>], n: f64, sigma2: f64, tol: f64) -> Result<f64> {
    const RESOLUTION: usize = 1000;
    const MAX_SWEEPS: usize = 50;
    let blocks: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| g.iter().map(|&i| means[i]).collect())
        .collect();
    if blocks.iter().any(|b| b.len() < 2) {
        return Err(Error::Domain("every group needs at least two cells".into()));
    }
    let group_value = |b: &[f64], nu: f64| {
        let sum: f64 = b.iter().map(|x| x - nu).sum();
        let sq: f64 = b.iter().map(|x| (x - nu).powi(2)).sum();
        block_log_ratio_sup(sum, sq, b.len(), n, sigma2, RESOLUTION)
    };
    let mut nu: Vec<f64> = blocks
        .iter()
        .map(|b| b.iter().sum::<f64>() / b.len() as f64)
        .collect();
    let mut parts: Vec<f64> = blocks
        .iter()
        .zip(&nu)
        .map(|(b, &m)| group_value(b, m))
        .collect();
    let mut total: f64 = parts.iter().sum();
    for _sweep in 0..MAX_SWEEPS {
        for (k, b) in blocks.iter().enumerate() {
            let lo = b.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w = (hi - lo).max(1e-9);
            let (x, v) = golden_min(&|t| group_value(b, t), nu[k] - w, nu[k] + w);
            if v < parts[k] {
                nu[k] = x;
                parts[k] = v;
            }
        }
        let new_total: f64 = parts.iter().sum();
        let change = (total - new_total).abs();
        total = new_total;
        if change <= tol * (1.0 + total.abs()) {
            return Ok(total.exp());
        }
    }
    Err(Error::Convergence(format!(
        "coordinate descent did not settle in {MAX_SWEEPS} sweeps (log value {total}, nu {nu:?})"
    )))
}

/// [`v_tilde`] for a study at its per-cell count.
pub fn v_tilde_oracle(study: &StudySummary, sigma2: f64, tol: f64) -> Result<f64> {
    v_tilde(
        &study.table.means(),
        &study.group_indices(),
        per_cell_count(&study.table),
        sigma2,
        tol,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    /// Error variance of the simulated raw data.
    pub sigma2: f64,
    pub reps: usize,
    pub seed: u64,
    /// Correlation of the simulated errors; 0 gives the null distribution.
    pub rho: f64,
    /// Values `v` for which `P(V > v)` is reported.
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exceedance {
    pub threshold: f64,
    pub probability: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalDistribution {
    pub quantiles: Vec<(f64, Extended)>,
    pub p_at_least_one: f64,
    pub p_above_one: f64,
    pub exceedances: Vec<Exceedance>,
    pub mean_log_v: f64,
    pub infinite_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub reps: usize,
    pub seed: u64,
    pub generator: &'static str,
    pub rho: f64,
    pub sigma2: f64,
    pub n_per_cell: usize,
    pub pooled: EmpiricalDistribution,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_group: Option<EmpiricalDistribution>,
    pub warnings: Vec<String>,
}

const QUANTILE_LEVELS: [f64; 6] = [0.5, 0.75, 0.9, 0.95, 0.99, 0.999];

fn summarize(values: &[f64], thresholds: &[f64]) -> EmpiricalDistribution {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let len = sorted.len() as f64;
    let quantiles = QUANTILE_LEVELS
        .iter()
        .map(|&p| {
            let idx = ((p * len).ceil() as usize).clamp(1, sorted.len()) - 1;
            (p, Extended(sorted[idx]))
        })
        .collect();
    let frac =
        |pred: &dyn Fn(f64) -> bool| values.iter().filter(|&&v| pred(v)).count() as f64 / len;
    let exceedances = thresholds
        .iter()
        .map(|&t| {
            let p = frac(&|v| v > t);
            Exceedance {
                threshold: t,
                probability: p,
                std_error: (p * (1.0 - p) / len).sqrt(),
            }
        })
        .collect();
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    EmpiricalDistribution {
        quantiles,
        p_at_least_one: frac(&|v| v >= 1.0),
        p_above_one: frac(&|v| v > 1.0),
        exceedances,
        mean_log_v: finite.iter().map(|v| v.ln()).sum::<f64>() / finite.len().max(1) as f64,
        infinite_count: values.len() - finite.len(),
    }
}

/// Distribution of the evidential value for data simulated from the study's
/// design: raw data with cell means equal to the template's group means,
/// errors from the copying model, variance re-estimated by the MSE.
pub fn null_calibration(
    template: &StudySummary,
    config: &CalibrationConfig,
) -> Result<CalibrationReport> {
    if config.reps == 0 {
        return Err(Error::Domain("at least one replicate is required".into()));
    }
    let n_per_cell = (per_cell_count(&template.table).round() as usize).max(2);
    check_sim_params(
        template.table.cells().len(),
        n_per_cell,
        config.sigma2,
        config.rho,
    )?;
    let groups = template.group_indices();
    let means = template.table.means();
    let mut mu = vec![0.0; means.len()];
    for g in &groups {
        let m = g.iter().map(|&i| means[i]).sum::<f64>() / g.len() as f64;
        for &i in g {
            mu[i] = m;
        }
    }
    let per_group_ok = groups.iter().all(|g| g.len() >= 2);
    let mut warnings = Vec::new();
    if config.reps < 1000 {
        warnings.push(format!(
            "only {} replicate(s); tail probabilities are unreliable below 1000",
            config.reps
        ));
    }
    if !per_group_ok {
        warnings.push("grouping has singleton groups; per-group model skipped".into());
    }
    let cells = mu.len();
    let results: Vec<Result<(f64, Option<f64>)>> = (0..config.reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(config.seed, r + 1);
            let errors =
                draw_copying(&mut rng, cells, n_per_cell, config.sigma2, config.rho).errors();
            let values: Vec<Vec<f64>> = errors
                .into_iter()
                .zip(&mu)
                .map(|(row, m)| row.into_iter().map(|e| m + e).collect())
                .collect();
            let sigma2_hat = mse_of(&values)?;
            let cell_means: Vec<f64> = values
                .iter()
                .map(|row| row.iter().sum::<f64>() / n_per_cell as f64)
                .collect();
            let n = n_per_cell as f64;
            let pooled = pooled_evidence(&cell_means, &groups, n, sigma2_hat, String::new())?;
            let per_group = if per_group_ok {
                Some(
                    pergroup_evidence(&cell_means, &groups, n, sigma2_hat, String::new())?
                        .v
                        .value(),
                )
            } else {
                None
            };
            Ok((pooled.v.value(), per_group))
        })
        .collect();
    let results: Vec<(f64, Option<f64>)> = results.into_iter().collect::<Result<_>>()?;
    let pooled: Vec<f64> = results.iter().map(|r| r.0).collect();
    let per_group: Option<Vec<f64>> = results.iter().map(|r| r.1).collect();
    Ok(CalibrationReport {
        reps: config.reps,
        seed: config.seed,
        generator: GENERATOR_ID,
        rho: config.rho,
        sigma2: config.sigma2,
        n_per_cell,
        pooled: summarize(&pooled, &config.thresholds),
        per_group: per_group.map(|v| summarize(&v, &config.thresholds)),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_zero_never_copies() {
        let (data, draw) = fabricate_with_draw(3, 50, &[0.0, 1.0, 2.0], 1.0, 0.0, 7).unwrap();
        assert!(draw.deltas.iter().flatten().all(|&d| !d));
        assert_eq!(data.errors().len(), 3);
        for (row, v) in data.errors().iter().zip(&draw.idiosyncratic) {
            for (a, b) in row.iter().zip(v) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fabricate_is_deterministic() {
        let a = fabricate(4, 20, &[0.0; 4], 2.0, 0.3, 99).unwrap();
        let b = fabricate(4, 20, &[0.0; 4], 2.0, 0.3, 99).unwrap();
        assert_eq!(a, b);
        let c = fabricate(4, 20, &[0.0; 4], 2.0, 0.3, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fabricate_domain_errors() {
        assert!(fabricate(2, 10, &[0.0; 2], 1.0, 1.0, 0).is_err());
        assert!(fabricate(2, 10, &[0.0; 2], 1.0, -0.1, 0).is_err());
        assert!(fabricate(2, 1, &[0.0; 2], 1.0, 0.1, 0).is_err());
        assert!(fabricate(2, 10, &[0.0; 3], 1.0, 0.1, 0).is_err());
    }

    #[test]
    fn mse_of_constant_data_is_zero() {
        assert_eq!(mse_of(&[vec![3.0; 5], vec![1.0; 5]]).unwrap(), 0.0);
        assert!(mse_of(&[vec![1.0]]).is_err());
    }

    #[test]
    fn mse_single_cell_is_sample_variance() {
        let row = vec![1.0, 2.0, 4.0, 7.0];
        let m = 3.5;
        let want = row.iter().map(|x: &f64| (x - m).powi(2)).sum::<f64>() / 3.0;
        assert!((mse_of(&[row]).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn dependent_t_reduces_to_classical() {
        let s = EquicorrSample::from_values(vec![0.5, 1.5, -0.25, 2.0]).unwrap();
        let classical = s.zbar / (s.s2 / 4.0).sqrt();
        assert!((dependent_t(&s, 0.0).unwrap() - classical).abs() < 1e-14);
        let flat = EquicorrSample::from_values(vec![1.0, 1.0]).unwrap();
        assert!(dependent_t(&flat, 0.2).is_err());
    }

    #[test]
    fn oracle_requires_resolution() {
        assert!(sup_chi_oracle(0.1, 4, 10.0, 1.0, 999).is_err());
    }

    #[test]
    fn oracle_flags_zero_scatter() {
        let o = sup_chi_oracle(0.0, 4, 10.0, 1.0, 1000).unwrap();
        assert!(o.diverged);
        assert!(o.value.is_infinite());
    }

    #[test]
    fn oracle_large_scatter_stays_at_zero() {
        // S = 10 * 2 / (4 * 1) = 5, far above the threshold
        let o = sup_chi_oracle(2.0, 4, 10.0, 1.0, 1000).unwrap();
        assert_eq!(o.rho_star, 0.0);
        assert_eq!(o.value.value(), 1.0);
        assert!(!o.diverged);
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, v) = golden_max(&|t: f64| -(t - 0.3).powi(2), 0.0, 1.0);
        assert!((x - 0.3).abs() < 1e-7);
        assert!(v.abs() < 1e-14);
    }
}
