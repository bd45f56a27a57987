//! Evidential value for fabrication under the equicorrelation models.
//!
//! With the group means plugged in for the nuisance means, the likelihood
//! ratio of correlated versus independent errors reduces to
//!
//! ```text
//! chi(rho) = [(1 + (I-1) rho) (1-rho)^(I-1)]^(-1/2) * exp(-n rho SS / (2 sigma^2 (1-rho)))
//! ```
//!
//! where `SS` is the within-group sum of squares. Its supremum over `rho` has
//! a closed form in terms of `S = n SS / (I sigma^2)`: it is 1 when `S` is at
//! or above `(sqrt(I)-1)/(sqrt(I)+1)`, and `max(chi(rho_hat), 1)` otherwise.

use serde::{Serialize, Serializer};

use crate::density::{logdet_unchecked, Correlation};
use crate::error::{Error, Result};
use crate::study::{per_cell_count, CellTable, Grouping, StudySummary};

/// `log V` above this is reported as infinity.
pub const LOG_V_OVERFLOW: f64 = 700.0;

/// Discriminants in `[-DISCRIMINANT_SLACK, 0)` are treated as zero.
pub const DISCRIMINANT_SLACK: f64 = 1e-12;

/// A nonnegative real that may be `+inf`; serialized as the string
/// `"infinity"` in that case.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Extended(pub f64);

impl Extended {
    pub fn from_log(log: f64) -> Self {
        if log > LOG_V_OVERFLOW {
            Extended(f64::INFINITY)
        } else {
            Extended(log.exp())
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl Serialize for Extended {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("infinity")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl std::fmt::Display for Extended {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_infinite() {
            f.write_str("infinity")
        } else {
            write!(f, "{:.4}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    /// One correlation shared by all cells.
    Pooled,
    /// One correlation per group, independent groups.
    PerGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputsEcho {
    pub sigma2: f64,
    pub n: f64,
    pub grouping_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvidenceReport {
    pub model: Model,
    pub s_values: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Maximizing correlation; 0 where the supremum is attained at 0.
    pub rho_hats: Vec<f64>,
    pub chi_values: Vec<Extended>,
    pub log_v: f64,
    pub v: Extended,
    /// Zero within-group scatter: the likelihood ratio is unbounded.
    pub degenerate: Vec<bool>,
    /// The correlation estimate was within 1e-12 of one and got clamped.
    pub rho_clamped: Vec<bool>,
    pub inputs_echo: InputsEcho,
}

/// Mean of the cell means of every group.
pub fn group_means(table: &CellTable, grouping: &Grouping) -> Result<Vec<f64>> {
    let means = table.means();
    Ok(table
        .group_indices(grouping)?
        .iter()
        .map(|g| mean_of(&means, g))
        .collect())
}

fn mean_of(values: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
}

fn group_ss(values: &[f64], idx: &[usize]) -> f64 {
    let m = mean_of(values, idx);
    idx.iter().map(|&i| (values[i] - m).powi(2)).sum()
}

/// Within-group sum of squared deviations from the group means.
pub fn within_group_ss(table: &CellTable, grouping: &Grouping) -> Result<f64> {
    let means = table.means();
    Ok(table
        .group_indices(grouping)?
        .iter()
        .map(|g| group_ss(&means, g))
        .sum())
}

/// `S = n SS / (dim sigma^2)`.
pub fn s_statistic(ss: f64, dim: usize, n: f64, sigma2: f64) -> Result<f64> {
    check_common(ss, dim, n, sigma2)?;
    Ok(n * ss / (dim as f64 * sigma2))
}

fn check_common(ss: f64, dim: usize, n: f64, sigma2: f64) -> Result<()> {
    if !(ss.is_finite() && ss >= 0.0) {
        return Err(Error::Domain(format!(
            "sum of squares {ss} must be nonnegative"
        )));
    }
    if dim == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::Domain(format!(
            "per-cell count {n} must be positive"
        )));
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::Domain(format!("sigma2 {sigma2} must be positive")));
    }
    Ok(())
}

/// `(sqrt(dim) - 1) / (sqrt(dim) + 1)`: at or above it the evidence is 1.
pub fn s_threshold(dim: usize) -> f64 {
    let r = (dim as f64).sqrt();
    (r - 1.0) / (r + 1.0)
}

/// Maximizing correlation, or `None` when `s` is at or above the threshold.
pub fn rho_hat(s: f64, dim: usize) -> Result<Option<f64>> {
    if dim < 2 {
        return Err(Error::Domain(
            "correlation is undefined for fewer than two cells".into(),
        ));
    }
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::Domain(format!("S = {s} must be nonnegative")));
    }
    if s >= s_threshold(dim) {
        return Ok(None);
    }
    let one_minus = 1.0 - s;
    let mut disc = 1.0 - 4.0 * s / ((dim - 1) as f64 * one_minus * one_minus);
    if disc < 0.0 {
        if disc >= -DISCRIMINANT_SLACK {
            disc = 0.0;
        } else {
            return Err(Error::Domain(format!(
                "negative discriminant {disc} below the threshold"
            )));
        }
    }
    Ok(Some(0.5 * one_minus * (1.0 + disc.sqrt())))
}

/// `log chi(rho)`.
pub fn log_chi(rho: f64, ss: f64, dim: usize, n: f64, sigma2: f64) -> Result<f64> {
    check_common(ss, dim, n, sigma2)?;
    let rho = Correlation::new(rho)?.value();
    Ok(log_chi_unchecked(rho, ss, dim, n, sigma2))
}

pub(crate) fn log_chi_unchecked(rho: f64, ss: f64, dim: usize, n: f64, sigma2: f64) -> f64 {
    -0.5 * logdet_unchecked(dim, rho) - n * rho * ss / (2.0 * sigma2 * (1.0 - rho))
}

/// Likelihood ratio `chi(rho)` of correlation `rho` against independence.
pub fn chi(rho: f64, ss: f64, dim: usize, n: f64, sigma2: f64) -> Result<f64> {
    log_chi(rho, ss, dim, n, sigma2).map(f64::exp)
}

/// Result of maximizing `chi` over one block.
#[derive(Debug, Clone, Copy, PartialEq)]
struct BlockSup {
    s: f64,
    threshold: f64,
    rho: f64,
    log_chi: f64,
    degenerate: bool,
    clamped: bool,
}

fn block_sup(ss: f64, dim: usize, n: f64, sigma2: f64) -> Result<BlockSup> {
    let s = s_statistic(ss, dim, n, sigma2)?;
    let threshold = s_threshold(dim);
    if ss == 0.0 {
        return Ok(BlockSup {
            s,
            threshold,
            rho: 1.0,
            log_chi: f64::INFINITY,
            degenerate: true,
            clamped: false,
        });
    }
    match rho_hat(s, dim)? {
        None => Ok(BlockSup {
            s,
            threshold,
            rho: 0.0,
            log_chi: 0.0,
            degenerate: false,
            clamped: false,
        }),
        Some(r) => {
            let c = Correlation::new(r)?;
            let lc = log_chi_unchecked(c.value(), ss, dim, n, sigma2);
            // max{chi(rho_hat), 1}
            let (rho, lc) = if lc > 0.0 {
                (c.value(), lc)
            } else {
                (0.0, 0.0)
            };
            Ok(BlockSup {
                s,
                threshold,
                rho,
                log_chi: lc,
                degenerate: false,
                clamped: c.is_clamped(),
            })
        }
    }
}

/// Stable 64-bit FNV-1a digest of the grouping, for report echoes.
pub fn grouping_digest(grouping: &Grouping) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for g in &grouping.groups {
        for id in g {
            for b in id.bytes().chain(std::iter::once(0x1f)) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h ^= 0x1e;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let sizes: Vec<String> = grouping
        .groups
        .iter()
        .map(|g| g.len().to_string())
        .collect();
    format!("{}:{h:016x}", sizes.join("+"))
}

/// Pooled-model evidence from raw cell means and index groups.
pub fn pooled_evidence(
    means: &[f64],
    groups: &[Vec<usize>],
    n: f64,
    sigma2: f64,
    digest: String,
) -> Result<EvidenceReport> {
    let ss: f64 = groups.iter().map(|g| group_ss(means, g)).sum();
    let sup = block_sup(ss, means.len(), n, sigma2)?;
    let v = if sup.degenerate {
        Extended(f64::INFINITY)
    } else {
        Extended::from_log(sup.log_chi)
    };
    Ok(EvidenceReport {
        model: Model::Pooled,
        s_values: vec![sup.s],
        thresholds: vec![sup.threshold],
        rho_hats: vec![sup.rho],
        chi_values: vec![v],
        log_v: sup.log_chi,
        v,
        degenerate: vec![sup.degenerate],
        rho_clamped: vec![sup.clamped],
        inputs_echo: InputsEcho {
            sigma2,
            n,
            grouping_digest: digest,
        },
    })
}

/// Per-group-model evidence from raw cell means and index groups.
pub fn pergroup_evidence(
    means: &[f64],
    groups: &[Vec<usize>],
    n: f64,
    sigma2: f64,
    digest: String,
) -> Result<EvidenceReport> {
    let mut report = EvidenceReport {
        model: Model::PerGroup,
        s_values: Vec::new(),
        thresholds: Vec::new(),
        rho_hats: Vec::new(),
        chi_values: Vec::new(),
        log_v: 0.0,
        v: Extended(1.0),
        degenerate: Vec::new(),
        rho_clamped: Vec::new(),
        inputs_echo: InputsEcho {
            sigma2,
            n,
            grouping_digest: digest,
        },
    };
    for (k, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(Error::Domain(format!(
                "group {k} has a single cell; the per-group model needs at least two"
            )));
        }
        let sup = block_sup(group_ss(means, g), g.len(), n, sigma2)?;
        report.s_values.push(sup.s);
        report.thresholds.push(sup.threshold);
        report.rho_hats.push(sup.rho);
        report.chi_values.push(if sup.degenerate {
            Extended(f64::INFINITY)
        } else {
            Extended::from_log(sup.log_chi)
        });
        report.degenerate.push(sup.degenerate);
        report.rho_clamped.push(sup.clamped);
        report.log_v += sup.log_chi;
    }
    report.v = if report.degenerate.iter().any(|&d| d) {
        Extended(f64::INFINITY)
    } else {
        Extended::from_log(report.log_v)
    };
    Ok(report)
}

/// Evidence with one correlation shared by all cells.
pub fn evidence_pooled(study: &StudySummary, sigma2: f64) -> Result<EvidenceReport> {
    pooled_evidence(
        &study.table.means(),
        &study.group_indices(),
        per_cell_count(&study.table),
        sigma2,
        grouping_digest(&study.grouping),
    )
}

/// Evidence with an independent correlation per group.
pub fn evidence_pergroup(study: &StudySummary, sigma2: f64) -> Result<EvidenceReport> {
    pergroup_evidence(
        &study.table.means(),
        &study.group_indices(),
        per_cell_count(&study.table),
        sigma2,
        grouping_digest(&study.grouping),
    )
}

/// Overall evidence of independent studies: the product.
pub fn combine_studies(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Validation("no evidential values to combine".into()));
    }
    if let Some(bad) = values.iter().find(|v| v.is_nan() || **v < 1.0) {
        return Err(Error::Domain(format!(
            "evidential value {bad} is below 1; every evidential value is at least 1"
        )));
    }
    if values.iter().any(|v| v.is_infinite()) {
        return Ok(f64::INFINITY);
    }
    Ok(values.iter().product())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PosteriorOdds {
    pub prior_odds: f64,
    pub evidential_value: Extended,
    pub posterior_odds: Extended,
    /// Posterior odds strictly above 1.
    pub exceeds_one: bool,
}

/// Posterior odds = prior odds × evidential value.
pub fn posterior_odds(prior_odds: f64, v: f64) -> Result<PosteriorOdds> {
    if !(prior_odds.is_finite() && prior_odds > 0.0) {
        return Err(Error::Domain(format!(
            "prior odds {prior_odds} must be positive"
        )));
    }
    if v.is_nan() || v < 0.0 {
        return Err(Error::Domain(format!("evidential value {v} is invalid")));
    }
    let post = prior_odds * v;
    Ok(PosteriorOdds {
        prior_odds,
        evidential_value: Extended(v),
        posterior_odds: Extended(post),
        exceeds_one: post > 1.0,
    })
}
