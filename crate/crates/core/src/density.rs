//! Closed-form log-densities for equicorrelated multivariate normal cell means.
//!
//! The covariance of the `I` cell means is `(sigma^2 / n) R(rho)` with `R`
//! the compound-symmetry matrix (unit diagonal, `rho` elsewhere). Its
//! determinant and inverse have closed forms, so nothing here factorizes a
//! matrix. All results are in log space.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Largest correlation accepted; anything in `[RHO_MAX, 1)` is clamped to it.
pub const RHO_MAX: f64 = 1.0 - 1e-12;

/// A validated correlation in `[0, RHO_MAX]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    value: f64,
    clamped: bool,
}

impl Correlation {
    pub fn new(rho: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Domain(format!("correlation {rho} outside [0, 1)")));
        }
        if rho > RHO_MAX {
            Ok(Self {
                value: RHO_MAX,
                clamped: true,
            })
        } else {
            Ok(Self {
                value: rho,
                clamped: false,
            })
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// True if the input was within 1e-12 of one and got clamped.
    pub fn is_clamped(&self) -> bool {
        self.clamped
    }
}

/// Parameters of one equicorrelated block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquicorrSpec {
    pub dim: usize,
    pub rho: Correlation,
    pub sigma2: f64,
    pub n: f64,
}

impl EquicorrSpec {
    pub fn new(dim: usize, rho: f64, sigma2: f64, n: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("dimension must be at least 1".into()));
        }
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::Domain(format!("sigma2 {sigma2} must be positive")));
        }
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Domain(format!(
                "per-cell count {n} must be positive"
            )));
        }
        Ok(Self {
            dim,
            rho: Correlation::new(rho)?,
            sigma2,
            n,
        })
    }
}

/// `log[(1 + (dim-1) rho) (1 - rho)^(dim-1)]`, the log-determinant of `R(rho)`.
pub fn equicorr_logdet(dim: usize, rho: f64) -> Result<f64> {
    if dim == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    let rho = Correlation::new(rho)?.value();
    Ok(logdet_unchecked(dim, rho))
}

pub(crate) fn logdet_unchecked(dim: usize, rho: f64) -> f64 {
    let m = (dim - 1) as f64;
    (m * rho).ln_1p() + m * (-rho).ln_1p()
}

/// `d' R(rho)^-1 d`, i.e. `(1/(1-rho)) [sum d^2 - rho/(1+(I-1)rho) (sum d)^2]`.
pub fn equicorr_quadform(devs: &[f64], rho: f64) -> Result<f64> {
    if devs.is_empty() {
        return Err(Error::Domain("empty deviation vector".into()));
    }
    let rho = Correlation::new(rho)?.value();
    Ok(quadform_unchecked(devs, rho))
}

pub(crate) fn quadform_unchecked(devs: &[f64], rho: f64) -> f64 {
    let dim = devs.len() as f64;
    let sum: f64 = devs.iter().sum();
    let sum_sq: f64 = devs.iter().map(|d| d * d).sum();
    (sum_sq - rho / (1.0 + (dim - 1.0) * rho) * sum * sum) / (1.0 - rho)
}

/// Log joint density of the cell means under one equicorrelated block.
///
/// `nu` is the mean vector expanded to one entry per cell.
pub fn log_density_pooled(means: &[f64], nu: &[f64], spec: &EquicorrSpec) -> Result<f64> {
    if means.len() != nu.len() || means.len() != spec.dim {
        return Err(Error::Domain(format!(
            "length mismatch: {} means, {} mean parameters, dimension {}",
            means.len(),
            nu.len(),
            spec.dim
        )));
    }
    let rho = spec.rho.value();
    let devs: Vec<f64> = means.iter().zip(nu).map(|(x, m)| x - m).collect();
    let dim = spec.dim as f64;
    let scale = spec.sigma2 / spec.n;
    Ok(-0.5 * dim * (2.0 * PI * scale).ln()
        - 0.5 * logdet_unchecked(spec.dim, rho)
        - 0.5 * quadform_unchecked(&devs, rho) / scale)
}

/// Log joint density with an independent equicorrelated block per group.
///
/// `groups` holds cell indices into `means`/`nu`; `group_specs[k]` carries the
/// block parameters of group `k`.
pub fn log_density_pergroup(
    means: &[f64],
    nu: &[f64],
    group_specs: &[EquicorrSpec],
    groups: &[Vec<usize>],
) -> Result<f64> {
    if group_specs.len() != groups.len() {
        return Err(Error::Domain(format!(
            "{} group specs for {} groups",
            group_specs.len(),
            groups.len()
        )));
    }
    if means.len() != nu.len() {
        return Err(Error::Domain("means and nu differ in length".into()));
    }
    let mut total = 0.0;
    for (spec, idx) in group_specs.iter().zip(groups) {
        let gm: Vec<f64> = idx.iter().map(|&i| means[i]).collect();
        let gn: Vec<f64> = idx.iter().map(|&i| nu[i]).collect();
        total += log_density_pooled(&gm, &gn, spec)?;
    }
    Ok(total)
}
