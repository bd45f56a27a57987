#![allow(dead_code)]

use std::path::PathBuf;

use anova_evidence::study::{parse_study, StudySummary};
use nalgebra::{DMatrix, DVector};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("data")
        .join(name)
}

pub fn load(name: &str) -> StudySummary {
    let text = std::fs::read_to_string(data_path(name)).expect("study file");
    parse_study(&text).expect("valid study")
}

/// Compound-symmetry correlation matrix.
pub fn equicorr_matrix(dim: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { rho })
}

/// Generic MVN log-density through a Cholesky factorization.
pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> f64 {
    let d = DVector::from_iterator(x.len(), x.iter().zip(mean).map(|(a, b)| a - b));
    let chol = cov.clone().cholesky().expect("positive definite");
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let sol = chol.solve(&d);
    -0.5 * (x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + d.dot(&sol))
}

/// Within-group sum of squares computed the long way.
pub fn group_ss(means: &[f64], groups: &[Vec<usize>]) -> f64 {
    groups
        .iter()
        .map(|g| {
            let m = g.iter().map(|&i| means[i]).sum::<f64>() / g.len() as f64;
            g.iter().map(|&i| (means[i] - m).powi(2)).sum::<f64>()
        })
        .sum()
}
