//! Recovering the error variance from published F-statistics.
//!
//! For a balanced full-factorial layout with `M` observations per cell the
//! mean square of an effect depends only on the cell means, so dividing it by
//! the published F value gives the mean square for error. Effects are computed
//! generically by inclusion–exclusion over marginal means, which covers any
//! number of factors and any product-shaped subset of the cells.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::study::{rounding_interval, CellTable, FStatRecord, Grouping, Rounding};

/// Largest box dimension accepted by vertex enumeration.
pub const MAX_ENUMERATION_CELLS: usize = 25;

/// Relative deviation from the pooled remainder above which a recovered
/// variance is flagged and left out of the pool.
pub const OUTLIER_RELATIVE_DEVIATION: f64 = 0.5;

/// F values beyond this make the recovered variance implausibly small.
pub const IMPLAUSIBLE_F: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectMeanSquare {
    pub effect: Vec<String>,
    pub df: u32,
    pub value: f64,
    pub m_per_cell: f64,
}

/// The cells selected by a subset predicate, with local factor structure.
#[derive(Debug, Clone)]
struct SubDesign {
    cells: Vec<usize>,
    /// For every selected cell, its level index per factor.
    coords: Vec<Vec<usize>>,
    /// Number of retained levels per factor.
    level_counts: Vec<usize>,
}

impl SubDesign {
    fn select(table: &CellTable, subset: &BTreeMap<String, Vec<String>>) -> Result<Self> {
        let design = table.design();
        let mut allowed: Vec<Vec<bool>> = design
            .factors()
            .iter()
            .map(|f| vec![true; f.levels.len()])
            .collect();
        for (name, levels) in subset {
            let fi = design.factor_index(name).ok_or_else(|| {
                Error::Validation(format!("subset names unknown factor `{name}`"))
            })?;
            let mut mask = vec![false; design.factors()[fi].levels.len()];
            for l in levels {
                let li = design.level_index(fi, l).ok_or_else(|| {
                    Error::Validation(format!("subset names unknown level `{l}` of `{name}`"))
                })?;
                mask[li] = true;
            }
            allowed[fi] = mask;
        }
        let level_counts: Vec<usize> = allowed
            .iter()
            .map(|m| m.iter().filter(|&&b| b).count())
            .collect();
        if level_counts.contains(&0) {
            return Err(Error::Validation(
                "subset selects no levels of some factor".into(),
            ));
        }
        let mut cells = Vec::new();
        let mut coords = Vec::new();
        for (i, c) in table.cells().iter().enumerate() {
            if c.coords.iter().zip(&allowed).all(|(&l, m)| m[l]) {
                cells.push(i);
                coords.push(c.coords.clone());
            }
        }
        let expected: usize = level_counts.iter().product();
        if cells.len() != expected {
            return Err(Error::Validation(format!(
                "subset is not a complete sub-design: {} of {expected} cells present",
                cells.len()
            )));
        }
        Ok(Self {
            cells,
            coords,
            level_counts,
        })
    }

    fn effect_factors(&self, table: &CellTable, effect: &[String]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(effect.len());
        for name in effect {
            let fi = table.design().factor_index(name).ok_or_else(|| {
                Error::Validation(format!("effect names unknown factor `{name}`"))
            })?;
            if self.level_counts[fi] < 2 {
                return Err(Error::Validation(format!(
                    "effect factor `{name}` has a single level inside the subset"
                )));
            }
            if out.contains(&fi) {
                return Err(Error::Validation(format!("effect repeats factor `{name}`")));
            }
            out.push(fi);
        }
        Ok(out)
    }

    fn df(&self, factors: &[usize]) -> u32 {
        factors
            .iter()
            .map(|&f| (self.level_counts[f] - 1) as u32)
            .product()
    }

    /// Effect component of every selected cell: the signed sum of marginal
    /// means over all sub-effects, `sum_{T ⊆ E} (-1)^{|E|-|T|} mean_T`.
    fn effect_terms(&self, factors: &[usize], x: &[f64]) -> Vec<f64> {
        let mut terms = vec![0.0; x.len()];
        let k = factors.len();
        for mask in 0..(1usize << k) {
            let kept: Vec<usize> = (0..k)
                .filter(|b| mask >> b & 1 == 1)
                .map(|b| factors[b])
                .collect();
            let sign = if (k - kept.len()).is_multiple_of(2) {
                1.0
            } else {
                -1.0
            };
            let mut sums: HashMap<Vec<usize>, (f64, usize)> = HashMap::new();
            for (c, xi) in self.coords.iter().zip(x) {
                let key: Vec<usize> = kept.iter().map(|&f| c[f]).collect();
                let e = sums.entry(key).or_insert((0.0, 0));
                e.0 += xi;
                e.1 += 1;
            }
            for (t, c) in terms.iter_mut().zip(&self.coords) {
                let key: Vec<usize> = kept.iter().map(|&f| c[f]).collect();
                let (s, cnt) = sums[&key];
                *t += sign * s / cnt as f64;
            }
        }
        terms
    }

    /// Matrix `P` with `terms = P x`; symmetric and idempotent.
    fn projection(&self, factors: &[usize]) -> Vec<Vec<f64>> {
        let m = self.cells.len();
        let mut cols = Vec::with_capacity(m);
        for j in 0..m {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            cols.push(self.effect_terms(factors, &e));
        }
        // cols[j][i] = P[i][j]; P is symmetric, so rows == cols.
        cols
    }
}

fn subset_means(table: &CellTable, sub: &SubDesign) -> Vec<f64> {
    sub.cells.iter().map(|&i| table.cells()[i].mean).collect()
}

/// Mean square of `effect` from the cell means of the selected subset.
///
/// `subset_observations` is the number of observations the ANOVA on that
/// subset was based on; `M = subset_observations / #cells`.
pub fn effect_mean_square(
    table: &CellTable,
    subset: &BTreeMap<String, Vec<String>>,
    subset_observations: f64,
    effect: &[String],
) -> Result<EffectMeanSquare> {
    let sub = SubDesign::select(table, subset)?;
    let factors = sub.effect_factors(table, effect)?;
    if factors.is_empty() {
        return Err(Error::Validation(
            "effect must name at least one factor".into(),
        ));
    }
    let m_per_cell = subset_observations / sub.cells.len() as f64;
    let terms = sub.effect_terms(&factors, &subset_means(table, &sub));
    let ss: f64 = terms.iter().map(|t| t * t).sum::<f64>() * m_per_cell;
    let df = sub.df(&factors);
    Ok(EffectMeanSquare {
        effect: effect.to_vec(),
        df,
        value: ss / df as f64,
        m_per_cell,
    })
}

/// Effect mean square for the effect and subset of a published F record.
pub fn effect_mean_square_for(table: &CellTable, f: &FStatRecord) -> Result<EffectMeanSquare> {
    effect_mean_square(table, &f.subset, f.subset_observations, &f.effect)
}

/// Sums of squares for every effect of the subset's layout, including the
/// grand mean (empty effect), as `(factor names, df, SS)`.
pub fn effect_decomposition(
    table: &CellTable,
    subset: &BTreeMap<String, Vec<String>>,
    subset_observations: f64,
) -> Result<Vec<(Vec<String>, u32, f64)>> {
    let sub = SubDesign::select(table, subset)?;
    let active: Vec<usize> = (0..sub.level_counts.len())
        .filter(|&f| sub.level_counts[f] >= 2)
        .collect();
    let m = subset_observations / sub.cells.len() as f64;
    let x = subset_means(table, &sub);
    let names = table.design().factors();
    let mut out = Vec::new();
    for mask in 0..(1usize << active.len()) {
        let factors: Vec<usize> = (0..active.len())
            .filter(|b| mask >> b & 1 == 1)
            .map(|b| active[b])
            .collect();
        let terms = sub.effect_terms(&factors, &x);
        let ss = m * terms.iter().map(|t| t * t).sum::<f64>();
        out.push((
            factors.iter().map(|&f| names[f].name.clone()).collect(),
            sub.df(&factors),
            ss,
        ));
    }
    Ok(out)
}

fn same_effect(a: &[String], b: &[String]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort();
    b.sort();
    a == b
}

/// Mean square for error implied by an effect mean square and its F value.
pub fn sigma2_from_f(ms: &EffectMeanSquare, f: &FStatRecord) -> Result<f64> {
    if !same_effect(&ms.effect, &f.effect) {
        return Err(Error::Validation(format!(
            "effect mismatch: mean square for [{}], F record for [{}]",
            ms.effect.join(","),
            f.effect.join(",")
        )));
    }
    if ms.df != f.df1 {
        return Err(Error::Validation(format!(
            "df mismatch: effect has {} degrees of freedom but {} has df1 = {}",
            ms.df,
            f.label(),
            f.df1
        )));
    }
    if !(f.value.is_finite() && f.value > 0.0) {
        return Err(Error::Domain(format!(
            "F value {} must be positive",
            f.value
        )));
    }
    Ok(ms.value / f.value)
}

/// Range of the recovered variance over the rounding box of the subset cells.
///
/// The effect mean square is a convex quadratic `M/df * x'Px` of the cell
/// means, so the maximum sits on a vertex (enumerated) and the minimum is a
/// box-constrained convex problem (coordinate descent).
pub fn sigma2_interval(table: &CellTable, f: &FStatRecord) -> Result<(f64, f64)> {
    let sub = SubDesign::select(table, &f.subset)?;
    let factors = sub.effect_factors(table, &f.effect)?;
    let point = sigma2_from_f(&effect_mean_square_for(table, f)?, f)?;
    let m = sub.cells.len();
    let scale = f.subset_observations / m as f64 / sub.df(&factors) as f64 / f.value;
    let x0 = subset_means(table, &sub);
    let bounds: Vec<(f64, f64)> = x0
        .iter()
        .map(|&v| rounding_interval(v, table.rounding()))
        .collect();
    if bounds.iter().all(|(lo, hi)| lo == hi) {
        return Ok((point, point));
    }
    if m > MAX_ENUMERATION_CELLS {
        return Err(Error::EnumerationBound(format!(
            "subset has {m} cells; vertex enumeration supports at most {MAX_ENUMERATION_CELLS}"
        )));
    }
    let p = sub.projection(&factors);
    let hi = max_quadratic_on_box(&p, &bounds) * scale;
    let lo = min_quadratic_on_box(&p, &bounds, &x0) * scale;
    Ok((lo.min(point), hi.max(point)))
}

fn quad(p: &[Vec<f64>], x: &[f64]) -> f64 {
    p.iter()
        .zip(x)
        .map(|(row, xi)| xi * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Max of `x'Px` (P PSD) over the box, by Gray-code vertex enumeration.
fn max_quadratic_on_box(p: &[Vec<f64>], bounds: &[(f64, f64)]) -> f64 {
    let m = bounds.len();
    let mut x: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let mut y: Vec<f64> = (0..m)
        .map(|i| p[i].iter().zip(&x).map(|(a, b)| a * b).sum())
        .collect();
    let value = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let mut best = value(&x, &y);
    let mut upper = vec![false; m];
    for step in 1u64..(1u64 << m) {
        let i = step.trailing_zeros() as usize;
        upper[i] = !upper[i];
        let new = if upper[i] { bounds[i].1 } else { bounds[i].0 };
        let delta = new - x[i];
        x[i] = new;
        for (yk, pk) in y.iter_mut().zip(p) {
            *yk += pk[i] * delta;
        }
        best = best.max(value(&x, &y));
    }
    // Guard against drift in the incremental updates.
    best.max(quad(p, &x))
}

/// Min of `x'Px` over the box by cyclic coordinate descent.
fn min_quadratic_on_box(p: &[Vec<f64>], bounds: &[(f64, f64)], start: &[f64]) -> f64 {
    let m = bounds.len();
    let mut x = start.to_vec();
    let mut y: Vec<f64> = (0..m)
        .map(|i| p[i].iter().zip(&x).map(|(a, b)| a * b).sum())
        .collect();
    for _sweep in 0..100_000 {
        let mut max_step: f64 = 0.0;
        for i in 0..m {
            if p[i][i] <= 1e-15 {
                continue;
            }
            let target = (x[i] - y[i] / p[i][i]).clamp(bounds[i].0, bounds[i].1);
            let delta = target - x[i];
            if delta != 0.0 {
                x[i] = target;
                for (yk, pk) in y.iter_mut().zip(p) {
                    *yk += pk[i] * delta;
                }
                max_step = max_step.max(delta.abs());
            }
        }
        if max_step < 1e-15 {
            break;
        }
    }
    quad(p, &x).max(0.0)
}

/// Pooled variance: plain mean, or weighted mean when weights are given.
pub fn pool_sigma2(estimates: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Validation("nothing to pool".into()));
    }
    if estimates.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::Domain("pooled estimates must be positive".into()));
    }
    match weights {
        None => Ok(estimates.iter().sum::<f64>() / estimates.len() as f64),
        Some(w) => {
            if w.len() != estimates.len() {
                return Err(Error::Validation(
                    "weights and estimates differ in length".into(),
                ));
            }
            if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Domain("weights must be positive".into()));
            }
            let total: f64 = w.iter().sum();
            Ok(estimates.iter().zip(w).map(|(e, w)| e * w).sum::<f64>() / total)
        }
    }
}

/// Outcome of recovering the variance from one F record.
#[derive(Debug, Clone, Serialize)]
pub struct RecordRecovery {
    pub label: String,
    pub df2: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_square: Option<EffectMeanSquare>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Deviates by more than 50% from the pool of the other records.
    pub outlier: bool,
    pub implausibly_small: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceEstimate {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<(f64, f64)>,
    /// Indices of the F records that entered the pool.
    pub sources: Vec<usize>,
    pub method: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaRecovery {
    pub records: Vec<RecordRecovery>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pooled: Option<VarianceEstimate>,
}

const POOLING_METHOD: &str =
    "mean within error term (shared df2), then unweighted mean across error terms";

/// Two-level pool: records sharing an error term (df2) are averaged first,
/// then the error-term averages are averaged.
fn hierarchical_pool(values: &[(u32, f64)]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut by_term: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for &(df2, v) in values {
        by_term.entry(df2).or_default().push(v);
    }
    let means: Vec<f64> = by_term
        .values()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    Some(means.iter().sum::<f64>() / means.len() as f64)
}

/// Recovers the error variance from every F record of a study.
///
/// Records that fail (e.g. df mismatch) are reported and skipped. Outliers
/// are removed one at a time, worst first, while at least three records
/// remain in the pool.
pub fn recover_sigma2(table: &CellTable, f_stats: &[FStatRecord]) -> SigmaRecovery {
    let mut records: Vec<RecordRecovery> = f_stats
        .iter()
        .map(|f| {
            let mut rec = RecordRecovery {
                label: f.label(),
                df2: f.df2,
                mean_square: None,
                sigma2: None,
                interval: None,
                error: None,
                outlier: false,
                implausibly_small: f.value > IMPLAUSIBLE_F,
            };
            let result = effect_mean_square_for(table, f)
                .and_then(|ms| sigma2_from_f(&ms, f).map(|s| (ms, s)));
            match result {
                Ok((ms, s)) => {
                    rec.mean_square = Some(ms);
                    rec.sigma2 = Some(s);
                    match sigma2_interval(table, f) {
                        Ok(iv) => rec.interval = Some(iv),
                        Err(e) => rec.error = Some(e.to_string()),
                    }
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            rec
        })
        .collect();

    let mut included: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.sigma2.is_some() && !r.implausibly_small)
        .map(|(i, _)| i)
        .collect();
    while included.len() >= 3 {
        let mut worst: Option<(usize, f64)> = None;
        for &i in &included {
            let rest: Vec<(u32, f64)> = included
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (records[j].df2, records[j].sigma2.unwrap()))
                .collect();
            let pool = hierarchical_pool(&rest).unwrap();
            let dev = (records[i].sigma2.unwrap() / pool - 1.0).abs();
            if worst.is_none_or(|(_, d)| dev > d) {
                worst = Some((i, dev));
            }
        }
        match worst {
            Some((i, dev)) if dev > OUTLIER_RELATIVE_DEVIATION => {
                records[i].outlier = true;
                included.retain(|&j| j != i);
            }
            _ => break,
        }
    }

    let pooled = hierarchical_pool(
        &included
            .iter()
            .map(|&i| (records[i].df2, records[i].sigma2.unwrap()))
            .collect::<Vec<_>>(),
    )
    .map(|value| {
        let lows: Option<Vec<(u32, f64)>> = included
            .iter()
            .map(|&i| records[i].interval.map(|iv| (records[i].df2, iv.0)))
            .collect();
        let highs: Option<Vec<(u32, f64)>> = included
            .iter()
            .map(|&i| records[i].interval.map(|iv| (records[i].df2, iv.1)))
            .collect();
        let interval = match (lows, highs) {
            (Some(l), Some(h)) => hierarchical_pool(&l).zip(hierarchical_pool(&h)),
            _ => None,
        };
        VarianceEstimate {
            value,
            interval,
            sources: included.clone(),
            method: POOLING_METHOD.to_string(),
        }
    });
    SigmaRecovery { records, pooled }
}

/// Moves every cell mean to an endpoint of its rounding interval so that the
/// within-group sum of squares is as large as possible.
///
/// The objective is convex in the mean vector, so a vertex of the box is
/// optimal; groups are independent and each is enumerated exhaustively.
/// Ties keep the first vertex in Gray-code order.
pub fn worst_case_table(table: &CellTable, grouping: &Grouping) -> Result<CellTable> {
    let groups = table.group_indices(grouping)?;
    let bounds: Vec<(f64, f64)> = table
        .cells()
        .iter()
        .map(|c| rounding_interval(c.mean, table.rounding()))
        .collect();
    let mut means = table.means();
    for (k, g) in groups.iter().enumerate() {
        let free: Vec<usize> = g
            .iter()
            .copied()
            .filter(|&i| bounds[i].0 < bounds[i].1)
            .collect();
        if free.is_empty() {
            continue;
        }
        if g.len() > MAX_ENUMERATION_CELLS {
            return Err(Error::EnumerationBound(format!(
                "group {k} has {} cells; at most {MAX_ENUMERATION_CELLS} are enumerated, split it into smaller groups",
                g.len()
            )));
        }
        let best = maximize_group_ss(g, &bounds);
        for (&i, v) in g.iter().zip(best) {
            means[i] = v;
        }
    }
    table.with_means(&means, Rounding::Exact)
}

fn maximize_group_ss(group: &[usize], bounds: &[(f64, f64)]) -> Vec<f64> {
    let m = group.len();
    let lo: Vec<f64> = group.iter().map(|&i| bounds[i].0).collect();
    let hi: Vec<f64> = group.iter().map(|&i| bounds[i].1).collect();
    // Work with deviations from the centre of the box to limit cancellation.
    let centre = lo.iter().chain(&hi).sum::<f64>() / (2 * m) as f64;
    let mut x = lo.clone();
    let mut sum: f64 = x.iter().map(|v| v - centre).sum();
    let mut sum_sq: f64 = x.iter().map(|v| (v - centre).powi(2)).sum();
    let ss = |sum: f64, sum_sq: f64| sum_sq - sum * sum / m as f64;
    let mut best_val = ss(sum, sum_sq);
    let mut best = x.clone();
    let mut upper = vec![false; m];
    for step in 1u64..(1u64 << m) {
        let i = step.trailing_zeros() as usize;
        upper[i] = !upper[i];
        let old = x[i] - centre;
        x[i] = if upper[i] { hi[i] } else { lo[i] };
        let new = x[i] - centre;
        sum += new - old;
        sum_sq += new * new - old * old;
        let v = ss(sum, sum_sq);
        if v > best_val + 1e-12 * best_val.abs().max(1e-300) {
            best_val = v;
            best = x.clone();
        }
    }
    best
}
