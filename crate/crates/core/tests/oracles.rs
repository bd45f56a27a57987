//! Library results checked against independent brute-force computations.

mod common;

use std::collections::BTreeMap;

use anova_evidence::density::{
    equicorr_logdet, equicorr_quadform, log_density_pergroup, log_density_pooled, EquicorrSpec,
};
use anova_evidence::evidence::{chi, evidence_pergroup, evidence_pooled, pooled_evidence, rho_hat};
use anova_evidence::simulation::{sup_chi_oracle, v_tilde};
use anova_evidence::study::{per_cell_count, rounding_box};
use anova_evidence::variance::{
    effect_mean_square, effect_mean_square_for, sigma2_interval, worst_case_table,
};
use approx::assert_relative_eq;
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn closed_form_determinant_and_inverse_match_lu() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for dim in 1..=12 {
        for k in 0..=18 {
            let rho = k as f64 * 0.05;
            let r = equicorr_matrix(dim, rho);
            let lu = r.clone().lu();
            assert_relative_eq!(
                equicorr_logdet(dim, rho).unwrap(),
                lu.determinant().ln(),
                epsilon = 1e-10,
                max_relative = 1e-10
            );
            let d: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let dv = DVector::from_column_slice(&d);
            let want = dv.dot(&lu.solve(&dv).unwrap());
            assert_relative_eq!(
                equicorr_quadform(&d, rho).unwrap(),
                want,
                epsilon = 1e-10,
                max_relative = 1e-10
            );
        }
    }
}

#[test]
fn log_density_matches_generic_mvn() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let dim = rng.random_range(1..=12);
        let rho = rng.random_range(0.0..0.95);
        let sigma2 = rng.random_range(0.1..10.0);
        let n = rng.random_range(2.0..200.0);
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let nu: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let cov = equicorr_matrix(dim, rho) * (sigma2 / n);
        let spec = EquicorrSpec::new(dim, rho, sigma2, n).unwrap();
        assert_relative_eq!(
            log_density_pooled(&x, &nu, &spec).unwrap(),
            mvn_logpdf(&x, &nu, &cov),
            epsilon = 1e-9,
            max_relative = 1e-9
        );
    }
}

#[test]
fn per_group_density_is_block_diagonal_mvn() {
    let x = [1.0, 1.2, 0.7, 2.0, 2.4];
    let nu = [1.0, 1.0, 1.0, 2.2, 2.2];
    let groups = vec![vec![0, 1, 2], vec![3, 4]];
    let specs = [
        EquicorrSpec::new(3, 0.3, 1.5, 20.0).unwrap(),
        EquicorrSpec::new(2, 0.7, 1.5, 20.0).unwrap(),
    ];
    let mut cov = DMatrix::zeros(5, 5);
    for (g, s) in groups.iter().zip(&specs) {
        for &i in g {
            for &j in g {
                cov[(i, j)] = s.sigma2 / s.n * if i == j { 1.0 } else { s.rho.value() };
            }
        }
    }
    assert_relative_eq!(
        log_density_pergroup(&x, &nu, &specs, &groups).unwrap(),
        mvn_logpdf(&x, &nu, &cov),
        epsilon = 1e-10
    );
}

#[test]
fn chi_is_the_density_ratio_at_group_means() {
    let x = [2.3, 2.5, 2.4, 2.6];
    let nu = [2.45; 4];
    let (n, sigma2) = (30.0, 1.2);
    let ss = group_ss(&x, &[vec![0, 1, 2, 3]]);
    for rho in [0.0, 0.2, 0.5, 0.9] {
        let cov = |r: f64| equicorr_matrix(4, r) * (sigma2 / n);
        let ratio = (mvn_logpdf(&x, &nu, &cov(rho)) - mvn_logpdf(&x, &nu, &cov(0.0))).exp();
        assert_relative_eq!(
            chi(rho, ss, 4, n, sigma2).unwrap(),
            ratio,
            max_relative = 1e-10
        );
    }
}

#[test]
fn closed_form_supremum_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let dim = rng.random_range(2..=20);
        let n = rng.random_range(2.0..200.0);
        let sigma2 = rng.random_range(0.1..10.0);
        let s = rng.random_range(1e-3..1.2);
        let ss = s * dim as f64 * sigma2 / n;
        let report = pooled_evidence(
            &closed_form_means(dim, ss),
            &[(0..dim).collect()],
            n,
            sigma2,
            String::new(),
        )
        .unwrap();
        let oracle = sup_chi_oracle(ss, dim, n, sigma2, 4000).unwrap();
        assert_relative_eq!(report.v.value(), oracle.value.value(), max_relative = 1e-6);
        let rh = rho_hat(s, dim).unwrap();
        match rh {
            // A stationary point with chi below one loses to rho = 0.
            Some(r) if report.v.value() > 1.0 => {
                assert!(
                    (r - oracle.rho_star).abs() < 1e-4,
                    "{r} vs {}",
                    oracle.rho_star
                )
            }
            _ => assert_eq!(report.v.value(), 1.0),
        }
    }
}

/// Means with the requested sum of squared deviations around their mean.
fn closed_form_means(dim: usize, ss: f64) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    x[0] = (ss / 2.0).sqrt();
    x[1] = -(ss / 2.0).sqrt();
    x
}

#[test]
fn nuisance_means_minimized_numerically_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..10 {
        let k = rng.random_range(1..=3);
        let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(2..=5)).collect();
        let mut groups = Vec::new();
        let mut means = Vec::new();
        for &s in &sizes {
            let base = rng.random_range(-2.0..2.0);
            let start = means.len();
            for _ in 0..s {
                means.push(base + rng.random_range(-0.3..0.3));
            }
            groups.push((start..start + s).collect::<Vec<_>>());
        }
        let n = rng.random_range(5.0..60.0);
        let sigma2 = rng.random_range(0.5..3.0);
        let closed =
            anova_evidence::evidence::pergroup_evidence(&means, &groups, n, sigma2, String::new())
                .unwrap();
        let numeric = v_tilde(&means, &groups, n, sigma2, 1e-12).unwrap();
        assert_relative_eq!(closed.v.value(), numeric, max_relative = 1e-4);
    }
}

/// Least-squares sum of squares for `effect`: the drop in residual sum of
/// squares when the effect's indicators are added to its marginal
/// sub-effects, weighted by the per-cell count.
fn least_squares_effect_ss(coords: &[Vec<usize>], x: &[f64], effect: &[usize], m: f64) -> f64 {
    let rss = |factor_sets: &[Vec<usize>]| {
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for set in factor_sets {
            let mut keys: Vec<Vec<usize>> = coords
                .iter()
                .map(|c| set.iter().map(|&f| c[f]).collect())
                .collect();
            keys.sort();
            keys.dedup();
            for key in keys {
                cols.push(
                    coords
                        .iter()
                        .map(|c| {
                            let k: Vec<usize> = set.iter().map(|&f| c[f]).collect();
                            f64::from(k == key)
                        })
                        .collect(),
                );
            }
        }
        let a = DMatrix::from_fn(x.len(), cols.len(), |i, j| cols[j][i]);
        let b = DVector::from_column_slice(x);
        let svd = a.clone().svd(true, true);
        let beta = svd.solve(&b, 1e-12).unwrap();
        (b - a * beta).norm_squared()
    };
    let proper: Vec<Vec<usize>> = (0..(1usize << effect.len()) - 1)
        .map(|mask| {
            (0..effect.len())
                .filter(|b| mask >> b & 1 == 1)
                .map(|b| effect[b])
                .collect()
        })
        .collect();
    m * (rss(&proper) - rss(&[effect.to_vec()]))
}

#[test]
fn effect_mean_squares_match_least_squares() {
    let study = load("published.json");
    let table = &study.table;
    let coords: Vec<Vec<usize>> = table.cells().iter().map(|c| c.coords.clone()).collect();
    let x = table.means();
    let m = per_cell_count(table);
    let names = ["prime", "target", "task"];
    for mask in 1..8usize {
        let effect: Vec<usize> = (0..3).filter(|b| mask >> b & 1 == 1).collect();
        let effect_names: Vec<String> = effect.iter().map(|&f| names[f].to_string()).collect();
        let ms = effect_mean_square(table, &BTreeMap::new(), 338.0, &effect_names).unwrap();
        let ss = least_squares_effect_ss(&coords, &x, &effect, m);
        assert_relative_eq!(ms.value * ms.df as f64, ss, epsilon = 1e-10);
    }
}

#[test]
fn subset_effect_matches_least_squares_on_selected_cells() {
    let study = load("published.json");
    let table = &study.table;
    for f in &study.f_stats[1..] {
        let ms = effect_mean_square_for(table, f).unwrap();
        let design = table.design();
        let selected: Vec<usize> = (0..table.cells().len())
            .filter(|&i| {
                f.subset.iter().all(|(name, levels)| {
                    let fi = design.factor_index(name).unwrap();
                    let l = &design.factors()[fi].levels[table.cells()[i].coords[fi]];
                    levels.contains(l)
                })
            })
            .collect();
        let coords: Vec<Vec<usize>> = selected
            .iter()
            .map(|&i| table.cells()[i].coords.clone())
            .collect();
        let x: Vec<f64> = selected.iter().map(|&i| table.cells()[i].mean).collect();
        let effect: Vec<usize> = f
            .effect
            .iter()
            .map(|e| design.factor_index(e).unwrap())
            .collect();
        let m = f.subset_observations / selected.len() as f64;
        let ss = least_squares_effect_ss(&coords, &x, &effect, m);
        assert_relative_eq!(ms.value * ms.df as f64, ss, epsilon = 1e-10);
    }
}

#[test]
fn interval_contains_every_sampled_table_and_attains_vertices() {
    let study = load("published.json");
    let table = &study.table;
    let bx = rounding_box(table);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for f in &study.f_stats {
        let (lo, hi) = sigma2_interval(table, f).unwrap();
        let eval = |x: &[f64]| {
            let t = table
                .with_means(x, anova_evidence::study::Rounding::Exact)
                .unwrap();
            effect_mean_square_for(&t, f).unwrap().value / f.value
        };
        let mut best_vertex = f64::NEG_INFINITY;
        for _ in 0..2000 {
            let x: Vec<f64> = bx.iter().map(|&(a, b)| rng.random_range(a..=b)).collect();
            let v = eval(&x);
            assert!(
                v >= lo - 1e-12 && v <= hi + 1e-12,
                "{v} outside [{lo}, {hi}]"
            );
            let corner: Vec<f64> = bx
                .iter()
                .map(|&(a, b)| if rng.random_bool(0.5) { a } else { b })
                .collect();
            best_vertex = best_vertex.max(eval(&corner));
        }
        assert!(best_vertex <= hi + 1e-12);
        let center = eval(&table.means());
        assert!(lo <= center && center <= hi);
    }
}

#[test]
fn worst_case_beats_a_grid_search_per_group() {
    let study = load("published.json");
    let worst = worst_case_table(&study.table, &study.grouping).unwrap();
    let bx = rounding_box(&study.table);
    let groups = study.group_indices();
    let wm = worst.means();
    for g in &groups {
        // Five points per coordinate, including both endpoints.
        let pts: Vec<Vec<f64>> = g
            .iter()
            .map(|&i| {
                (0..5)
                    .map(|k| bx[i].0 + (bx[i].1 - bx[i].0) * k as f64 / 4.0)
                    .collect()
            })
            .collect();
        let mut best = f64::NEG_INFINITY;
        let total = 5usize.pow(g.len() as u32);
        for code in 0..total {
            let mut c = code;
            let x: Vec<f64> = pts
                .iter()
                .map(|p| {
                    let v = p[c % 5];
                    c /= 5;
                    v
                })
                .collect();
            best = best.max(group_ss(&x, &[(0..x.len()).collect()]));
        }
        let got: Vec<f64> = g.iter().map(|&i| wm[i]).collect();
        let got_ss = group_ss(&got, &[(0..got.len()).collect()]);
        assert!(got_ss >= best - 1e-12, "{got_ss} < {best}");
    }
}

#[test]
fn study_level_reports_agree_with_raw_functions() {
    let study = load("published.json");
    let means = study.table.means();
    let groups = study.group_indices();
    let n = per_cell_count(&study.table);
    let pooled = evidence_pooled(&study, 1.134).unwrap();
    let oracle = sup_chi_oracle(group_ss(&means, &groups), 12, n, 1.134, 4000).unwrap();
    assert_relative_eq!(pooled.v.value(), oracle.value.value(), max_relative = 1e-6);
    let pg = evidence_pergroup(&study, 1.134).unwrap();
    let prod: f64 = groups
        .iter()
        .map(|g| {
            let ss = group_ss(&means, std::slice::from_ref(g));
            sup_chi_oracle(ss, g.len(), n, 1.134, 4000)
                .unwrap()
                .value
                .value()
        })
        .product();
    assert_relative_eq!(pg.v.value(), prod, max_relative = 1e-6);
}
