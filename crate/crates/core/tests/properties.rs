mod common;

use std::collections::BTreeMap;

use anova_evidence::density::{equicorr_quadform, log_density_pooled, EquicorrSpec};
use anova_evidence::evidence::{
    evidence_pergroup, evidence_pooled, log_chi, pergroup_evidence, pooled_evidence, rho_hat,
    s_threshold,
};
use anova_evidence::study::{
    parse_study, serialize_study, Cell, CellTable, Factor, FactorDesign, Grouping, Rounding,
    StudySummary,
};
use anova_evidence::variance::effect_decomposition;
use proptest::prelude::*;

/// A random full-factorial study with means on a one-decimal grid, grouped
/// by the levels of the first factor.
fn arb_study() -> impl Strategy<Value = StudySummary> {
    (prop::collection::vec(2usize..=3, 1..=3), 3u32..=40)
        .prop_flat_map(|(levels, n): (Vec<usize>, u32)| {
            let cells: usize = levels.iter().product();
            (
                Just(levels),
                Just(n),
                prop::collection::vec(-50i32..50, cells),
            )
        })
        .prop_map(|(levels, n, raw): (Vec<usize>, u32, Vec<i32>)| build_study(&levels, n, &raw))
}

fn build_study(levels: &[usize], n: u32, raw: &[i32]) -> StudySummary {
    let factors: Vec<Factor> = levels
        .iter()
        .enumerate()
        .map(|(f, &l)| Factor {
            name: format!("f{f}"),
            levels: (0..l).map(|k| format!("l{k}")).collect(),
        })
        .collect();
    let design = FactorDesign::new(factors).unwrap();
    let mut coords = vec![vec![]];
    for &l in levels {
        coords = coords
            .into_iter()
            .flat_map(|c: Vec<usize>| {
                (0..l).map(move |k| {
                    let mut c = c.clone();
                    c.push(k);
                    c
                })
            })
            .collect();
    }
    let cells: Vec<Cell> = coords
        .iter()
        .zip(raw)
        .map(|(c, &r)| Cell {
            id: design.canonical_id(c),
            coords: c.clone(),
            mean: r as f64 / 10.0,
        })
        .collect();
    let groups: Vec<Vec<String>> = (0..levels[0])
        .map(|k| {
            cells
                .iter()
                .filter(|c| c.coords[0] == k)
                .map(|c| c.id.clone())
                .collect()
        })
        .collect();
    let total = (n as usize * cells.len()) as f64;
    let table = CellTable::new(design, cells, total, Rounding::Decimals(1)).unwrap();
    StudySummary::new(table, Grouping::new(groups), vec![], None).unwrap()
}

fn transformed(study: &StudySummary, scale: f64, shift: f64) -> StudySummary {
    let means: Vec<f64> = study
        .table
        .means()
        .iter()
        .map(|x| scale * x + shift)
        .collect();
    study
        .with_table(study.table.with_means(&means, Rounding::Exact).unwrap())
        .unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn study_round_trips(study in arb_study()) {
        let back = parse_study(&serialize_study(&study)).unwrap();
        prop_assert_eq!(back, study);
    }

    #[test]
    fn evidence_is_at_least_one(study in arb_study(), sigma2 in 0.01f64..10.0) {
        let p = evidence_pooled(&study, sigma2).unwrap();
        prop_assert!(p.v.value() >= 1.0);
        if study.group_indices().iter().all(|g| g.len() >= 2) {
            prop_assert!(evidence_pergroup(&study, sigma2).unwrap().v.value() >= 1.0);
        }
    }

    #[test]
    fn shift_and_scale_invariance(
        study in arb_study(),
        sigma2 in 0.1f64..5.0,
        scale in 0.1f64..10.0,
        shift in -100.0f64..100.0,
    ) {
        let moved = transformed(&study, scale, shift);
        let a = evidence_pooled(&study, sigma2).unwrap();
        let b = evidence_pooled(&moved, sigma2 * scale * scale).unwrap();
        prop_assert_eq!(a.v.is_infinite(), b.v.is_infinite());
        if !a.v.is_infinite() {
            // Shifting changes the sum of squares by rounding error only.
            prop_assert!(rel_close(a.log_v, b.log_v, 1e-9), "{} vs {}", a.log_v, b.log_v);
        }
    }

    #[test]
    fn single_group_models_coincide(
        raw in prop::collection::vec(-30i32..30, 2..=12),
        n in 2.0f64..100.0,
        sigma2 in 0.1f64..5.0,
    ) {
        let means: Vec<f64> = raw.iter().map(|&r| r as f64 / 10.0).collect();
        let groups = vec![(0..means.len()).collect::<Vec<_>>()];
        let a = pooled_evidence(&means, &groups, n, sigma2, String::new()).unwrap();
        let b = pergroup_evidence(&means, &groups, n, sigma2, String::new()).unwrap();
        prop_assert_eq!(a.v, b.v);
        prop_assert_eq!(a.rho_hats, b.rho_hats);
    }

    #[test]
    fn effect_sums_of_squares_add_up(study in arb_study()) {
        let table = &study.table;
        let parts = effect_decomposition(table, &BTreeMap::new(), table.total_observations()).unwrap();
        let m = table.total_observations() / table.cells().len() as f64;
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let want = m * table.means().iter().map(|x| x * x).sum::<f64>();
        prop_assert!(rel_close(total, want, 1e-10), "{total} vs {want}");
        let df: u32 = parts.iter().map(|p| p.1).sum();
        prop_assert_eq!(df as usize, table.cells().len());
    }

    #[test]
    fn quadform_positive_for_nonzero_deviation(
        d in prop::collection::vec(-5.0f64..5.0, 1..=12),
        rho in 0.0f64..0.999,
    ) {
        prop_assume!(d.iter().any(|x| x.abs() > 1e-6));
        prop_assert!(equicorr_quadform(&d, rho).unwrap() > 0.0);
    }

    #[test]
    fn stationary_point_is_a_local_maximum(s in 1e-4f64..1.0, dim in 2usize..=20) {
        if let Some(r) = rho_hat(s, dim).unwrap() {
            prop_assert!(s < s_threshold(dim));
            let (n, sigma2) = (10.0, 1.0);
            let ss = s * dim as f64 * sigma2 / n;
            let at = log_chi(r, ss, dim, n, sigma2).unwrap();
            let h = 1e-6 * (1.0 - r).min(r).max(1e-9);
            prop_assert!(at >= log_chi(r - h, ss, dim, n, sigma2).unwrap() - 1e-12);
            prop_assert!(at >= log_chi(r + h, ss, dim, n, sigma2).unwrap() - 1e-12);
        } else {
            prop_assert!(s >= s_threshold(dim));
        }
    }

    #[test]
    fn evidence_decreases_with_scatter(dim in 2usize..=12, s1 in 1e-3f64..1.0, s2 in 1e-3f64..1.0) {
        let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
        let v = |s: f64| {
            let ss = s * dim as f64 / 10.0;
            let mut x = vec![0.0; dim];
            x[0] = (ss / 2.0).sqrt();
            x[1] = -(ss / 2.0).sqrt();
            pooled_evidence(&x, &[(0..dim).collect()], 10.0, 1.0, String::new()).unwrap().log_v
        };
        prop_assert!(v(lo) >= v(hi) - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn density_integrates_to_one(
        rho in 0.0f64..0.8,
        sigma2 in 0.5f64..2.0,
        nu in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let n = 4.0;
        let spec = EquicorrSpec::new(2, rho, sigma2, n).unwrap();
        let sd = (sigma2 / n).sqrt();
        let steps = 400;
        let half = 8.0 * sd;
        let h = 2.0 * half / steps as f64;
        let mut total = 0.0;
        for i in 0..=steps {
            for j in 0..=steps {
                let x = [nu[0] - half + i as f64 * h, nu[1] - half + j as f64 * h];
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 }
                    * if j == 0 || j == steps { 0.5 } else { 1.0 };
                total += w * log_density_pooled(&x, &nu, &spec).unwrap().exp();
            }
        }
        prop_assert!((total * h * h - 1.0).abs() < 1e-6, "{}", total * h * h);
    }
}
