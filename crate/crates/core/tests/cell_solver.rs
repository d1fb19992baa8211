use hjhom::cell_solver::*;
use hjhom::hamiltonian::PiecewiseMonotoneHamiltonian as Hamiltonian;
use hjhom::potential::{DepthDist, PeriodicProfile, PotentialModel, Window};
use proptest::prelude::*;

fn w_well() -> Hamiltonian {
    Hamiltonian::piecewise_linear(&[(0.0, 0.0), (1.0, 3.0), (2.0, 1.0)], -3.0, 1.0).unwrap()
}

fn cosine(mbar: f64) -> PotentialModel {
    PotentialModel::Periodic(PeriodicProfile::cosine(mbar).unwrap())
}

#[test]
fn fixture_momenta_match_the_formula() {
    let h = w_well();
    let ps = [-1.0, 0.5, 1.5, 2.0, 3.0];
    let want = [2.5, 1.0, 1.5, 1.0, 1.5];
    let est = estimate_many(&h, &cosine(1.0), &ps, &DEFAULT_LAMBDAS, Some(1.0 / 512.0)).unwrap();
    for (e, w) in est.iter().zip(want) {
        assert!((e.value - w).abs() <= 0.05, "p {}: {} vs {w}", e.p, e.value);
        assert!(e.value >= -1e-3);
        assert!(e.runs.iter().all(|r| r.residual <= STALL_TOL));
    }
}

#[test]
fn flat_momenta_agree() {
    let h = w_well();
    let est = estimate_many(&h, &cosine(1.0), &[1.9, 2.1, 2.3], &DEFAULT_LAMBDAS, None).unwrap();
    for a in &est {
        for b in &est {
            let bar = 2.0 * a.error_bar.max(b.error_bar);
            assert!((a.value - b.value).abs() <= bar.max(1e-7), "{} vs {}", a.value, b.value);
        }
    }
}

#[test]
fn deeper_potential_lowers_the_estimate() {
    // cosine profiles are nonpositive, so scaling up lowers V pointwise;
    // the solution for the higher V is then a subsolution for the lower one
    let h = w_well();
    for p in [-0.5, 0.5, 2.7] {
        let shallow = estimate_hbar(&h, &cosine(0.8), p, &[1e-2], None).unwrap();
        let deep = estimate_hbar(&h, &cosine(1.2), p, &[1e-2], None).unwrap();
        assert!(deep.value <= shallow.value + 1e-8, "p {p}: {} vs {}", deep.value, shallow.value);
    }
}

#[test]
fn halving_the_grid_settles() {
    let h = w_well();
    let w = cosine(1.0).window(1);
    let est: Vec<f64> = [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0]
        .iter()
        .map(|&dx| solve_discounted(&h, &w, 0.5, 1e-2, dx, 1e-10).unwrap().estimate())
        .collect();
    assert!((est[2] - est[1]).abs() <= (est[1] - est[0]).abs() + 1e-9, "{est:?}");
}

#[test]
fn doubling_a_random_window_stays_within_truncation() {
    let h = w_well();
    let model = PotentialModel::BlockRandom { depth: DepthDist::Uniform([0.5, 1.0]), seed: 7 };
    let (p, lambda) = (3.0, 0.1);
    let (window, _) = cell_window(&h, &model, p, lambda);
    let r = window.hi;
    let wide = Window { field: model.realize(-2 * r as i64, 4 * r as usize), lo: -2.0 * r, hi: 2.0 * r, cyclic: false };
    let dx = 1.0 / 32.0;
    let a = solve_discounted(&h, &window, p, lambda, dx, 1e-9).unwrap().estimate();
    let b = solve_discounted(&h, &wide, p, lambda, dx, 1e-9).unwrap().estimate();
    let c = h.evaluate(p) + model.mbar();
    let bound = truncation_error_bound(c, lambda * r, 0.0);
    assert!((a - b).abs() <= bound, "{a} vs {b}, bound {bound}");
}

#[test]
fn rejects_bad_inputs() {
    let h = w_well();
    let w = cosine(1.0).window(1);
    assert!(solve_discounted(&h, &w, 0.5, 0.0, 1.0 / 128.0, 1e-8).is_err());
    assert!(solve_discounted(&h, &w, 0.5, 1e-2, 0.1, 1e-8).is_err());
    assert!(estimate_hbar(&h, &cosine(1.0), 0.5, &[1e-3, 1e-2], None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // the discounted scheme is monotone, so its estimate stays above the
    // smallest value of H minus the oscillation and below H(p)
    #[test]
    fn estimate_within_trivial_bounds(p in -2.0f64..4.0, mbar in 0.1f64..2.0) {
        let h = w_well();
        let e = estimate_hbar(&h, &cosine(mbar), p, &[1e-2], Some(1.0 / 128.0)).unwrap();
        prop_assert!(e.value >= -mbar - 1e-6);
        prop_assert!(e.value <= h.evaluate(p) + 1e-6);
    }
}
