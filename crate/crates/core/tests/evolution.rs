use hjhom::effective::compute_effective;
use hjhom::evolution::*;
use hjhom::hamiltonian::PiecewiseMonotoneHamiltonian as Hamiltonian;
use hjhom::potential::{Field, PeriodicProfile, PotentialModel};
use proptest::prelude::*;

fn w_well() -> Hamiltonian {
    Hamiltonian::piecewise_linear(&[(0.0, 0.0), (1.0, 3.0), (2.0, 1.0)], -3.0, 1.0).unwrap()
}

fn cosine(mbar: f64) -> PotentialModel {
    PotentialModel::Periodic(PeriodicProfile::cosine(mbar).unwrap())
}

fn field(mbar: f64) -> Field {
    cosine(mbar).realize(0, 1)
}

fn short() -> RunWindow {
    RunWindow { half_width: 1.0, horizon: 0.25, snapshots: 5 }
}

#[test]
fn padding_does_not_reach_the_window() {
    let h = w_well();
    let f = field(1.0);
    let flux = Flux::Oscillatory { h: &h, field: &f, eps: 0.2 };
    let a = march(&flux, &InitialData::Cone, short(), 0.2 / 32.0, 1.0).unwrap();
    let b = march(&flux, &InitialData::Cone, short(), 0.2 / 32.0, 2.0).unwrap();
    for (x, y) in a.snapshots.iter().flatten().zip(b.snapshots.iter().flatten()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn constant_offset_passes_through() {
    let h = w_well();
    let f = field(1.0);
    let flux = Flux::Oscillatory { h: &h, field: &f, eps: 0.1 };
    let dx = 0.1 / 32.0;
    let a = march_with(&flux, |x| (1.0 - x.abs()).max(0.0), short(), dx, 1.0).unwrap();
    let b = march_with(&flux, |x| (1.0 - x.abs()).max(0.0) + 0.75, short(), dx, 1.0).unwrap();
    for (x, y) in a.snapshots.iter().flatten().zip(b.snapshots.iter().flatten()) {
        assert!((y - x - 0.75).abs() <= 1e-12);
    }
}

#[test]
fn values_stay_bounded() {
    let h = w_well();
    let f = field(1.0);
    let w = RunWindow::unit();
    let s = solve_oscillatory(&h, &f, 0.2, &InitialData::Cone, w, None).unwrap();
    // slopes stay in [-1, 1], where |H| <= 3
    assert!(s.sup_norm() <= 1.0 + w.horizon * (3.0 + 1.0) + 1e-12);
    assert!(s.dt * h.lipschitz_bound() / s.step <= CFL + 1e-12);
}

#[test]
fn homogenized_slopes_stay_in_range() {
    let curve = compute_effective(&w_well(), &cosine(1.0)).unwrap();
    let table = flux_table_for(&curve, &InitialData::Cone).unwrap();
    let s = solve_homogenized(&table, &InitialData::Cone, RunWindow::unit(), None).unwrap();
    for u in &s.snapshots {
        for w in u.windows(2) {
            let slope = (w[1] - w[0]) / s.step;
            assert!(slope.abs() <= 1.0 + 1e-9, "slope {slope}");
        }
    }
}

#[test]
fn flat_level_plane_wave() {
    // p = 2 lies on the flat at level 1
    let curve = compute_effective(&w_well(), &cosine(1.0)).unwrap();
    let g = InitialData::Plane { slope: 2.0, offset: 0.0 };
    let table = flux_table_for(&curve, &g).unwrap();
    let s = solve_homogenized(&table, &g, RunWindow::unit(), None).unwrap();
    for (j, &t) in s.times.iter().enumerate() {
        for (x, u) in s.window_values(j) {
            assert!((u - (2.0 * x - t)).abs() <= 1e-9, "t {t} x {x}");
        }
    }
}

#[test]
fn no_potential_means_no_homogenization_error() {
    let h = w_well();
    let zero = PotentialModel::Periodic(PeriodicProfile::zero());
    let curve = compute_effective(&h, &zero).unwrap();
    let r = convergence_report(&h, &zero, &curve, &InitialData::Cone, short(), &[0.2, 0.1], GridRule::default()).unwrap();
    for row in &r.rows {
        // the two runs differ only through their grids
        assert!(row.error <= 2.0 * r.homogenized_delta + row.refinement_delta + 1e-3, "{row:?}");
    }
    assert!(r.non_increasing);
}

#[test]
fn rejects_coarse_grids_and_bad_lists() {
    let h = w_well();
    let f = field(1.0);
    assert!(solve_oscillatory(&h, &f, 0.1, &InitialData::Cone, short(), Some(0.01)).is_err());
    let curve = compute_effective(&h, &cosine(1.0)).unwrap();
    assert!(convergence_report(&h, &cosine(1.0), &curve, &InitialData::Cone, short(), &[0.1, 0.2], GridRule::default()).is_err());
}

#[test]
fn csv_lists_every_snapshot() {
    let h = w_well();
    let f = field(1.0);
    let s = solve_oscillatory(&h, &f, 0.5, &InitialData::Cone, short(), None).unwrap();
    let csv = s.to_csv();
    assert_eq!(csv.lines().count(), 1 + s.times.len() * s.snapshots[0].len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ordered_data_stay_ordered(a in 0.0f64..0.5, c in -1.0f64..1.0, w in 0.3f64..2.0) {
        let h = w_well();
        let f = field(1.0);
        let flux = Flux::Oscillatory { h: &h, field: &f, eps: 0.25 };
        let low = |x: f64| (1.0 - x.abs()).max(0.0);
        let high = |x: f64| low(x).max(a * (x * w).sin() + c);
        let dx = 0.25 / 32.0;
        let u1 = march_with(&flux, low, short(), dx, 1.0).unwrap();
        let u2 = march_with(&flux, high, short(), dx, 1.0).unwrap();
        for (x, y) in u1.snapshots.iter().flatten().zip(u2.snapshots.iter().flatten()) {
            prop_assert!(*x <= y + 1e-12);
        }
    }
}
