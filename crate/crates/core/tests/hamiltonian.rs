use hjhom::hamiltonian::{BranchId, PiecewiseMonotoneHamiltonian as Hamiltonian};
use proptest::prelude::*;

/// Right half with `bumps` peaks, wells and peaks drawn from `levels`, and
/// a left tail. Values are distinct so critical values never tie.
fn arb_hamiltonian() -> impl Strategy<Value = Hamiltonian> {
    (1usize..=3, prop::collection::vec(0.1f64..5.0, 6), 0.5f64..3.0, 0.5f64..3.0, 0.3f64..1.5).prop_filter_map(
        "distinct critical values",
        |(bumps, raw, left, right, width)| {
            let mut knots = vec![(0.0, 0.0)];
            let mut vals: Vec<f64> = Vec::new();
            for i in 0..bumps {
                let peak = 1.0 + raw[2 * i] + 1.0;
                let well = raw[2 * i + 1].min(peak - 0.5);
                vals.push(peak);
                vals.push(well);
                knots.push((width * (2 * i + 1) as f64, peak));
                knots.push((width * (2 * i + 2) as f64, well));
            }
            let mut sorted = vals.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if sorted.windows(2).any(|w| w[1] - w[0] < 1e-3) {
                return None;
            }
            Hamiltonian::piecewise_linear(&knots, -left, right).ok()
        },
    )
}

fn probes() -> Vec<f64> {
    (0..=400).map(|k| -4.0 + 0.025 * k as f64).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn branch_inverses_round_trip(h in arb_hamiltonian(), t in 0.0f64..1.0) {
        for b in h.branches() {
            let (lo, hi) = b.range;
            let s = if hi.is_finite() { lo + t * (hi - lo) } else { lo + 10.0 * t };
            let p = h.branch_inverse(b.id, s).unwrap();
            prop_assert!((h.evaluate(p) - s).abs() <= 1e-10, "{:?} at {}", b.id, s);
        }
    }

    #[test]
    fn split_halves_recover_h(h in arb_hamiltonian()) {
        let (plus, minus) = h.split_at_zero().unwrap();
        for p in probes() {
            prop_assert!((plus.evaluate(p).min(minus.evaluate(p)) - h.evaluate(p)).abs() <= 1e-12);
        }
        prop_assert_eq!(plus.bumps_left(), 0);
        prop_assert_eq!(minus.bumps_right(), 0);
    }

    #[test]
    fn carving_dominates_and_keeps_the_cut_regions(h in arb_hamiltonian()) {
        let (plus, _) = h.split_at_zero().unwrap();
        prop_assume!(plus.bumps_right() >= 1);
        let cv = plus.critical_values();
        let (k, l) = (cv.argmax_peak().unwrap(), cv.argmin_well().unwrap());
        let carved = if l > k { plus.carve_left(k, l).unwrap() } else { plus.carve_right(k, l).unwrap() };
        let bp = plus.right_breakpoints();
        let inner_cut = bp[2 * k - 1];
        let outer_cut = if l > k { bp[2 * l - 1] } else { inner_cut };
        let o = &carved.outer;
        for p in probes().into_iter().map(|p| 2.0 * p) {
            let hp = plus.evaluate(p);
            let inner = carved.inner.evaluate(p);
            let outer = o.normalized.evaluate(p - o.momentum_shift) + o.energy_shift;
            prop_assert!(inner >= hp - 1e-12 && outer >= hp - 1e-12, "p {}", p);
            if p <= inner_cut {
                prop_assert!((inner - hp).abs() <= 1e-12);
            }
            if p >= outer_cut {
                prop_assert!((outer - hp).abs() <= 1e-12);
            }
        }
        prop_assert!(carved.inner.bumps_right() < plus.bumps_right() || carved.outer.normalized.bumps_right() < plus.bumps_right());
    }

    #[test]
    fn godunov_brackets_h(h in arb_hamiltonian(), a in -3.0f64..6.0, b in -3.0f64..6.0) {
        let g = h.godunov(a, b);
        let (lo, hi) = (a.min(b), a.max(b));
        let samples: Vec<f64> = (0..=200).map(|k| h.evaluate(lo + (hi - lo) * k as f64 / 200.0)).collect();
        let (mn, mx) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(m, n), &v| (m.min(v), n.max(v)));
        if a <= b {
            prop_assert!(g <= mn + 1e-12);
        } else {
            prop_assert!(g >= mx - 1e-12);
        }
    }

    #[test]
    fn reflection_twice_is_identity(h in arb_hamiltonian()) {
        let r = h.reflected().reflected();
        for p in probes() {
            prop_assert!((r.evaluate(p) - h.evaluate(p)).abs() <= 1e-12);
        }
        let (a, b) = (h.reflected().branch(BranchId::Left(1)).unwrap().range, h.branch(BranchId::Right(1)).unwrap().range);
        prop_assert!((a.0 - b.0).abs() <= 1e-12 && a.1 == b.1);
    }
}
