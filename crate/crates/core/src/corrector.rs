//! Slope fields solving the metric problem `H(u') + V(y) = mu`.
//!
//! At a fixed level `mu` the line splits into intervals on which `mu - V`
//! stays away from the critical values of `H`. On each interval a solution
//! follows one branch inverse `psi_j(mu - V)`, and consecutive choices must
//! pass a one-sided viscosity test at the junction. The choices form a
//! layered graph; pruning nodes that cannot be extended in both directions
//! leaves exactly the branches used by some admissible field, so the
//! pointwise largest and smallest admissible fields are read off per
//! interval.
//!
//! Only nonnegative fields are built here, from the branches on the right
//! of the origin, plus the left tail branch for the level-zero
//! subsolutions. Those need a Hamiltonian without left bumps.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{BranchId, PiecewiseMonotoneHamiltonian as Hamiltonian};
use crate::potential::{Estimate, PotentialModel, Window, DEFAULT_CELLS};

/// Slack in energy units for the junction tests.
pub const JUNCTION_TOL: f64 = 1e-9;

/// Levels within this distance of a tangential touch are moved onto it.
pub const SNAP_TOL: f64 = 1e-6;

const TOUCH_TOL: f64 = 1e-12;

/// `psi_j(s)` for a right branch, with `s` clamped into the branch range.
pub fn psi(h: &Hamiltonian, j: usize, s: f64) -> f64 {
    branch_value(h, BranchId::Right(j), s)
}

/// Inverse of branch `id` at `s`, with `s` clamped into the branch range.
pub fn branch_value(h: &Hamiltonian, id: BranchId, s: f64) -> f64 {
    let br = h.branch(id).expect("branch index in range");
    h.branch_inverse(id, s.clamp(br.range.0, br.range.1)).expect("clamped energy")
}

/// Viscosity test at a jump of the slope from `f_left` to `f_right` at a
/// point where the potential equals `v_at_a`.
///
/// A downward jump must satisfy the subsolution test on the superdifferential
/// `[f_right, f_left]`; an upward jump the supersolution test on the
/// subdifferential `[f_left, f_right]`.
pub fn junction_admissible(h: &Hamiltonian, v_at_a: f64, mu: f64, f_left: f64, f_right: f64) -> bool {
    jump_ok(h, mu - v_at_a, f_left, f_right, JUNCTION_TOL)
}

fn jump_ok(h: &Hamiltonian, level: f64, fl: f64, fr: f64, tol: f64) -> bool {
    if fl == fr {
        true
    } else if fl > fr {
        h.max_on(fr, fl) <= level + tol
    } else {
        h.min_on(fl, fr) >= level - tol
    }
}

/// Lower and upper ends of the level range where admissible
/// decompositions are used: `max(0, min well - mbar)` and the highest peak.
/// `None` when the Hamiltonian has no right bumps.
pub fn level_range(h: &Hamiltonian, mbar: f64) -> Option<(f64, f64)> {
    let cv = h.critical_values();
    Some((cv.min_well()? - mbar, cv.max_peak()?))
}

/// Whether `mu` lies in the open level range (and is nonnegative).
pub fn in_level_range(h: &Hamiltonian, mbar: f64, mu: f64) -> bool {
    match level_range(h, mbar) {
        Some((lo, hi)) => mu >= 0.0 && mu > lo && mu < hi,
        None => false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Junction {
    pub y: f64,
    /// Critical value of `H` met by `mu - V` here.
    pub energy: f64,
    /// `mu - V` touches the critical value without crossing it.
    pub touch: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    /// Range of `mu - V` over the interval.
    pub s_min: f64,
    pub s_max: f64,
    /// Right branch indices defined on the whole interval, ascending.
    pub feasible: Vec<usize>,
}

/// The junctions and intervals of a window at level `mu`.
///
/// In a cyclic window interval `i` runs from junction `i` to junction
/// `i + 1`, the last one wrapping past the period. In a path window the
/// first interval starts at the window's left end and interval `i` ends at
/// junction `i`.
#[derive(Clone, Debug, Serialize)]
pub struct Decomposition {
    #[serde(skip)]
    pub h: Hamiltonian,
    #[serde(skip)]
    pub window: Arc<Window>,
    pub mu: f64,
    pub requested_mu: f64,
    pub junctions: Vec<Junction>,
    pub intervals: Vec<Interval>,
    #[serde(skip)]
    masses: Vec<Vec<Option<f64>>>,
}

impl Decomposition {
    /// Builds the decomposition; `mu` must lie in the admissible level range.
    pub fn new(h: &Hamiltonian, window: Arc<Window>, mu: f64) -> Result<Self> {
        let mbar = window.field.mbar();
        if !in_level_range(h, mbar, mu) {
            let (lo, hi) = level_range(h, mbar).unwrap_or((f64::NAN, f64::NAN));
            return Err(Error::LevelOutside { mu, lo: lo.max(0.0), hi });
        }
        Self::build(h, window, mu)
    }

    /// Same as [`Decomposition::new`] without the level-range check.
    pub fn build(h: &Hamiltonian, window: Arc<Window>, requested_mu: f64) -> Result<Self> {
        Self::build_with(h, window, requested_mu, true)
    }

    /// Decomposition at exactly `mu`, without moving onto nearby touches.
    pub fn exact(h: &Hamiltonian, window: Arc<Window>, mu: f64) -> Result<Self> {
        Self::build_with(h, window, mu, false)
    }

    fn build_with(h: &Hamiltonian, window: Arc<Window>, requested_mu: f64, snap: bool) -> Result<Self> {
        if h.bumps_left() != 0 {
            return Err(Error::Precondition("admissible decompositions need a Hamiltonian without left bumps".into()));
        }
        let cv = h.critical_values();
        let mut energies: Vec<f64> = cv.wells.iter().chain(&cv.peaks).copied().collect();
        energies.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let (lo, hi) = (window.lo, window.hi);
        let crit = window.field.critical_points(lo - 1e-12, hi - 1e-12);
        let mu = if snap { snap_level(requested_mu, &energies, &crit, &window) } else { requested_mu };

        let mut junctions: Vec<Junction> = Vec::new();
        for &c in &energies {
            for &(y, _) in &crit {
                if (mu - window.value(y) - c).abs() <= TOUCH_TOL * c.max(1.0) {
                    junctions.push(Junction { y, energy: c, touch: true });
                }
            }
        }
        for &c in &energies {
            for y in window.field.crossings(lo, hi, mu - c) {
                let near_touch = junctions.iter().any(|j| j.touch && j.energy == c && (j.y - y).abs() < 1e-6);
                if !near_touch {
                    junctions.push(Junction { y, energy: c, touch: false });
                }
            }
        }
        junctions.sort_by(|a, b| a.y.partial_cmp(&b.y).unwrap());
        junctions.dedup_by(|a, b| (a.y - b.y).abs() < 1e-13);

        let mut spans = Vec::new();
        if window.cyclic {
            let n = junctions.len();
            if n == 0 {
                spans.push((lo, hi));
            }
            for i in 0..n {
                let a = junctions[i].y;
                let b = if i + 1 < n { junctions[i + 1].y } else { junctions[0].y + (hi - lo) };
                spans.push((a, b));
            }
        } else {
            let mut a = lo;
            for j in &junctions {
                spans.push((a, j.y));
                a = j.y;
            }
            spans.push((a, hi));
        }
        let branches = 2 * h.bumps_right() + 1;
        let intervals: Vec<Interval> = spans
            .into_iter()
            .map(|(a, b)| {
                let mut vmin = window.value(a).min(window.value(b));
                let mut vmax = window.value(a).max(window.value(b));
                for (y, _) in window.field.critical_points(a, b) {
                    vmin = vmin.min(window.value(y));
                    vmax = vmax.max(window.value(y));
                }
                let (s_min, s_max) = (mu - vmax, mu - vmin);
                let feasible = (1..=branches)
                    .filter(|&j| {
                        let r = h.branch(BranchId::Right(j)).unwrap().range;
                        let slack = 1e-10 * s_max.abs().max(1.0);
                        s_min >= r.0 - slack && s_max <= r.1 + slack
                    })
                    .collect();
                Interval { lo: a, hi: b, s_min, s_max, feasible }
            })
            .collect();
        let masses = intervals
            .iter()
            .map(|iv| {
                (0..=branches)
                    .map(|j| iv.feasible.contains(&j).then(|| branch_mass(h, &window, mu, j, iv.lo, iv.hi)))
                    .collect()
            })
            .collect();
        Ok(Decomposition { h: h.clone(), window, mu, requested_mu, junctions, intervals, masses })
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn branch_count(&self) -> usize {
        2 * self.h.bumps_right() + 1
    }

    /// Junction at the right end of interval `i`, with the interval after it.
    pub fn right_junction(&self, i: usize) -> Option<(usize, usize)> {
        let n = self.intervals.len();
        if self.window.cyclic {
            if self.junctions.is_empty() {
                None
            } else {
                Some(((i + 1) % n, (i + 1) % n))
            }
        } else if i < self.junctions.len() {
            Some((i, i + 1))
        } else {
            None
        }
    }

    /// Whether branch `a` on interval `i` may be followed by branch `b` on
    /// the next interval.
    pub fn edge_ok(&self, i: usize, a: usize, b: usize) -> bool {
        let Some((jn, next)) = self.right_junction(i) else { return false };
        if !self.intervals[i].feasible.contains(&a) || !self.intervals[next].feasible.contains(&b) {
            return false;
        }
        let c = self.junctions[jn].energy;
        jump_ok(&self.h, c, psi(&self.h, a, c), psi(&self.h, b, c), JUNCTION_TOL)
    }

    /// `int psi_j(mu - V)` over interval `i`.
    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.masses[i][j].expect("feasible branch")
    }

    /// Branches on interval `i` that belong to some admissible field.
    pub fn survivors(&self) -> Vec<Vec<usize>> {
        let n = self.intervals.len();
        let mut alive: Vec<Vec<usize>> = self.intervals.iter().map(|iv| iv.feasible.clone()).collect();
        if self.junctions.is_empty() {
            return alive;
        }
        loop {
            let mut changed = false;
            for i in 0..n {
                let keep: Vec<usize> = alive[i]
                    .iter()
                    .copied()
                    .filter(|&a| {
                        let fwd = match self.right_junction(i) {
                            Some((_, nx)) => alive[nx].iter().any(|&b| self.edge_ok(i, a, b)),
                            None => true,
                        };
                        let back = match self.left_neighbor(i) {
                            Some(pv) => alive[pv].iter().any(|&b| self.edge_ok(pv, b, a)),
                            None => true,
                        };
                        fwd && back
                    })
                    .collect();
                if keep.len() != alive[i].len() {
                    alive[i] = keep;
                    changed = true;
                }
            }
            if !changed {
                return alive;
            }
        }
    }

    fn left_neighbor(&self, i: usize) -> Option<usize> {
        let n = self.intervals.len();
        if self.window.cyclic {
            (!self.junctions.is_empty()).then_some((i + n - 1) % n)
        } else {
            i.checked_sub(1)
        }
    }

    /// Whether the assignment passes every junction and feasibility check.
    pub fn is_admissible(&self, branches: &[usize]) -> bool {
        if branches.len() != self.intervals.len() {
            return false;
        }
        for (i, &j) in branches.iter().enumerate() {
            if !self.intervals[i].feasible.contains(&j) {
                return false;
            }
            if let Some((_, nx)) = self.right_junction(i) {
                if !self.edge_ok(i, j, branches[nx]) {
                    return false;
                }
            } else if self.window.cyclic && branches[0] != j {
                return false;
            }
        }
        true
    }
}

fn snap_level(mu: f64, energies: &[f64], crit: &[(f64, bool)], window: &Window) -> f64 {
    let mut best = mu;
    let mut dist = f64::INFINITY;
    for &(y, _) in crit {
        let v = window.value(y);
        for &c in energies {
            let cand = c + v;
            let d = (cand - mu).abs();
            if d <= SNAP_TOL && d < dist {
                best = cand;
                dist = d;
            }
        }
    }
    best
}

fn branch_mass(h: &Hamiltonian, window: &Window, mu: f64, j: usize, a: f64, b: f64) -> f64 {
    let levels: Vec<f64> = h.branch_kinks(BranchId::Right(j)).into_iter().map(|s| mu - s).collect();
    window.field.integrate(a, b, &levels, |v| psi(h, j, mu - v))
}

/// A choice of right branch per interval.
#[derive(Clone, Debug, Serialize)]
pub struct AdmissibleSelection {
    pub decomposition: Arc<Decomposition>,
    pub branches: Vec<usize>,
}

impl AdmissibleSelection {
    pub fn mu(&self) -> f64 {
        self.decomposition.mu
    }

    pub fn mass(&self) -> f64 {
        self.branches.iter().enumerate().map(|(i, &j)| self.decomposition.mass(i, j)).sum()
    }

    pub fn expected_slope(&self) -> Estimate {
        self.to_field(Provenance::Selection).expected_slope()
    }

    pub fn to_field(&self, provenance: Provenance) -> SlopeField {
        let d = &self.decomposition;
        let pieces = d
            .intervals
            .iter()
            .zip(&self.branches)
            .map(|(iv, &j)| FieldPiece { lo: iv.lo, hi: iv.hi, rule: SlopeRule::Branch(BranchId::Right(j)) })
            .collect();
        SlopeField { h: d.h.clone(), window: d.window.clone(), mu: d.mu, pieces, provenance }
    }
}

/// Decomposition for `mu` on a model's default window.
pub fn decompose(h: &Hamiltonian, window: Arc<Window>, mu: f64) -> Result<Decomposition> {
    Decomposition::new(h, window, mu)
}

fn extremal(decomp: Decomposition, pick_max_index: bool) -> Result<AdmissibleSelection> {
    extremal_on(Arc::new(decomp), pick_max_index)
}

fn extremal_on(decomp: Arc<Decomposition>, pick_max_index: bool) -> Result<AdmissibleSelection> {
    let alive = decomp.survivors();
    let mut branches = Vec::with_capacity(alive.len());
    for (i, a) in alive.iter().enumerate() {
        let j = if pick_max_index { a.iter().max() } else { a.iter().min() };
        match j {
            Some(&j) => branches.push(j),
            None => {
                return Err(Error::NoSelection(format!(
                    "no admissible branch on interval {i} ({}, {}) at level {}",
                    decomp.intervals[i].lo, decomp.intervals[i].hi, decomp.mu
                )))
            }
        }
    }
    Ok(AdmissibleSelection { decomposition: decomp, branches })
}

/// Pointwise largest admissible field: the smallest surviving branch index
/// on each interval, branches being ordered by decreasing momentum.
pub fn sup_admissible(h: &Hamiltonian, window: Arc<Window>, mu: f64) -> Result<AdmissibleSelection> {
    extremal(Decomposition::new(h, window, mu)?, false)
}

/// Pointwise smallest admissible field.
pub fn inf_admissible(h: &Hamiltonian, window: Arc<Window>, mu: f64) -> Result<AdmissibleSelection> {
    extremal(Decomposition::new(h, window, mu)?, true)
}

/// Where the slope on a piece comes from, as a function of `s = mu - V`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum SlopeRule {
    Branch(BranchId),
    /// `weight * upper(s) + (1 - weight) * lower(s)`.
    Blend { weight: f64, upper: BranchId, lower: BranchId },
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FieldPiece {
    pub lo: f64,
    pub hi: f64,
    pub rule: SlopeRule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Selection,
    Interpolation,
    MonotoneSolution,
    Subsolution,
}

/// A piecewise description of `u'` on a window.
#[derive(Clone, Debug, Serialize)]
pub struct SlopeField {
    #[serde(skip)]
    pub h: Hamiltonian,
    #[serde(skip)]
    pub window: Arc<Window>,
    pub mu: f64,
    /// Contiguous pieces covering the window (one period when cyclic).
    pub pieces: Vec<FieldPiece>,
    pub provenance: Provenance,
}

impl SlopeField {
    fn rule_value(&self, rule: SlopeRule, y: f64) -> f64 {
        let s = self.mu - self.window.value(y);
        match rule {
            SlopeRule::Branch(id) => branch_value(&self.h, id, s),
            SlopeRule::Blend { weight, upper, lower } => {
                weight * branch_value(&self.h, upper, s) + (1.0 - weight) * branch_value(&self.h, lower, s)
            }
            SlopeRule::Constant(c) => c,
        }
    }

    fn locate(&self, y: f64) -> (usize, f64) {
        let mut y = y;
        if self.window.cyclic {
            let first = self.pieces[0].lo;
            let period = self.window.length();
            y = first + (y - first).rem_euclid(period);
        }
        let i = self.pieces.partition_point(|p| p.hi <= y).min(self.pieces.len() - 1);
        (i, y)
    }

    /// `f(y)`, taking the right limit at piece boundaries.
    pub fn value(&self, y: f64) -> f64 {
        let (i, y) = self.locate(y);
        self.rule_value(self.pieces[i].rule, y)
    }

    fn piece_mass(&self, p: &FieldPiece, a: f64, b: f64) -> f64 {
        let rule = p.rule;
        let kinks = |id: BranchId| self.h.branch_kinks(id).into_iter().map(|s| self.mu - s).collect::<Vec<_>>();
        let levels = match rule {
            SlopeRule::Branch(id) => kinks(id),
            SlopeRule::Blend { upper, lower, .. } => {
                let mut l = kinks(upper);
                l.extend(kinks(lower));
                l
            }
            SlopeRule::Constant(_) => Vec::new(),
        };
        let mu = self.mu;
        self.window.field.integrate(a, b, &levels, |v| match rule {
            SlopeRule::Branch(id) => branch_value(&self.h, id, mu - v),
            SlopeRule::Blend { weight, upper, lower } => {
                weight * branch_value(&self.h, upper, mu - v) + (1.0 - weight) * branch_value(&self.h, lower, mu - v)
            }
            SlopeRule::Constant(c) => c,
        })
    }

    /// `int f` over the whole field.
    pub fn mass(&self) -> f64 {
        self.pieces.iter().map(|p| self.piece_mass(p, p.lo, p.hi)).sum()
    }

    /// `int f` over `[a, b]` inside the covered range.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        self.pieces
            .iter()
            .filter(|p| p.hi > a && p.lo < b)
            .map(|p| self.piece_mass(p, p.lo.max(a), p.hi.min(b)))
            .sum()
    }

    /// Period average, or the window average with a standard error from
    /// unit-length blocks.
    pub fn expected_slope(&self) -> Estimate {
        if self.window.cyclic {
            return Estimate { mean: self.mass() / self.window.length(), stderr: 0.0 };
        }
        let (lo, hi) = (self.window.lo, self.window.hi);
        let cells = (hi - lo).floor().max(1.0) as usize;
        let width = (hi - lo) / cells as f64;
        let per: Vec<f64> =
            (0..cells).map(|k| self.mass_between(lo + width * k as f64, lo + width * (k + 1) as f64) / width).collect();
        Estimate::from_samples(&per)
    }

    /// Points where the rule changes, with the pieces on either side.
    fn boundaries(&self) -> Vec<(f64, usize, usize)> {
        let n = self.pieces.len();
        let mut out: Vec<(f64, usize, usize)> = (0..n - 1).map(|i| (self.pieces[i].hi, i, i + 1)).collect();
        if self.window.cyclic {
            out.push((self.pieces[0].lo, n - 1, 0));
        }
        out
    }

    /// Samples `y, f` at `per_piece` points per piece.
    pub fn to_csv(&self, per_piece: usize) -> String {
        let mut s = String::from("y,f\n");
        for p in &self.pieces {
            for k in 0..per_piece {
                let y = p.lo + (p.hi - p.lo) * k as f64 / per_piece as f64;
                s.push_str(&format!("{},{}\n", y, self.rule_value(p.rule, y)));
            }
        }
        s
    }
}

/// What [`verify_metric_solution`] checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    /// `H(f) + V = mu` with two-sided junction tests.
    Solution,
    /// `H(f) + V <= mu + delta` with the subsolution test at downward jumps.
    Subsolution { delta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JunctionVerdict {
    pub y: f64,
    pub left: f64,
    pub right: f64,
    /// `mu - V(y)` (plus `delta` for subsolutions).
    pub level: f64,
    pub admissible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub mode: VerifyMode,
    /// Largest equation defect on the smooth pieces; for subsolutions only
    /// the positive part counts.
    pub residual: f64,
    pub min_slope: f64,
    pub junctions: Vec<JunctionVerdict>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failing_junctions(&self) -> Vec<&JunctionVerdict> {
        self.junctions.iter().filter(|j| !j.admissible).collect()
    }
}

/// Checks a slope field against the metric problem at its level.
pub fn verify_metric_solution(field: &SlopeField, mode: VerifyMode, tol: f64) -> VerifyReport {
    let h = &field.h;
    let delta = match mode {
        VerifyMode::Solution => 0.0,
        VerifyMode::Subsolution { delta } => delta,
    };
    let mut residual: f64 = 0.0;
    let mut min_slope = f64::INFINITY;
    for p in &field.pieces {
        let mut ys: Vec<f64> = (0..=64).map(|k| p.lo + (p.hi - p.lo) * k as f64 / 64.0).collect();
        ys.extend(field.window.field.critical_points(p.lo, p.hi).into_iter().map(|c| c.0));
        for y in ys {
            let y = y.clamp(p.lo, p.hi);
            let f = field.rule_value(p.rule, y);
            min_slope = min_slope.min(f);
            let defect = h.evaluate(f) + field.window.value(y) - field.mu;
            let r = match mode {
                VerifyMode::Solution => defect.abs(),
                VerifyMode::Subsolution { .. } => (defect - delta).max(0.0),
            };
            residual = residual.max(r);
        }
    }
    let mut junctions = Vec::new();
    for (y, a, b) in field.boundaries() {
        let (pa, pb) = (&field.pieces[a], &field.pieces[b]);
        let left = field.rule_value(pa.rule, pa.hi);
        let right = field.rule_value(pb.rule, pb.lo);
        let level = field.mu + delta - field.window.value(y);
        let admissible = match mode {
            VerifyMode::Solution => jump_ok(h, level, left, right, JUNCTION_TOL),
            VerifyMode::Subsolution { .. } => left <= right || h.max_on(right, left) <= level + JUNCTION_TOL,
        };
        junctions.push(JunctionVerdict { y, left, right, level, admissible });
    }
    let passed = residual <= tol && junctions.iter().all(|j| j.admissible);
    VerifyReport { mode, residual, min_slope, junctions, passed }
}

/// A closed interval of average slopes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlopeInterval {
    pub lo: f64,
    pub hi: f64,
    /// Standard error of the endpoints (zero for periodic models).
    pub stderr: f64,
    /// Level after snapping onto a nearby tangential touch.
    pub mu: f64,
}

/// Admissible field of least (or, with `maximize`, largest) mass among
/// those sharing a branch or a junction value with `reference`. Cyclic
/// windows close the loop; path windows leave the ends free.
///
/// Starting from the largest field this reaches down through the family of
/// fields connected to it, which is the whole range between the extremal
/// fields when they meet somewhere.
pub fn anchored_companion(upper: &AdmissibleSelection, maximize: bool) -> Result<AdmissibleSelection> {
    let d = &upper.decomposition;
    let sign = if maximize { -1.0 } else { 1.0 };
    let n = d.len();
    let alive = d.survivors();
    if d.junctions.is_empty() {
        return Ok(upper.clone());
    }
    let anchored_at = |i: usize, a: usize, b: usize| -> bool {
        // junction after interval i, branches a | b
        let Some((jn, nx)) = d.right_junction(i) else { return false };
        let c = d.junctions[jn].energy;
        let same = |x: usize, y: usize| (psi(&d.h, x, c) - psi(&d.h, y, c)).abs() <= 1e-12;
        same(a, upper.branches[i]) && same(b, upper.branches[nx])
    };
    let inf = f64::INFINITY;
    let nb = d.branch_count() + 1;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let starts: Vec<Option<usize>> = if d.window.cyclic { alive[0].iter().map(|&b| Some(b)).collect() } else { vec![None] };
    for start in starts {
        // cost[j][flag], with back-pointers per interval
        let mut cost = vec![[inf; 2]; nb];
        let mut back: Vec<Vec<[(usize, usize); 2]>> = vec![vec![[(0, 0); 2]; nb]; n];
        for &j in &alive[0] {
            if start.is_some_and(|s| s != j) {
                continue;
            }
            let flag = usize::from(j == upper.branches[0]);
            cost[j][flag] = sign * d.mass(0, j);
        }
        for i in 1..n {
            let mut next = vec![[inf; 2]; nb];
            for &b in &alive[i] {
                for &a in &alive[i - 1] {
                    if !d.edge_ok(i - 1, a, b) {
                        continue;
                    }
                    for flag in 0..2 {
                        if cost[a][flag] == inf {
                            continue;
                        }
                        let nf = flag.max(usize::from(b == upper.branches[i] || anchored_at(i - 1, a, b)));
                        let c = cost[a][flag] + sign * d.mass(i, b);
                        if c < next[b][nf] {
                            next[b][nf] = c;
                            back[i][b][nf] = (a, flag);
                        }
                    }
                }
            }
            cost = next;
        }
        for &last in &alive[n - 1] {
            for flag in 0..2 {
                if cost[last][flag] == inf {
                    continue;
                }
                let final_flag = match start {
                    Some(s) => {
                        if !d.edge_ok(n - 1, last, s) {
                            continue;
                        }
                        flag.max(usize::from(anchored_at(n - 1, last, s)))
                    }
                    None => flag,
                };
                if final_flag == 0 {
                    continue;
                }
                let c = cost[last][flag];
                if best.as_ref().is_none_or(|b| c < b.0) {
                    let mut branches = vec![0; n];
                    let (mut j, mut f) = (last, flag);
                    for i in (0..n).rev() {
                        branches[i] = j;
                        if i > 0 {
                            let (pj, pf) = back[i][j][f];
                            j = pj;
                            f = pf;
                        }
                    }
                    best = Some((c, branches));
                }
            }
        }
    }
    let (_, branches) = best.ok_or_else(|| Error::Internal("extremal field has no anchored companion".into()))?;
    Ok(AdmissibleSelection { decomposition: upper.decomposition.clone(), branches })
}

/// Field used outside the admissible level range: the innermost branch
/// below it and the outer tail branch above it.
pub(crate) fn outside_branch(h: &Hamiltonian, mbar: f64, mu: f64) -> usize {
    let cv = h.critical_values();
    match cv.min_well() {
        Some(m) if mu <= m - mbar => 2 * h.bumps_right() + 1,
        Some(_) => 1,
        None => 1,
    }
}

pub(crate) fn single_branch_field(h: &Hamiltonian, window: Arc<Window>, mu: f64, j: usize, provenance: Provenance) -> SlopeField {
    let (lo, hi) = (window.lo, window.hi);
    SlopeField {
        h: h.clone(),
        window,
        mu,
        pieces: vec![FieldPiece { lo, hi, rule: SlopeRule::Branch(BranchId::Right(j)) }],
        provenance,
    }
}

/// Range of average slopes of admissible fields at level `mu` connected to
/// one of the extremal fields. When only one of the two families has
/// positive width, that one is returned; the largest field's family wins
/// ties. Outside the admissible level range it is the single point given
/// by the unique branch.
pub fn flat_interval(h: &Hamiltonian, model: &PotentialModel, mu: f64) -> Result<SlopeInterval> {
    flat_interval_on(h, Arc::new(model.window(DEFAULT_CELLS)), mu)
}

pub fn flat_interval_on(h: &Hamiltonian, window: Arc<Window>, mu: f64) -> Result<SlopeInterval> {
    let mbar = window.field.mbar();
    if !in_level_range(h, mbar, mu) {
        let j = outside_branch(h, mbar, mu);
        let e = single_branch_field(h, window, mu, j, Provenance::Selection).expected_slope();
        return Ok(SlopeInterval { lo: e.mean, hi: e.mean, stderr: e.stderr, mu });
    }
    let (lower, upper) = flat_pair(h, window, mu)?;
    let (eu, el) = (upper.expected_slope(), lower.expected_slope());
    Ok(SlopeInterval { lo: el.mean, hi: eu.mean, stderr: eu.stderr.max(el.stderr), mu: upper.mu() })
}

/// Bottom and top selections of the family behind [`flat_interval`].
pub fn flat_pair(h: &Hamiltonian, window: Arc<Window>, mu: f64) -> Result<(AdmissibleSelection, AdmissibleSelection)> {
    let decomp = Arc::new(Decomposition::new(h, window, mu)?);
    let top = extremal_on(decomp.clone(), false)?;
    let bottom = extremal_on(decomp, true)?;
    let below_top = anchored_companion(&top, false)?;
    let above_bottom = anchored_companion(&bottom, true)?;
    let width = |lo: &AdmissibleSelection, hi: &AdmissibleSelection| hi.mass() - lo.mass();
    let tol = 1e-12 * top.mass().abs().max(1.0);
    if width(&below_top, &top) > tol || width(&bottom, &above_bottom) <= tol {
        Ok((below_top, top))
    } else {
        Ok((bottom, above_bottom))
    }
}

/// Average slope of the largest admissible field at exactly `mu` (the
/// unique branch outside the level range), without snapping.
pub fn upper_average(h: &Hamiltonian, window: Arc<Window>, mu: f64) -> Result<f64> {
    let mbar = window.field.mbar();
    if !in_level_range(h, mbar, mu) {
        let j = outside_branch(h, mbar, mu);
        return Ok(single_branch_field(h, window, mu, j, Provenance::Selection).expected_slope().mean);
    }
    Ok(extremal(Decomposition::exact(h, window, mu)?, false)?.expected_slope().mean)
}

/// One branch change on one interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Step {
    pub interval: usize,
    pub from: usize,
    pub to: usize,
}

/// Chain of single-index decrements turning `lower` into `upper`, each
/// intermediate assignment admissible.
pub fn homotopy_chain(d: &Decomposition, lower: &[usize], upper: &[usize]) -> Result<Vec<Step>> {
    let mut cur = lower.to_vec();
    let mut steps = Vec::new();
    if !d.is_admissible(&cur) || !d.is_admissible(upper) {
        return Err(Error::Precondition("chain ends must be admissible".into()));
    }
    if cur.iter().zip(upper).any(|(a, b)| a < b) {
        return Err(Error::Precondition("upper selection must dominate the lower one".into()));
    }
    let mut budget = 64 * cur.len() * d.branch_count() + 64;
    while cur != upper {
        let mut moved = false;
        for i in 0..cur.len() {
            if cur[i] == upper[i] {
                continue;
            }
            let mut next = cur.clone();
            next[i] -= 1;
            if d.is_admissible_near(&next, i) {
                steps.push(Step { interval: i, from: cur[i], to: next[i] });
                cur = next;
                moved = true;
                break;
            }
        }
        if !moved {
            return Err(Error::Internal("no admissible single-branch step toward the upper selection".into()));
        }
        budget -= 1;
        if budget == 0 {
            return Err(Error::Internal("homotopy chain did not terminate".into()));
        }
    }
    Ok(steps)
}

impl Decomposition {
    /// Admissibility check limited to interval `i` and its two junctions.
    fn is_admissible_near(&self, b: &[usize], i: usize) -> bool {
        if !self.intervals[i].feasible.contains(&b[i]) {
            return false;
        }
        if let Some((_, nx)) = self.right_junction(i) {
            if !self.edge_ok(i, b[i], b[nx]) {
                return false;
            }
        }
        if let Some(pv) = self.left_neighbor(i) {
            if !self.edge_ok(pv, b[pv], b[i]) {
                return false;
            }
        }
        true
    }
}

/// Splits interval `i` at `z`: `(left branch, right branch)` for a step
/// from `from` to `to = from - 1`. Across a well the new branch sits on the
/// left (a downward jump); across a peak it sits on the right (an upward
/// jump).
fn step_layout(step: &Step) -> (usize, usize, bool) {
    // `to` odd: the two branches share a well, `to` even: a peak
    if step.to % 2 == 1 {
        (step.to, step.from, true)
    } else {
        (step.from, step.to, false)
    }
}

fn assemble_field(d: &Arc<Decomposition>, branches: &[usize], split: Option<(usize, f64, usize, usize)>, provenance: Provenance) -> SlopeField {
    let mut pieces = Vec::new();
    for (i, iv) in d.intervals.iter().enumerate() {
        match split {
            Some((k, z, left, right)) if k == i => {
                if z > iv.lo {
                    pieces.push(FieldPiece { lo: iv.lo, hi: z, rule: SlopeRule::Branch(BranchId::Right(left)) });
                }
                if z < iv.hi {
                    pieces.push(FieldPiece { lo: z, hi: iv.hi, rule: SlopeRule::Branch(BranchId::Right(right)) });
                }
            }
            _ => pieces.push(FieldPiece { lo: iv.lo, hi: iv.hi, rule: SlopeRule::Branch(BranchId::Right(branches[i])) }),
        }
    }
    SlopeField { h: d.h.clone(), window: d.window.clone(), mu: d.mu, pieces, provenance }
}

/// Field between `lower` and `upper` with total mass `target`, built by
/// walking the homotopy chain and placing one switch point inside the
/// interval being changed.
pub fn interpolate(d: &Arc<Decomposition>, lower: &[usize], upper: &[usize], target: f64) -> Result<SlopeField> {
    let total = |b: &[usize]| -> f64 { b.iter().enumerate().map(|(i, &j)| d.mass(i, j)).sum() };
    let (m_lo, m_hi) = (total(lower), total(upper));
    let slack = 1e-12 * m_lo.abs().max(m_hi.abs()).max(1.0);
    if target < m_lo - slack || target > m_hi + slack {
        return Err(Error::Precondition(format!("mass {target} outside [{m_lo}, {m_hi}]")));
    }
    let steps = homotopy_chain(d, lower, upper)?;
    let mut cur = lower.to_vec();
    let mut mass = m_lo;
    for step in &steps {
        let i = step.interval;
        let gain = d.mass(i, step.to) - d.mass(i, step.from);
        if mass + gain >= target || std::ptr::eq(step, steps.last().unwrap()) {
            let need = (target - mass).clamp(0.0, gain.max(0.0));
            let (left, right, new_on_left) = step_layout(step);
            let iv = &d.intervals[i];
            let part = |z: f64| {
                branch_mass(&d.h, &d.window, d.mu, left, iv.lo, z) + branch_mass(&d.h, &d.window, d.mu, right, z, iv.hi)
                    - d.mass(i, step.from)
            };
            // gained mass grows as the new branch takes over more of the interval
            let z = if new_on_left {
                crate::numerics::solve_increasing(part, need, iv.lo, iv.hi, 1e-14 * iv.hi.abs().max(1.0))
            } else {
                crate::numerics::solve_increasing(|z| -part(z), -need, iv.lo, iv.hi, 1e-14 * iv.hi.abs().max(1.0))
            };
            return Ok(assemble_field(d, &cur, Some((i, z, left, right)), Provenance::Interpolation));
        }
        cur[i] = step.to;
        mass += gain;
    }
    Ok(assemble_field(d, &cur, None, Provenance::Interpolation))
}

/// Field at level `mu` whose average slope is `t` of the way from the
/// lower end of [`flat_interval`] to the upper end.
pub fn transition_slope(h: &Hamiltonian, model: &PotentialModel, mu: f64, t: f64) -> Result<SlopeField> {
    transition_slope_on(h, Arc::new(model.window(DEFAULT_CELLS)), mu, t)
}

pub fn transition_slope_on(h: &Hamiltonian, window: Arc<Window>, mu: f64, t: f64) -> Result<SlopeField> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Precondition(format!("t = {t} outside [0, 1]")));
    }
    let (lower, upper) = flat_pair(h, window, mu)?;
    let target = t * upper.mass() + (1.0 - t) * lower.mass();
    interpolate(&upper.decomposition, &lower.branches, &upper.branches, target)
}

/// A nonnegative solution of the metric problem at level `mu >= 0`.
///
/// Uses the smallest admissible field inside the level range and the
/// unique branch outside it. Left bumps of `H` play no role since only
/// nonnegative slopes are used.
pub fn monotone_solution(h: &Hamiltonian, window: Arc<Window>, mu: f64) -> Result<SlopeField> {
    if mu < 0.0 {
        return Err(Error::Precondition(format!("level {mu} is negative")));
    }
    let (plus, _) = h.split_at_zero()?;
    let mbar = window.field.mbar();
    if !in_level_range(&plus, mbar, mu) {
        let j = outside_branch(&plus, mbar, mu);
        let mut f = single_branch_field(&plus, window, mu, j, Provenance::MonotoneSolution);
        f.h = h.clone();
        return Ok(f);
    }
    let sel = inf_admissible(&plus, window, mu)?;
    let mut f = sel.to_field(Provenance::MonotoneSolution);
    f.h = h.clone();
    Ok(f)
}

/// Average slopes of the level-zero fields: `E[Psi(-V)]` for the left tail
/// branch and the lower end at level zero.
pub fn zero_level_ends(h: &Hamiltonian, window: Arc<Window>) -> Result<(f64, f64)> {
    let left = SlopeField {
        h: h.clone(),
        window: window.clone(),
        mu: 0.0,
        pieces: vec![FieldPiece { lo: window.lo, hi: window.hi, rule: SlopeRule::Branch(h.left_tail_branch()) }],
        provenance: Provenance::Selection,
    };
    let q_left = left.expected_slope().mean;
    let q_right = lower_zero_field(h, window)?.expected_slope().mean;
    Ok((q_left, q_right))
}

/// Stationary field with average slope `p` in `[q_left, q_right]` whose
/// antiderivative is a subsolution of `H(u') + V = delta`.
///
/// Where `V > -delta/4` the slope blends the left tail branch and the lower
/// level-zero field with a fixed weight; on each deeper stretch it follows
/// the left tail branch and then switches once, upward, to the lower field,
/// the switch placed so the stretch gets the same weighted mass.
pub fn subsolution_at_zero(h: &Hamiltonian, window: Arc<Window>, p: f64, delta: f64) -> Result<SlopeField> {
    if h.bumps_left() != 0 {
        return Err(Error::Precondition("level-zero subsolutions need a Hamiltonian without left bumps".into()));
    }
    let mbar = window.field.mbar();
    let cap = 0.5 * mbar.min(h.critical_values().min_well().unwrap_or(f64::INFINITY));
    if !(delta > 0.0 && delta < cap) {
        return Err(Error::Precondition(format!("delta = {delta} must lie in (0, {cap})")));
    }
    let (q_left, q_right) = zero_level_ends(h, window.clone())?;
    let span = q_right - q_left;
    let slack = 1e-12 * span.abs().max(1.0);
    if p < q_left - slack || p > q_right + slack {
        return Err(Error::Precondition(format!("p = {p} outside [{q_left}, {q_right}]")));
    }
    let t = if span > 0.0 { ((p - q_left) / span).clamp(0.0, 1.0) } else { 1.0 };

    let base = lower_zero_field(h, window.clone())?;
    let tail = h.left_tail_branch();
    let cut = -0.25 * delta;
    let mut marks = window.field.crossings(window.lo, window.hi, cut);
    let period = window.length();
    let deep_at = |y: f64| window.value(y) < cut;

    // stretches between consecutive crossings, alternating shallow/deep
    let mut stretches: Vec<(f64, f64)> = Vec::new();
    if window.cyclic {
        if marks.is_empty() {
            return Err(Error::Internal("potential never goes below the cut level".into()));
        }
        marks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for k in 0..marks.len() {
            let a = marks[k];
            let b = if k + 1 < marks.len() { marks[k + 1] } else { marks[0] + period };
            stretches.push((a, b));
        }
    } else {
        let mut a = window.lo;
        for &m in &marks {
            stretches.push((a, m));
            a = m;
        }
        stretches.push((a, window.hi));
    }

    let mut pieces = Vec::new();
    for (a, b) in stretches {
        let deep = deep_at(0.5 * (a + b));
        if !deep {
            let sub = base.restricted(a, b);
            for pc in sub {
                let SlopeRule::Branch(upper) = pc.rule else { unreachable!() };
                pieces.push(FieldPiece { lo: pc.lo, hi: pc.hi, rule: SlopeRule::Blend { weight: t, upper, lower: tail } });
            }
            continue;
        }
        let upper_mass = base.mass_between(a, b);
        let tail_field = SlopeField {
            h: h.clone(),
            window: window.clone(),
            mu: 0.0,
            pieces: vec![FieldPiece { lo: a, hi: b, rule: SlopeRule::Branch(tail) }],
            provenance: Provenance::Subsolution,
        };
        let tail_mass = tail_field.mass_between(a, b);
        let target = t * upper_mass + (1.0 - t) * tail_mass;
        let mass_with_switch = |z: f64| tail_field.mass_between(a, z) + base.mass_between(z, b);
        // mass decreases as the switch moves right
        let z = crate::numerics::solve_increasing(|z| -mass_with_switch(z), -target, a, b, 1e-14 * b.abs().max(1.0));
        if z > a {
            pieces.push(FieldPiece { lo: a, hi: z, rule: SlopeRule::Branch(tail) });
        }
        pieces.extend(base.restricted(z, b));
    }
    let mut field = SlopeField { h: h.clone(), window, mu: 0.0, pieces, provenance: Provenance::Subsolution };
    field.merge_pieces();
    Ok(field)
}

/// The lower level-zero field as a slope field (innermost branch outside
/// the level range).
fn lower_zero_field(h: &Hamiltonian, window: Arc<Window>) -> Result<SlopeField> {
    let mbar = window.field.mbar();
    if in_level_range(h, mbar, 0.0) {
        Ok(inf_admissible(h, window, 0.0)?.to_field(Provenance::Selection))
    } else {
        Ok(single_branch_field(h, window, 0.0, outside_branch(h, mbar, 0.0), Provenance::Selection))
    }
}

impl SlopeField {
    /// Pieces covering `[a, b]`, clipped, unwrapping cyclic fields.
    fn restricted(&self, a: f64, b: f64) -> Vec<FieldPiece> {
        let mut out = Vec::new();
        let shifts: Vec<f64> = if self.window.cyclic {
            let l = self.window.length();
            vec![-l, 0.0, l]
        } else {
            vec![0.0]
        };
        for s in shifts {
            for p in &self.pieces {
                let (lo, hi) = (p.lo + s, p.hi + s);
                let (x, y) = (lo.max(a), hi.min(b));
                if y > x {
                    out.push(FieldPiece { lo: x, hi: y, rule: p.rule });
                }
            }
        }
        out.sort_by(|p, q| p.lo.partial_cmp(&q.lo).unwrap());
        out
    }

    fn merge_pieces(&mut self) {
        let mut out: Vec<FieldPiece> = Vec::new();
        for p in self.pieces.drain(..) {
            match out.last_mut() {
                Some(last) if last.rule == p.rule && (last.hi - p.lo).abs() < 1e-15 => last.hi = p.hi,
                _ => out.push(p),
            }
        }
        self.pieces = out;
    }
}
