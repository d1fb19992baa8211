//! The effective Hamiltonian as a list of segments.
//!
//! Each segment is either flat at some level or given implicitly by a
//! relation `p = average(mu)` that is solved for `mu` on demand. The
//! average is that of one branch inverse `psi_j(mu - V)` or, under large
//! oscillation, of the largest admissible field at level `mu`.
//!
//! Curves for general Hamiltonians are assembled by recursion on the
//! number of bumps: split at the origin, handle each half with the
//! large-oscillation sweep when it applies, and otherwise carve the half
//! into simpler pieces and take minima.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;

use crate::corrector::{self, branch_value};
use crate::error::{Error, Result};
use crate::hamiltonian::{BranchId, PiecewiseMonotoneHamiltonian as Hamiltonian};
use crate::potential::{PotentialModel, Window, DEFAULT_CELLS};

/// Largest jump allowed between neighbouring segments.
pub const CONTINUITY_TOL: f64 = 1e-8;

/// Largest momentum gap left between neighbouring sweep levels.
pub const SWEEP_GAP: f64 = 1e-3;

/// Finest level spacing of the large-oscillation sweep.
pub const SWEEP_RESOLUTION: f64 = 1e-10;

/// Slope intervals narrower than this are treated as points.
pub const FLAT_TOL: f64 = 1e-9;

const SOLVE_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Hamiltonian with no bumps.
    Quasiconvex,
    /// Explicit formulas for oscillation below every well depth.
    SmallOscillation,
    /// Sweep of average slopes of admissible fields.
    LargeOscillation,
    /// Minimum of two carved pieces around a deep inner well.
    CombineLeft,
    /// Three-zone assembly with a clamp at the highest peak.
    CombineRight,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Branch(BranchId),
    /// Largest admissible field at the level.
    UpperSelection,
}

/// `mu -> average slope` on a window, solved backwards with a cache.
pub struct Relation {
    h: Hamiltonian,
    window: Arc<Window>,
    kind: RelationKind,
    /// Level range in the relation's own frame.
    levels: (f64, f64),
    cache: Mutex<HashMap<u64, f64>>,
}

impl fmt::Debug for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Relation").field("kind", &self.kind).field("levels", &self.levels).finish()
    }
}

impl Relation {
    pub fn new(h: &Hamiltonian, window: Arc<Window>, kind: RelationKind, levels: (f64, f64)) -> Arc<Self> {
        Arc::new(Relation { h: h.clone(), window, kind, levels, cache: Mutex::new(HashMap::new()) })
    }

    pub fn kind(&self) -> RelationKind {
        self.kind
    }

    pub fn levels(&self) -> (f64, f64) {
        self.levels
    }

    /// Average slope at level `mu`.
    pub fn average(&self, mu: f64) -> Result<f64> {
        match self.kind {
            RelationKind::Branch(id) => Ok(branch_average(&self.h, &self.window, id, mu)),
            RelationKind::UpperSelection => corrector::upper_average(&self.h, self.window.clone(), mu),
        }
    }

    /// The level in range whose average slope is `q`.
    pub fn solve(&self, q: f64) -> Result<f64> {
        let key = q.to_bits();
        if let Some(&mu) = self.cache.lock().unwrap().get(&key) {
            return Ok(mu);
        }
        let mu = self.solve_uncached(q)?;
        self.cache.lock().unwrap().insert(key, mu);
        Ok(mu)
    }

    fn solve_uncached(&self, q: f64) -> Result<f64> {
        let (a, mut b) = self.levels;
        let fa = self.average(a)? - q;
        let scale = 1e-9 * q.abs().max(1.0);
        if fa.abs() <= 1e-3 * scale {
            // q sits on the end of the range up to rounding
            return Ok(a);
        }
        let mut fb;
        if b.is_finite() {
            fb = self.average(b)? - q;
        } else {
            let mut step = 1.0;
            loop {
                b = a + step;
                fb = self.average(b)? - q;
                if fb.signum() != fa.signum() || fb == 0.0 {
                    break;
                }
                step *= 2.0;
                if step > 1e9 {
                    return Err(Error::Precondition(format!("momentum {q} not reached by {:?}", self.kind)));
                }
            }
        }
        if fb == 0.0 {
            return Ok(b);
        }
        if fa.signum() == fb.signum() {
            return if fa.abs() <= scale {
                Ok(a)
            } else if fb.abs() <= scale {
                Ok(b)
            } else {
                Err(Error::Precondition(format!("momentum {q} outside the range of {:?} on {:?}", self.kind, self.levels)))
            };
        }
        illinois(|mu| self.average(mu).map(|v| v - q), a, b, fa, fb)
    }
}

/// Regula falsi with the Illinois modification.
fn illinois(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64) -> Result<f64> {
    let mut side = 0;
    for _ in 0..200 {
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a.min(b) && c < a.max(b)) {
            c = 0.5 * (a + b);
        }
        let fc = f(c)?;
        if fc == 0.0 || (b - a).abs() <= SOLVE_TOL * c.abs().max(1.0) {
            return Ok(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Ok(0.5 * (a + b))
}

/// `E[psi(mu - V)]` for one branch, clamping energies into its range.
pub fn branch_average(h: &Hamiltonian, window: &Window, id: BranchId, mu: f64) -> f64 {
    let levels: Vec<f64> = h.branch_kinks(id).into_iter().map(|s| mu - s).collect();
    window.field.integrate(window.lo, window.hi, &levels, |v| branch_value(h, id, mu - v)) / window.length()
}

/// Maps outer momenta into a relation's frame: `q = sign * (p - offset)`
/// and `Hbar = mu + energy`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Frame {
    pub sign: f64,
    pub offset: f64,
    pub energy: f64,
}

impl Frame {
    const IDENTITY: Frame = Frame { sign: 1.0, offset: 0.0, energy: 0.0 };
}

#[derive(Clone, Debug)]
pub enum Law {
    Flat { level: f64 },
    Implicit { relation: Arc<Relation>, frame: Frame },
}

impl Law {
    fn implicit(relation: Arc<Relation>) -> Self {
        Law::Implicit { relation, frame: Frame::IDENTITY }
    }

    pub fn eval(&self, p: f64) -> Result<f64> {
        match self {
            Law::Flat { level } => Ok(*level),
            Law::Implicit { relation, frame } => Ok(relation.solve(frame.sign * (p - frame.offset))? + frame.energy),
        }
    }

    fn shifted(&self, dp: f64, de: f64) -> Self {
        match self {
            Law::Flat { level } => Law::Flat { level: level + de },
            Law::Implicit { relation, frame } => Law::Implicit {
                relation: relation.clone(),
                frame: Frame { sign: frame.sign, offset: frame.offset + dp, energy: frame.energy + de },
            },
        }
    }

    fn reflected(&self) -> Self {
        match self {
            Law::Flat { level } => Law::Flat { level: *level },
            Law::Implicit { relation, frame } => Law::Implicit {
                relation: relation.clone(),
                frame: Frame { sign: -frame.sign, offset: -frame.offset, energy: frame.energy },
            },
        }
    }

    fn same_as(&self, other: &Law) -> bool {
        match (self, other) {
            (Law::Flat { level: a }, Law::Flat { level: b }) => (a - b).abs() <= 1e-12 * a.abs().max(1.0),
            (Law::Implicit { relation: r, frame: f }, Law::Implicit { relation: s, frame: g }) => Arc::ptr_eq(r, s) && f == g,
            _ => false,
        }
    }

    pub fn kind_label(&self) -> &'static str {
        match self {
            Law::Flat { .. } => "flat",
            Law::Implicit { .. } => "implicit",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub law: Law,
    pub provenance: Provenance,
}

impl Segment {
    fn new(lo: f64, hi: f64, law: Law, provenance: Provenance) -> Self {
        Segment { lo, hi, law, provenance }
    }
}

/// Serializable summary of one segment.
#[derive(Clone, Debug, Serialize)]
pub struct SegmentInfo {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub kind: &'static str,
    pub level: Option<f64>,
    pub relation: Option<RelationKind>,
    pub frame: Option<Frame>,
    pub provenance: Provenance,
}

/// A piecewise description of `Hbar` on the whole line.
#[derive(Clone, Debug)]
pub struct EffectiveCurve {
    segments: Vec<Segment>,
}

impl EffectiveCurve {
    /// Builds a curve from contiguous segments, merging neighbours that
    /// share a law and dropping empty ones.
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let mut out: Vec<Segment> = Vec::new();
        for s in segments {
            if !(s.hi > s.lo) {
                continue;
            }
            if let Some(last) = out.last_mut() {
                if (last.hi - s.lo).abs() > 1e-9 * s.lo.abs().max(1.0) {
                    return Err(Error::Internal(format!("segments not contiguous at {} / {}", last.hi, s.lo)));
                }
                if last.law.same_as(&s.law) && last.provenance == s.provenance {
                    last.hi = s.hi;
                    continue;
                }
            }
            out.push(s);
        }
        if out.is_empty() || out[0].lo != f64::NEG_INFINITY || out.last().unwrap().hi != f64::INFINITY {
            return Err(Error::Internal("curve must cover the whole line".into()));
        }
        Ok(EffectiveCurve { segments: out })
    }

    pub fn constant(level: f64, provenance: Provenance) -> Self {
        EffectiveCurve {
            segments: vec![Segment::new(f64::NEG_INFINITY, f64::INFINITY, Law::Flat { level }, provenance)],
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    fn segment_index(&self, p: f64) -> usize {
        self.segments.partition_point(|s| s.hi <= p).min(self.segments.len() - 1)
    }

    pub fn segment_at(&self, p: f64) -> &Segment {
        &self.segments[self.segment_index(p)]
    }

    pub fn evaluate(&self, p: f64) -> Result<f64> {
        self.segment_at(p).law.eval(p)
    }

    /// `Hbar` on a grid of momenta, in parallel.
    pub fn evaluate_many(&self, ps: &[f64]) -> Result<Vec<f64>> {
        ps.par_iter().map(|&p| self.evaluate(p)).collect()
    }

    /// `p -> Hbar(p - dp) + de`.
    pub fn shifted(&self, dp: f64, de: f64) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment::new(s.lo + dp, s.hi + dp, s.law.shifted(dp, de), s.provenance))
            .collect();
        EffectiveCurve { segments }
    }

    /// `p -> Hbar(-p)`.
    pub fn reflected(&self) -> Self {
        let segments = self.segments.iter().rev().map(|s| Segment::new(-s.hi, -s.lo, s.law.reflected(), s.provenance)).collect();
        EffectiveCurve { segments }
    }

    /// Segments clipped to `[lo, hi]`.
    pub fn restrict(&self, lo: f64, hi: f64) -> Vec<Segment> {
        self.segments
            .iter()
            .filter(|s| s.hi > lo && s.lo < hi)
            .map(|s| Segment::new(s.lo.max(lo), s.hi.min(hi), s.law.clone(), s.provenance))
            .collect()
    }

    /// Finite segment boundaries.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments[1..].iter().map(|s| s.lo).collect()
    }

    /// Flat segments of positive width as `(lo, hi, level)`.
    pub fn flats(&self) -> Vec<(f64, f64, f64, Provenance)> {
        self.segments
            .iter()
            .filter_map(|s| match s.law {
                Law::Flat { level } if s.lo.is_finite() && s.hi.is_finite() => Some((s.lo, s.hi, level, s.provenance)),
                _ => None,
            })
            .collect()
    }

    /// Largest jump between the two laws meeting at each boundary.
    pub fn continuity_defect(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for w in self.segments.windows(2) {
            let p = w[1].lo;
            worst = worst.max((w[0].law.eval(p)? - w[1].law.eval(p)?).abs());
        }
        Ok(worst)
    }

    pub fn manifest(&self) -> Vec<SegmentInfo> {
        self.segments
            .iter()
            .map(|s| {
                let (level, relation, frame) = match &s.law {
                    Law::Flat { level } => (Some(*level), None, None),
                    Law::Implicit { relation, frame } => (None, Some(relation.kind), Some(*frame)),
                };
                SegmentInfo {
                    lo: s.lo.is_finite().then_some(s.lo),
                    hi: s.hi.is_finite().then_some(s.hi),
                    kind: s.law.kind_label(),
                    level,
                    relation,
                    frame,
                    provenance: s.provenance,
                }
            })
            .collect()
    }

    /// `p,Hbar,segment_kind,provenance` rows.
    pub fn to_csv(&self, ps: &[f64]) -> Result<String> {
        let values = self.evaluate_many(ps)?;
        let mut out = String::from("p,Hbar,segment_kind,provenance\n");
        for (&p, v) in ps.iter().zip(values) {
            let s = self.segment_at(p);
            let prov = serde_json::to_value(s.provenance).unwrap();
            out.push_str(&format!("{},{},{},{}\n", p, v, s.law.kind_label(), prov.as_str().unwrap()));
        }
        Ok(out)
    }

    /// Whether the sampled curve has no strict interior local maximum.
    pub fn is_quasiconvex_on(&self, ps: &[f64], tol: f64) -> Result<bool> {
        let v = self.evaluate_many(ps)?;
        // values must decrease then increase
        let mut rising = false;
        for w in v.windows(2) {
            if w[1] > w[0] + tol {
                rising = true;
            } else if rising && w[1] < w[0] - tol {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn oscillation(window: &Window) -> f64 {
    window.field.mbar()
}

fn require_no_left_bumps(h: &Hamiltonian, what: &str) -> Result<()> {
    if h.bumps_left() != 0 {
        return Err(Error::Precondition(format!("{what} needs a Hamiltonian without left bumps")));
    }
    Ok(())
}

/// The flat level-zero piece and the outer left branch shared by every
/// half-line construction: `(-inf, q_left]` on the left tail inverse and
/// `[q_left, q_right]` at zero.
fn left_part(h: &Hamiltonian, window: &Arc<Window>, q_right: f64, provenance: Provenance) -> (Vec<Segment>, f64) {
    let tail = h.left_tail_branch();
    let q_left = branch_average(h, window, tail, 0.0);
    let rel = Relation::new(h, window.clone(), RelationKind::Branch(tail), (0.0, f64::INFINITY));
    let segs = vec![
        Segment::new(f64::NEG_INFINITY, q_left, Law::implicit(rel), provenance),
        Segment::new(q_left, q_right, Law::Flat { level: 0.0 }, provenance),
    ];
    (segs, q_left)
}

/// `Hbar` for a Hamiltonian without bumps: the left tail inverse below
/// `E[Psi(-V)]`, zero up to `E[psi_1(-V)]`, the right tail inverse above.
pub fn effective_quasiconvex(h: &Hamiltonian, model: &PotentialModel) -> Result<EffectiveCurve> {
    effective_quasiconvex_on(h, Arc::new(model.window(DEFAULT_CELLS)))
}

pub fn effective_quasiconvex_on(h: &Hamiltonian, window: Arc<Window>) -> Result<EffectiveCurve> {
    if h.bumps_left() != 0 || h.bumps_right() != 0 {
        return Err(Error::Precondition("quasiconvex formula needs a Hamiltonian without bumps".into()));
    }
    let right = BranchId::Right(1);
    let q_right = branch_average(h, &window, right, 0.0);
    let (mut segs, _) = left_part(h, &window, q_right, Provenance::Quasiconvex);
    let rel = Relation::new(h, window, RelationKind::Branch(right), (0.0, f64::INFINITY));
    segs.push(Segment::new(q_right, f64::INFINITY, Law::implicit(rel), Provenance::Quasiconvex));
    EffectiveCurve::from_segments(segs)
}

/// Whether the oscillation is below every well depth of a right half.
pub fn small_oscillation_holds(h: &Hamiltonian, mbar: f64) -> bool {
    let cv = h.critical_values();
    let l = cv.peaks.len();
    (0..l).all(|i| {
        let next = if i + 1 < l { cv.wells[i + 1] } else { 0.0 };
        mbar < cv.peaks[i] - cv.wells[i] && mbar < cv.peaks[i] - next
    })
}

/// Explicit curve when the oscillation is smaller than every well depth:
/// flats at each well value and at each peak value minus the oscillation,
/// joined by single-branch segments.
pub fn effective_small_osc(h: &Hamiltonian, model: &PotentialModel) -> Result<EffectiveCurve> {
    effective_small_osc_on(h, Arc::new(model.window(DEFAULT_CELLS)))
}

pub fn effective_small_osc_on(h: &Hamiltonian, window: Arc<Window>) -> Result<EffectiveCurve> {
    require_no_left_bumps(h, "small-oscillation formula")?;
    let mbar = oscillation(&window);
    if !small_oscillation_holds(h, mbar) {
        return Err(Error::Precondition(format!("oscillation {mbar} is not below every well depth")));
    }
    let l = h.bumps_right();
    if l == 0 {
        return effective_quasiconvex_on(h, window);
    }
    let cv = h.critical_values();
    let (wells, peaks) = (&cv.wells, &cv.peaks);
    let avg = |j: usize, mu: f64| branch_average(h, &window, BranchId::Right(j), mu);
    let rel = |j: usize, lo: f64, hi: f64| Law::implicit(Relation::new(h, window.clone(), RelationKind::Branch(BranchId::Right(j)), (lo, hi)));
    let prov = Provenance::SmallOscillation;

    let q_right = avg(2 * l + 1, 0.0);
    let (mut segs, _) = left_part(h, &window, q_right, prov);
    // walk outward: branch 2l+1, peak flat l, branch 2l, well flat l, ...
    let mut p = q_right;
    for k in (1..=l).rev() {
        let (m, big) = (wells[k - 1], peaks[k - 1]);
        let clamp = big - mbar;
        // odd branch below the peak flat
        let p_peak_lo = avg(2 * k + 1, clamp);
        let lower_level = if k == l { 0.0 } else { wells[k] };
        segs.push(Segment::new(p, p_peak_lo, rel(2 * k + 1, lower_level, clamp), prov));
        let p_peak_hi = avg(2 * k, clamp);
        segs.push(Segment::new(p_peak_lo, p_peak_hi, Law::Flat { level: clamp }, prov));
        let p_well_lo = avg(2 * k, m);
        segs.push(Segment::new(p_peak_hi, p_well_lo, rel(2 * k, m, clamp), prov));
        let p_well_hi = avg(2 * k - 1, m);
        segs.push(Segment::new(p_well_lo, p_well_hi, Law::Flat { level: m }, prov));
        p = p_well_hi;
    }
    segs.push(Segment::new(p, f64::INFINITY, rel(1, wells[0], f64::INFINITY), prov));
    EffectiveCurve::from_segments(segs)
}

/// One level of the sweep with its slope interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub mu: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Levels where `mu - V` touches a critical value at a critical point of a
/// periodic window, inside `[lo, hi]`.
fn touch_levels(h: &Hamiltonian, window: &Window, lo: f64, hi: f64) -> Vec<f64> {
    if !window.cyclic {
        return Vec::new();
    }
    let cv = h.critical_values();
    let crit = window.field.critical_points(window.lo - 1e-12, window.hi - 1e-12);
    let mut out = Vec::new();
    for c in cv.wells.iter().chain(&cv.peaks) {
        for &(y, _) in &crit {
            let mu = c + window.value(y);
            if mu >= lo && mu <= hi {
                out.push(mu);
            }
        }
    }
    out
}

/// Slope intervals over `[0, mu_max]`: a uniform grid and the touch
/// levels, bisected until neighbouring intervals are at most `gap_tol`
/// apart or the levels are [`SWEEP_RESOLUTION`] apart.
pub fn level_sweep(h: &Hamiltonian, window: Arc<Window>, mu_max: f64, gap_tol: f64) -> Result<Vec<SweepPoint>> {
    let eval = |mus: Vec<f64>| -> Result<Vec<SweepPoint>> {
        mus.par_iter()
            .map(|&mu| corrector::flat_interval_on(h, window.clone(), mu).map(|i| SweepPoint { mu: i.mu, lo: i.lo, hi: i.hi }))
            .collect()
    };
    let mut mus: Vec<f64> = (0..=64).map(|k| mu_max * k as f64 / 64.0).collect();
    mus.extend(touch_levels(h, &window, 0.0, mu_max));
    let mut pts = eval(mus)?;
    loop {
        pts.sort_by(|a, b| a.mu.partial_cmp(&b.mu).unwrap());
        pts.dedup_by(|a, b| (a.mu - b.mu).abs() <= 1e-13);
        let mids: Vec<f64> = pts
            .windows(2)
            .filter(|w| w[1].mu - w[0].mu > 2.0 * SWEEP_RESOLUTION && w[1].lo - w[0].hi > gap_tol)
            .map(|w| 0.5 * (w[0].mu + w[1].mu))
            .collect();
        if mids.is_empty() {
            break;
        }
        pts.extend(eval(mids)?);
    }
    for w in pts.windows(2) {
        if w[1].lo < w[0].hi - 1e-9 {
            return Err(Error::Internal(format!("slope intervals at levels {} and {} overlap", w[0].mu, w[1].mu)));
        }
    }
    Ok(pts)
}

/// Curve of a right half whose oscillation covers the gap between the
/// highest peak and the lowest well.
pub fn effective_large_osc(h: &Hamiltonian, model: &PotentialModel) -> Result<EffectiveCurve> {
    effective_large_osc_on(h, Arc::new(model.window(DEFAULT_CELLS)))
}

pub fn effective_large_osc_on(h: &Hamiltonian, window: Arc<Window>) -> Result<EffectiveCurve> {
    require_no_left_bumps(h, "large-oscillation sweep")?;
    let mbar = oscillation(&window);
    let cv = h.critical_values();
    if h.bumps_right() == 0 {
        return effective_quasiconvex_on(h, window);
    }
    if mbar < cv.gap() {
        return Err(Error::Precondition(format!("oscillation {mbar} below the gap {}", cv.gap())));
    }
    let top = cv.max_peak().unwrap();
    let mu_max = top + mbar + 1.0;
    let pts = level_sweep(h, window.clone(), mu_max, SWEEP_GAP)?;
    let prov = Provenance::LargeOscillation;

    let zero = pts[0];
    let (mut segs, _) = left_part(h, &window, zero.hi, prov);
    let mut p = zero.hi;
    let mut run_start = zero.mu;
    let selection = |lo: f64, hi: f64| Law::implicit(Relation::new(h, window.clone(), RelationKind::UpperSelection, (lo, hi)));
    for pt in pts.iter().skip(1).filter(|pt| pt.mu < top) {
        if pt.hi - pt.lo > FLAT_TOL {
            segs.push(Segment::new(p, pt.lo, selection(run_start, pt.mu), prov));
            segs.push(Segment::new(pt.lo, pt.hi, Law::Flat { level: pt.mu }, prov));
            p = pt.hi;
            run_start = pt.mu;
        }
    }
    let p_top = branch_average(h, &window, BranchId::Right(1), top);
    segs.push(Segment::new(p, p_top, selection(run_start, top), prov));
    let tail = Relation::new(h, window, RelationKind::Branch(BranchId::Right(1)), (top, f64::INFINITY));
    segs.push(Segment::new(p_top, f64::INFINITY, Law::implicit(tail), prov));
    EffectiveCurve::from_segments(segs)
}

/// Which curve is lowest on each part of `[lo, hi]`, found by sampling and
/// bisecting the sign changes. Ties go to the earlier curve.
pub fn pointwise_min(curves: &[&EffectiveCurve], lo: f64, hi: f64) -> Result<Vec<Segment>> {
    let mut cuts = vec![lo, hi];
    for c in curves {
        cuts.extend(c.breakpoints().into_iter().filter(|&x| x > lo && x < hi));
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let winner = |x: f64| -> Result<usize> {
        let mut best = 0;
        let mut bv = curves[0].evaluate(x)?;
        for (i, c) in curves.iter().enumerate().skip(1) {
            let v = c.evaluate(x)?;
            if v < bv - 1e-12 * bv.abs().max(1.0) {
                best = i;
                bv = v;
            }
        }
        Ok(best)
    };
    let mut out: Vec<Segment> = Vec::new();
    let mut push = |a: f64, b: f64, i: usize, probe: f64| {
        if b > a {
            let s = curves[i].segment_at(probe);
            out.push(Segment::new(a, b, s.law.clone(), s.provenance));
        }
    };
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let probes: Vec<f64> = match (a.is_finite(), b.is_finite()) {
            (true, true) => (0..=32).map(|k| a + (b - a) * k as f64 / 32.0).collect(),
            (false, true) => (0..8).rev().map(|k| b - (1u64 << (k + 1)) as f64 + 1.0).chain([b]).collect(),
            (true, false) => [a].into_iter().chain((0..8).map(|k| a + (1u64 << (k + 1)) as f64 - 1.0)).collect(),
            (false, false) => (-8..=8).map(|k: i32| (k.signum() as f64) * (1u64 << k.unsigned_abs()) as f64).collect(),
        };
        let inner = |x: f64| x.clamp(probes[0], *probes.last().unwrap());
        let mut start = a;
        let mut cur = winner(inner(probes[0]))?;
        for pw in probes.windows(2) {
            let next = winner(pw[1])?;
            if next != cur {
                let d = |x: f64| curves[cur].evaluate(x).unwrap() - curves[next].evaluate(x).unwrap();
                let d0 = d(pw[0]);
                let z = if d0.abs() <= 1e-12 * curves[next].evaluate(pw[0])?.abs().max(1.0) {
                    // tied at the left probe: the switch happens there
                    pw[0]
                } else {
                    crate::numerics::bisect(d, pw[0], pw[1], 1e-13 * pw[1].abs().max(1.0)).unwrap_or(pw[1])
                };
                push(start, z, cur, 0.5 * (inner(start.max(pw[0] - 1.0)) + z));
                start = z;
                cur = next;
            }
        }
        let probe = if b.is_finite() { 0.5 * (inner(start.max(probes[0])) + b) } else { *probes.last().unwrap() };
        push(start, b, cur, probe);
    }
    Ok(out)
}

/// `min(Hbar_plus, Hbar_minus)`: the minus curve on `p <= 0`, the plus
/// curve on `p >= 0`.
pub fn glue_minimum(plus: &EffectiveCurve, minus: &EffectiveCurve) -> Result<EffectiveCurve> {
    let mut segs = minus.restrict(f64::NEG_INFINITY, 0.0);
    segs.extend(plus.restrict(0.0, f64::INFINITY));
    EffectiveCurve::from_segments(segs)
}

/// `min(Hbar_1, Hbar_2)` for the pieces of a left carve.
pub fn combine_left(inner: &EffectiveCurve, outer: &EffectiveCurve) -> Result<EffectiveCurve> {
    let segs = pointwise_min(&[inner, outer], f64::NEG_INFINITY, f64::INFINITY)?;
    let segs = segs.into_iter().map(|s| Segment { provenance: retag(s.provenance, Provenance::CombineLeft), ..s }).collect();
    EffectiveCurve::from_segments(segs)
}

fn retag(old: Provenance, new: Provenance) -> Provenance {
    match old {
        Provenance::Quasiconvex => new,
        other => other,
    }
}

/// Three-zone assembly for a right carve: `Hbar_1` for `p <= 0`,
/// `min(Hbar_1, Hbar_2, clamp)` on `[0, split]`, `Hbar_2` beyond `split`,
/// where `clamp` is the highest peak minus the oscillation and `split` the
/// momentum of the lowest well.
pub fn combine_right(inner: &EffectiveCurve, outer: &EffectiveCurve, clamp: f64, split: f64) -> Result<EffectiveCurve> {
    let level = EffectiveCurve::constant(clamp, Provenance::CombineRight);
    let mut segs = inner.restrict(f64::NEG_INFINITY, 0.0);
    segs.extend(pointwise_min(&[inner, outer, &level], 0.0, split)?);
    segs.extend(outer.restrict(split, f64::INFINITY));
    for (p, left, right) in [(0.0, inner.evaluate(0.0)?, middle_at(inner, outer, clamp, 0.0)?), (split, middle_at(inner, outer, clamp, split)?, outer.evaluate(split)?)] {
        if (left - right).abs() > 1e-6 {
            return Err(Error::Internal(format!("zones disagree at {p}: {left} vs {right}")));
        }
    }
    EffectiveCurve::from_segments(segs)
}

fn middle_at(inner: &EffectiveCurve, outer: &EffectiveCurve, clamp: f64, p: f64) -> Result<f64> {
    Ok(inner.evaluate(p)?.min(outer.evaluate(p)?).min(clamp))
}

/// `Hbar` for any valid Hamiltonian, by recursion on the bump count.
pub fn compute_effective(h: &Hamiltonian, model: &PotentialModel) -> Result<EffectiveCurve> {
    compute_effective_on(h, Arc::new(model.window(DEFAULT_CELLS)))
}

pub fn compute_effective_on(h: &Hamiltonian, window: Arc<Window>) -> Result<EffectiveCurve> {
    let budget = 2 * (h.bumps_left() + h.bumps_right()) + 2;
    recurse(h, &window, budget)
}

fn recurse(h: &Hamiltonian, window: &Arc<Window>, budget: usize) -> Result<EffectiveCurve> {
    if budget == 0 {
        return Err(Error::Internal("recursion depth exceeded".into()));
    }
    if h.bumps_left() == 0 && h.bumps_right() == 0 {
        return effective_quasiconvex_on(h, window.clone());
    }
    let (plus, minus) = h.split_at_zero()?;
    let right = half(&plus, window, budget - 1)?;
    let mirror = Arc::new(window.reflected());
    let left = half(&minus.reflected(), &mirror, budget - 1)?.reflected();
    glue_minimum(&right, &left)
}

/// Curve of a Hamiltonian without left bumps.
fn half(h: &Hamiltonian, window: &Arc<Window>, budget: usize) -> Result<EffectiveCurve> {
    let l = h.bumps_right();
    if l == 0 {
        return effective_quasiconvex_on(h, window.clone());
    }
    let mbar = oscillation(window);
    let cv = h.critical_values();
    if mbar >= cv.gap() {
        return effective_large_osc_on(h, window.clone());
    }
    let k = cv.argmax_peak().unwrap();
    let lw = cv.argmin_well().unwrap();
    let carved = if lw > k { h.carve_left(k, lw)? } else { h.carve_right(k, lw)? };
    let bumps = |g: &Hamiltonian| g.bumps_left().max(g.bumps_right());
    if bumps(&carved.inner) >= l || bumps(&carved.outer.normalized) >= l {
        return Err(Error::Internal("carving did not reduce the bump count".into()));
    }
    let inner = recurse(&carved.inner, window, budget - 1)?;
    let shift = &carved.outer;
    let outer = recurse(&shift.normalized, window, budget - 1)?.shifted(shift.momentum_shift, shift.energy_shift);
    if lw > k {
        combine_left(&inner, &outer)
    } else {
        combine_right(&inner, &outer, cv.peaks[k - 1] - mbar, shift.momentum_shift)
    }
}

/// Level `mu` with `E[psi_j(mu - V)] = p`, over the levels for which the
/// branch is defined along the whole window.
pub fn invert_branch_equation(h: &Hamiltonian, j: usize, model: &PotentialModel, p: f64) -> Result<f64> {
    invert_branch_equation_on(h, BranchId::Right(j), Arc::new(model.window(DEFAULT_CELLS)), p)
}

pub fn invert_branch_equation_on(h: &Hamiltonian, id: BranchId, window: Arc<Window>, p: f64) -> Result<f64> {
    let br = h.branch(id)?;
    let mbar = oscillation(&window);
    let (lo, hi) = (br.range.0, br.range.1 - mbar);
    if hi < lo {
        return Err(Error::Precondition(format!("branch {id} is narrower than the oscillation")));
    }
    let rel = Relation::new(h, window, RelationKind::Branch(id), (lo, hi));
    let (a, b) = (rel.average(lo)?, if hi.is_finite() { rel.average(hi)? } else { f64::INFINITY * (rel.average(lo + 1.0)? - rel.average(lo)?).signum() });
    let (pmin, pmax) = (a.min(b), a.max(b));
    let slack = 1e-10 * p.abs().max(1.0);
    if p < pmin - slack || p > pmax + slack {
        return Err(Error::Precondition(format!("momentum {p} outside [{pmin}, {pmax}] for branch {id}")));
    }
    rel.solve(p.clamp(pmin, pmax))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PeriodicProfile;

    fn w_well() -> Hamiltonian {
        Hamiltonian::piecewise_linear(&[(0.0, 0.0), (1.0, 3.0), (2.0, 1.0)], -3.0, 1.0).unwrap()
    }

    fn cosine(mbar: f64) -> PotentialModel {
        PotentialModel::Periodic(PeriodicProfile::cosine(mbar).unwrap())
    }

    fn fixture_law(p: f64) -> f64 {
        if p <= -1.0 / 6.0 {
            -3.0 * p - 0.5
        } else if p <= 1.0 / 6.0 {
            0.0
        } else if p <= 5.0 / 6.0 {
            3.0 * p - 0.5
        } else if p <= 1.25 {
            2.0
        } else if p <= 1.75 {
            4.5 - 2.0 * p
        } else if p <= 2.5 {
            1.0
        } else {
            p - 1.5
        }
    }

    #[test]
    fn absolute_value_quasiconvex() {
        let h = Hamiltonian::absolute(1.0).unwrap();
        let c = effective_quasiconvex(&h, &cosine(1.0)).unwrap();
        for p in [-3.0, -0.7, -0.5, 0.0, 0.3, 0.5, 2.0] {
            let want = (p as f64).abs().max(0.5) - 0.5;
            assert!((c.evaluate(p).unwrap() - want).abs() < 1e-10, "{p}");
        }
    }

    #[test]
    fn small_oscillation_fixture() {
        let h = w_well();
        let c = effective_small_osc(&h, &cosine(1.0)).unwrap();
        for k in 0..=60 {
            let p = -1.0 + 0.07 * k as f64;
            assert!((c.evaluate(p).unwrap() - fixture_law(p)).abs() < 1e-9, "{p}");
        }
        assert!(c.continuity_defect().unwrap() < CONTINUITY_TOL);
    }

    #[test]
    fn recursion_matches_formula() {
        let h = w_well();
        let c = compute_effective(&h, &cosine(1.0)).unwrap();
        for k in 0..=60 {
            let p = -1.0 + 0.07 * k as f64;
            assert!((c.evaluate(p).unwrap() - fixture_law(p)).abs() < 1e-8, "{p}: {}", c.evaluate(p).unwrap());
        }
    }

    #[test]
    fn inversion_examples() {
        let h = w_well();
        let m = cosine(1.0);
        assert!((invert_branch_equation(&h, 2, &m, 1.5).unwrap() - 1.5).abs() < 1e-10);
        assert!((invert_branch_equation(&h, 1, &m, 2.5).unwrap() - 1.0).abs() < 1e-10);
        assert!(invert_branch_equation(&h, 3, &m, 1.0 / 6.0).unwrap().abs() < 1e-10);
        assert!(invert_branch_equation(&h, 2, &m, 3.0).is_err());
    }
}
