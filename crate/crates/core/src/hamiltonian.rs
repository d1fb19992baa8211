//! Coercive piecewise-monotone Hamiltonians and their branch inverses.
//!
//! A Hamiltonian is stored as an ordered list of pieces covering the real
//! line. Every piece is strictly monotone and is either affine (inverted in
//! closed form) or a monotone cubic table (inverted by bisection). The two
//! outermost pieces are affine tails. Local extrema sit on piece boundaries,
//! so maxima and minima over an interval only need the endpoints and the
//! boundaries inside it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::MonotoneTable;

/// Absolute momentum tolerance for tabulated branch inverses.
pub const INVERSE_TOL: f64 = 1e-12;

const CONTINUITY_TOL: f64 = 1e-9;
const RANGE_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    /// `value + slope * (p - anchor)`.
    Affine { slope: f64, anchor: f64, value: f64 },
    Table(MonotoneTable),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub profile: Profile,
}

impl Piece {
    pub fn affine(lo: f64, hi: f64, slope: f64, anchor: f64, value: f64) -> Self {
        Piece { lo, hi, profile: Profile::Affine { slope, anchor, value } }
    }

    pub fn eval(&self, p: f64) -> f64 {
        match &self.profile {
            Profile::Affine { slope, anchor, value } => value + slope * (p - anchor),
            Profile::Table(t) => t.eval(p),
        }
    }

    fn increasing(&self) -> bool {
        match &self.profile {
            Profile::Affine { slope, .. } => *slope > 0.0,
            Profile::Table(t) => t.increasing(),
        }
    }

    fn value_range(&self) -> (f64, f64) {
        let a = self.eval_end(self.lo);
        let b = self.eval_end(self.hi);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    fn eval_end(&self, p: f64) -> f64 {
        if p.is_infinite() {
            match &self.profile {
                Profile::Affine { slope, .. } => {
                    if (*slope > 0.0) == (p > 0.0) {
                        f64::INFINITY
                    } else {
                        f64::NEG_INFINITY
                    }
                }
                Profile::Table(_) => f64::NAN,
            }
        } else {
            self.eval(p)
        }
    }

    fn invert(&self, s: f64) -> f64 {
        match &self.profile {
            Profile::Affine { slope, anchor, value } => anchor + (s - value) / slope,
            Profile::Table(t) => t.invert(s, INVERSE_TOL),
        }
    }

    fn max_abs_slope(&self) -> f64 {
        match &self.profile {
            Profile::Affine { slope, .. } => slope.abs(),
            Profile::Table(t) => t.max_abs_derivative(),
        }
    }

    fn shifted(&self, dp: f64, de: f64) -> Self {
        let profile = match &self.profile {
            Profile::Affine { slope, anchor, value } => {
                Profile::Affine { slope: *slope, anchor: anchor - dp, value: value - de }
            }
            Profile::Table(t) => Profile::Table(t.shifted(dp, de)),
        };
        Piece { lo: self.lo - dp, hi: self.hi - dp, profile }
    }

    fn reflected(&self) -> Self {
        let profile = match &self.profile {
            Profile::Affine { slope, anchor, value } => {
                Profile::Affine { slope: -slope, anchor: -anchor, value: *value }
            }
            Profile::Table(t) => Profile::Table(t.reflected()),
        };
        Piece { lo: -self.hi, hi: -self.lo, profile }
    }
}

/// Which side of the origin a branch lives on, with its 1-based index.
///
/// Right branches are numbered from the outermost (`Right(1)` is the
/// increasing tail) inward to `Right(2L+1)`, which ends at the origin.
/// Left branches are numbered the same way from the left tail inward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BranchId {
    Right(usize),
    Left(usize),
}

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchId::Right(k) => write!(f, "right-{k}"),
            BranchId::Left(k) => write!(f, "left-{k}"),
        }
    }
}

/// A maximal monotone run of the Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Branch {
    pub id: BranchId,
    /// Momentum domain; infinite endpoints for the two tails.
    pub domain: (f64, f64),
    pub increasing: bool,
    /// Energies taken on the domain, as an ascending pair.
    pub range: (f64, f64),
}

/// Critical energies of a normalized Hamiltonian.
///
/// On the right, `wells[i-1]` is the local minimum value at `p_{2i-1}` and
/// `peaks[i-1]` the local maximum value at `p_{2i}`; the left side follows
/// the same convention.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticalValues {
    pub wells: Vec<f64>,
    pub peaks: Vec<f64>,
    pub left_wells: Vec<f64>,
    pub left_peaks: Vec<f64>,
}

impl CriticalValues {
    pub fn min_well(&self) -> Option<f64> {
        self.wells.iter().copied().reduce(f64::min)
    }

    pub fn max_peak(&self) -> Option<f64> {
        self.peaks.iter().copied().reduce(f64::max)
    }

    /// `max_{i,j} (peak_i - well_j)` over the right side, or 0 without bumps.
    pub fn gap(&self) -> f64 {
        match (self.max_peak(), self.min_well()) {
            (Some(a), Some(b)) => a - b,
            _ => 0.0,
        }
    }

    /// 1-based index of the highest right peak.
    pub fn argmax_peak(&self) -> Option<usize> {
        argbest(&self.peaks, |a, b| a > b)
    }

    /// 1-based index of the lowest right well.
    pub fn argmin_well(&self) -> Option<usize> {
        argbest(&self.wells, |a, b| a < b)
    }
}

fn argbest(v: &[f64], better: impl Fn(f64, f64) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|b| better(x, v[b])) {
            best = Some(i);
        }
    }
    best.map(|i| i + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseMonotoneHamiltonian {
    pieces: Vec<Piece>,
    extrema: Vec<f64>,
    right_breakpoints: Vec<f64>,
    left_breakpoints: Vec<f64>,
    lipschitz: f64,
}

impl PiecewiseMonotoneHamiltonian {
    /// Builds and validates a Hamiltonian from contiguous pieces.
    pub fn new(pieces: Vec<Piece>) -> Result<Self> {
        let h = Self::assemble(pieces)?;
        h.validate()?;
        Ok(h)
    }

    /// Piecewise-linear Hamiltonian through `knots` (ascending momenta) with
    /// affine tails of the given slopes.
    pub fn piecewise_linear(knots: &[(f64, f64)], tail_left: f64, tail_right: f64) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidHamiltonian("no knots".into()));
        }
        let mut pieces = Vec::with_capacity(knots.len() + 1);
        let (p0, v0) = knots[0];
        pieces.push(Piece::affine(f64::NEG_INFINITY, p0, tail_left, p0, v0));
        for w in knots.windows(2) {
            let ((a, va), (b, vb)) = (w[0], w[1]);
            if b <= a {
                return Err(Error::InvalidHamiltonian(format!("knots not ascending at {a}")));
            }
            pieces.push(Piece::affine(a, b, (vb - va) / (b - a), a, va));
        }
        let (pn, vn) = knots[knots.len() - 1];
        pieces.push(Piece::affine(pn, f64::INFINITY, tail_right, pn, vn));
        Self::new(pieces)
    }

    /// `C|p|`.
    pub fn absolute(c: f64) -> Result<Self> {
        Self::piecewise_linear(&[(0.0, 0.0)], -c, c)
    }

    fn assemble(pieces: Vec<Piece>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidHamiltonian(m));
        if pieces.len() < 2 {
            return bad("need at least two pieces".into());
        }
        if pieces[0].lo != f64::NEG_INFINITY || pieces[pieces.len() - 1].hi != f64::INFINITY {
            return bad("pieces must cover the real line".into());
        }
        for (i, pc) in pieces.iter().enumerate() {
            if pc.lo.is_nan() || pc.hi.is_nan() || pc.hi <= pc.lo {
                return bad(format!("piece {i} has an empty domain"));
            }
            match &pc.profile {
                Profile::Affine { slope, anchor, value } => {
                    if !(slope.is_finite() && anchor.is_finite() && value.is_finite()) || *slope == 0.0 {
                        return bad(format!("piece {i} is not strictly monotone"));
                    }
                }
                Profile::Table(t) => {
                    if !pc.lo.is_finite() || !pc.hi.is_finite() {
                        return bad(format!("tabulated piece {i} must be bounded"));
                    }
                    if (t.lo() - pc.lo).abs() > 1e-12 || (t.hi() - pc.hi).abs() > 1e-12 {
                        return bad(format!("piece {i} table does not span its domain"));
                    }
                }
            }
        }
        for (i, w) in pieces.windows(2).enumerate() {
            if w[0].hi != w[1].lo {
                return bad(format!("pieces {i} and {} are not contiguous", i + 1));
            }
            let (a, b) = (w[0].eval(w[0].hi), w[1].eval(w[1].lo));
            if (a - b).abs() > CONTINUITY_TOL * a.abs().max(1.0) {
                return bad(format!("discontinuity at p = {}: {a} vs {b}", w[0].hi));
            }
        }
        if pieces[0].increasing() || !pieces[pieces.len() - 1].increasing() {
            return bad("not coercive: tails must grow outward".into());
        }
        let mut extrema = Vec::new();
        let mut lipschitz: f64 = 0.0;
        for w in pieces.windows(2) {
            if w[0].increasing() != w[1].increasing() {
                extrema.push(w[0].hi);
            }
        }
        for pc in &pieces {
            lipschitz = lipschitz.max(pc.max_abs_slope());
        }
        let mut right_breakpoints: Vec<f64> = extrema.iter().copied().filter(|&p| p > 0.0).rev().collect();
        let mut left_breakpoints: Vec<f64> = extrema.iter().copied().filter(|&p| p < 0.0).collect();
        right_breakpoints.push(0.0);
        left_breakpoints.push(0.0);
        Ok(PiecewiseMonotoneHamiltonian { pieces, extrema, right_breakpoints, left_breakpoints, lipschitz })
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidHamiltonian(m));
        if !self.extrema.contains(&0.0) {
            return bad("the origin is not a breakpoint".into());
        }
        let h0 = self.evaluate(0.0);
        if h0.abs() > 1e-12 {
            return bad(format!("H(0) = {h0}, expected 0"));
        }
        let mut values = Vec::new();
        for &p in &self.extrema {
            if p == 0.0 {
                continue;
            }
            let v = self.evaluate(p);
            if v <= 0.0 {
                return bad(format!("H({p}) = {v} is not positive; the origin must be the strict global minimum"));
            }
            values.push((p, v));
        }
        for i in 0..values.len() {
            for j in i + 1..values.len() {
                if (values[i].1 - values[j].1).abs() <= 1e-12 * values[i].1.max(1.0) {
                    return bad(format!(
                        "critical values at p = {} and p = {} coincide ({})",
                        values[i].0, values[j].0, values[i].1
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Interior breakpoints where monotonicity changes, ascending.
    pub fn extrema(&self) -> &[f64] {
        &self.extrema
    }

    /// `p_1 > p_2 > ... > p_{2L+1} = 0`.
    pub fn right_breakpoints(&self) -> &[f64] {
        &self.right_breakpoints
    }

    /// `p~_1 < ... < p~_{2L~+1} = 0`.
    pub fn left_breakpoints(&self) -> &[f64] {
        &self.left_breakpoints
    }

    /// Number of bumps on the right of the origin.
    pub fn bumps_right(&self) -> usize {
        (self.right_breakpoints.len() - 1) / 2
    }

    pub fn bumps_left(&self) -> usize {
        (self.left_breakpoints.len() - 1) / 2
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }

    fn piece_index(&self, p: f64) -> usize {
        let i = self.pieces.partition_point(|pc| pc.hi < p);
        i.min(self.pieces.len() - 1)
    }

    pub fn evaluate(&self, p: f64) -> f64 {
        self.pieces[self.piece_index(p)].eval(p)
    }

    pub fn critical_values(&self) -> CriticalValues {
        let side = |bp: &[f64]| {
            let n = (bp.len() - 1) / 2;
            let wells = (0..n).map(|i| self.evaluate(bp[2 * i])).collect();
            let peaks = (0..n).map(|i| self.evaluate(bp[2 * i + 1])).collect();
            (wells, peaks)
        };
        let (wells, peaks) = side(&self.right_breakpoints);
        let (left_wells, left_peaks) = side(&self.left_breakpoints);
        CriticalValues { wells, peaks, left_wells, left_peaks }
    }

    /// All branches, right ones first.
    pub fn branches(&self) -> Vec<Branch> {
        let mut out = Vec::new();
        for k in 1..=self.right_breakpoints.len() {
            out.push(self.branch(BranchId::Right(k)).unwrap());
        }
        for k in 1..=self.left_breakpoints.len() {
            out.push(self.branch(BranchId::Left(k)).unwrap());
        }
        out
    }

    pub fn branch(&self, id: BranchId) -> Result<Branch> {
        let (domain, increasing) = match id {
            BranchId::Right(k) => {
                let bp = &self.right_breakpoints;
                if k == 0 || k > bp.len() {
                    return Err(Error::Precondition(format!("no branch {id}")));
                }
                let lo = bp[k - 1];
                let hi = if k == 1 { f64::INFINITY } else { bp[k - 2] };
                ((lo, hi), k % 2 == 1)
            }
            BranchId::Left(k) => {
                let bp = &self.left_breakpoints;
                if k == 0 || k > bp.len() {
                    return Err(Error::Precondition(format!("no branch {id}")));
                }
                let hi = bp[k - 1];
                let lo = if k == 1 { f64::NEG_INFINITY } else { bp[k - 2] };
                ((lo, hi), k % 2 == 0)
            }
        };
        let at = |p: f64| if p.is_infinite() { f64::INFINITY } else { self.evaluate(p) };
        let (a, b) = (at(domain.0), at(domain.1));
        let range = if a <= b { (a, b) } else { (b, a) };
        Ok(Branch { id, domain, increasing, range })
    }

    /// The outermost left branch, written `Psi` in the formulas when there
    /// are no left bumps.
    pub fn left_tail_branch(&self) -> BranchId {
        BranchId::Left(1)
    }

    /// Inverse of the branch `id` at energy `s`.
    pub fn branch_inverse(&self, id: BranchId, s: f64) -> Result<f64> {
        let br = self.branch(id)?;
        let slack = RANGE_SLACK * s.abs().max(1.0);
        if !(s >= br.range.0 - slack && s <= br.range.1 + slack) {
            return Err(Error::OutOfRange { branch: id.to_string(), s, lo: br.range.0, hi: br.range.1 });
        }
        let s = s.clamp(br.range.0, br.range.1);
        Ok(self.invert_on(&br, s))
    }

    fn invert_on(&self, br: &Branch, s: f64) -> f64 {
        let (a, b) = br.domain;
        let start = if a.is_infinite() { 0 } else { self.piece_index(a) + usize::from(self.pieces[self.piece_index(a)].hi == a) };
        for pc in &self.pieces[start..] {
            if pc.lo >= b {
                break;
            }
            let (lo, hi) = pc.value_range();
            if s >= lo && s <= hi {
                return pc.invert(s).clamp(pc.lo.max(a), pc.hi.min(b));
            }
        }
        if (s - br.range.0).abs() < (s - br.range.1).abs() {
            if br.increasing { a } else { b }
        } else if br.increasing {
            b
        } else {
            a
        }
    }

    /// Energies inside the branch's range where its inverse changes formula.
    pub fn branch_kinks(&self, id: BranchId) -> Vec<f64> {
        let Ok(br) = self.branch(id) else { return Vec::new() };
        let (a, b) = br.domain;
        self.pieces
            .iter()
            .map(|pc| pc.hi)
            .filter(|&p| p > a && p < b)
            .map(|p| self.evaluate(p))
            .collect()
    }

    /// Maximum of `H` on `[a, b]`.
    pub fn max_on(&self, a: f64, b: f64) -> f64 {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let mut m = self.evaluate(a).max(self.evaluate(b));
        for &p in self.interior_extrema(a, b) {
            m = m.max(self.evaluate(p));
        }
        m
    }

    /// Minimum of `H` on `[a, b]`.
    pub fn min_on(&self, a: f64, b: f64) -> f64 {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let mut m = self.evaluate(a).min(self.evaluate(b));
        for &p in self.interior_extrema(a, b) {
            m = m.min(self.evaluate(p));
        }
        m
    }

    fn interior_extrema(&self, a: f64, b: f64) -> &[f64] {
        let i = self.extrema.partition_point(|&p| p <= a);
        let j = self.extrema.partition_point(|&p| p < b);
        &self.extrema[i..j.max(i)]
    }

    /// Godunov numerical Hamiltonian: `min` of `H` over `[a, b]` when
    /// `a <= b`, `max` over `[b, a]` otherwise.
    pub fn godunov(&self, a: f64, b: f64) -> f64 {
        if a <= b {
            self.min_on(a, b)
        } else {
            self.max_on(b, a)
        }
    }

    /// `q -> H(q + dp) - de`, unvalidated.
    fn shifted_raw(&self, dp: f64, de: f64) -> Result<Self> {
        Self::assemble(self.pieces.iter().map(|pc| pc.shifted(dp, de)).collect())
    }

    /// `q -> H(q + dp) - de`.
    pub fn shifted(&self, dp: f64, de: f64) -> Result<Self> {
        let h = self.shifted_raw(dp, de)?;
        h.validate()?;
        Ok(h)
    }

    /// `q -> H(-q)`.
    pub fn reflected(&self) -> Self {
        let pieces = self.pieces.iter().rev().map(Piece::reflected).collect();
        Self::assemble(pieces).expect("reflection preserves structure")
    }

    /// Keeps `H` on `(-inf, p0]` and continues with slope `c` beyond.
    /// `p0` must be a piece boundary.
    fn keep_left_of(&self, p0: f64, c: f64) -> Result<Vec<Piece>> {
        let mut pieces: Vec<Piece> = self.pieces.iter().filter(|pc| pc.hi <= p0).cloned().collect();
        if pieces.last().map(|pc| pc.hi) != Some(p0) {
            return Err(Error::Internal(format!("{p0} is not a piece boundary")));
        }
        pieces.push(Piece::affine(p0, f64::INFINITY, c, p0, self.evaluate(p0)));
        Ok(pieces)
    }

    /// Keeps `H` on `[p0, inf)` and continues with slope `-c` before.
    fn keep_right_of(&self, p0: f64, c: f64) -> Result<Vec<Piece>> {
        let kept: Vec<Piece> = self.pieces.iter().filter(|pc| pc.lo >= p0).cloned().collect();
        if kept.first().map(|pc| pc.lo) != Some(p0) {
            return Err(Error::Internal(format!("{p0} is not a piece boundary")));
        }
        let mut pieces = vec![Piece::affine(f64::NEG_INFINITY, p0, -c, p0, self.evaluate(p0))];
        pieces.extend(kept);
        Ok(pieces)
    }

    fn surgery_slope(&self) -> f64 {
        2.0 * self.lipschitz
    }

    /// Splits into a right half `H+` (equal to `H` on `[0, inf)`, `C|p|`
    /// on the left) and a left half `H-` (the mirror construction), with
    /// `C` twice the Lipschitz bound.
    pub fn split_at_zero(&self) -> Result<(Self, Self)> {
        let c = self.surgery_slope();
        let plus = Self::new(self.keep_right_of(0.0, c)?)?;
        let minus = Self::new(self.keep_left_of(0.0, c)?)?;
        Ok((plus, minus))
    }

    fn carve_checks(&self, k: usize, l: usize) -> Result<CriticalValues> {
        if self.bumps_left() != 0 {
            return Err(Error::Precondition("carving needs a Hamiltonian without left bumps".into()));
        }
        let cv = self.critical_values();
        if cv.argmax_peak() != Some(k) {
            return Err(Error::Precondition(format!("{k} is not the index of the highest peak")));
        }
        if cv.argmin_well() != Some(l) {
            return Err(Error::Precondition(format!("{l} is not the index of the lowest well")));
        }
        Ok(cv)
    }

    /// Cuts a right half at `p_{2k}` and `p_{2l}` when the lowest well `l`
    /// lies inside the highest peak `k` (`l > k`).
    pub fn carve_left(&self, k: usize, l: usize) -> Result<Carved> {
        let cv = self.carve_checks(k, l)?;
        if l <= k {
            return Err(Error::Precondition(format!("carve_left needs l > k, got l = {l}, k = {k}")));
        }
        let c = self.surgery_slope();
        let bp = &self.right_breakpoints;
        let inner = Self::new(self.keep_left_of(bp[2 * k - 1], c)?)?;
        let outer_raw = Self::assemble(self.keep_right_of(bp[2 * l - 1], c)?)?;
        let outer = Shifted::normalize(outer_raw, bp[2 * l - 2], cv.wells[l - 1])?;
        Ok(Carved { inner, outer })
    }

    /// Cuts a right half at `p_{2k}` when the lowest well `l` is not
    /// inside the highest peak (`l <= k`).
    pub fn carve_right(&self, k: usize, l: usize) -> Result<Carved> {
        let cv = self.carve_checks(k, l)?;
        if l > k {
            return Err(Error::Precondition(format!("carve_right needs l <= k, got l = {l}, k = {k}")));
        }
        let c = self.surgery_slope();
        let bp = &self.right_breakpoints;
        let p2k = bp[2 * k - 1];
        let inner = Self::new(self.keep_left_of(p2k, c)?)?;
        let outer_raw = Self::assemble(self.keep_right_of(p2k, c)?)?;
        let outer = Shifted::normalize(outer_raw, bp[2 * l - 2], cv.wells[l - 1])?;
        Ok(Carved { inner, outer })
    }

    /// Serializable description.
    pub fn to_spec(&self) -> HamiltonianSpec {
        let n = self.pieces.len();
        let branches = self.pieces[1..n - 1]
            .iter()
            .map(|pc| match &pc.profile {
                Profile::Affine { slope, .. } => BranchSpec::Affine {
                    domain: [pc.lo, pc.hi],
                    slope: *slope,
                    value_at_left: pc.eval(pc.lo),
                },
                Profile::Table(t) => BranchSpec::Table {
                    knots: t.knots().to_vec(),
                    values: t.knots().iter().map(|&x| t.eval(x)).collect(),
                },
            })
            .collect();
        let slope = |pc: &Piece| match pc.profile {
            Profile::Affine { slope, .. } => slope,
            Profile::Table(_) => unreachable!("tails are affine"),
        };
        let anchor = if n == 2 { Some([self.pieces[0].hi, self.pieces[0].eval(self.pieces[0].hi)]) } else { None };
        HamiltonianSpec {
            branches,
            tail_slope_left: slope(&self.pieces[0]),
            tail_slope_right: slope(&self.pieces[n - 1]),
            anchor,
        }
    }
}

/// A Hamiltonian moved so that its minimum sits at the origin:
/// `original(p) = normalized(p - momentum_shift) + energy_shift`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Shifted {
    pub normalized: PiecewiseMonotoneHamiltonian,
    pub momentum_shift: f64,
    pub energy_shift: f64,
}

impl Shifted {
    fn normalize(raw: PiecewiseMonotoneHamiltonian, p_star: f64, m_star: f64) -> Result<Self> {
        let normalized = raw.shifted(p_star, m_star)?;
        Ok(Shifted { normalized, momentum_shift: p_star, energy_shift: m_star })
    }
}

/// Output of the carving operations: `inner` keeps the region around the
/// origin, `outer` keeps the far right and is renormalized.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Carved {
    pub inner: PiecewiseMonotoneHamiltonian,
    pub outer: Shifted,
}

/// JSON form of a Hamiltonian. Branches are listed by ascending momentum;
/// the tails extend the first and last branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    pub branches: Vec<BranchSpec>,
    pub tail_slope_left: f64,
    pub tail_slope_right: f64,
    /// Joint point of the tails when there are no finite branches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BranchSpec {
    Affine { domain: [f64; 2], slope: f64, value_at_left: f64 },
    Table { knots: Vec<f64>, values: Vec<f64> },
}

impl HamiltonianSpec {
    pub fn build(&self) -> Result<PiecewiseMonotoneHamiltonian> {
        let bad = |m: String| Err(Error::InvalidHamiltonian(m));
        let mut inner = Vec::new();
        for (i, b) in self.branches.iter().enumerate() {
            match b {
                BranchSpec::Affine { domain, slope, value_at_left } => {
                    inner.push(Piece::affine(domain[0], domain[1], *slope, domain[0], *value_at_left));
                }
                BranchSpec::Table { knots, values } => {
                    let Some(t) = MonotoneTable::new(knots.clone(), values.clone()) else {
                        return bad(format!("branch {i}: table is not strictly monotone"));
                    };
                    inner.push(Piece { lo: t.lo(), hi: t.hi(), profile: Profile::Table(t) });
                }
            }
        }
        let (first, last) = match (inner.first(), inner.last()) {
            (Some(f), Some(l)) => ((f.lo, f.eval(f.lo)), (l.hi, l.eval(l.hi))),
            _ => match self.anchor {
                Some([p, v]) => ((p, v), (p, v)),
                None => return bad("no branches and no anchor".into()),
            },
        };
        let mut pieces = vec![Piece::affine(f64::NEG_INFINITY, first.0, self.tail_slope_left, first.0, first.1)];
        pieces.extend(inner);
        pieces.push(Piece::affine(last.0, f64::INFINITY, self.tail_slope_right, last.0, last.1));
        PiecewiseMonotoneHamiltonian::new(pieces)
    }
}

/// Bookkeeping for [`normalize`]: `original(p) = normalized(p -
/// momentum_shift) + energy_shift` up to the recorded perturbations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormalizationRecord {
    pub momentum_shift: f64,
    pub energy_shift: f64,
    /// Largest change applied to separate coinciding critical values.
    pub perturbation: f64,
    /// `(momentum, before, after)` for each moved critical value, in
    /// normalized coordinates.
    pub perturbed: Vec<(f64, f64, f64)>,
    pub mollification_width: f64,
    /// Half-width of the probed momentum window.
    pub probe: f64,
    /// Sup distance between the representation and the shifted input on
    /// the probe window, measured on a fine grid.
    pub sup_error: f64,
}

impl NormalizationRecord {
    pub fn to_original(&self, q: f64, value: f64) -> (f64, f64) {
        (q + self.momentum_shift, value + self.energy_shift)
    }

    pub fn to_normalized(&self, p: f64, value: f64) -> (f64, f64) {
        (p - self.momentum_shift, value - self.energy_shift)
    }
}

const NORMALIZE_GRID: usize = 8192;

/// Turns a continuous coercive function into a validated Hamiltonian.
///
/// The minimum is moved to the origin (ties go to the smallest `|p|`,
/// positive side first), monotone runs are tabulated to within `tol`, and
/// coinciding critical values are separated: the `j`-th repeat of a value
/// moves up by `j * tol / (2K)`,
/// where `K` is the larger bump count of the two sides.
pub fn normalize(raw: impl Fn(f64) -> f64, tol: f64) -> Result<(PiecewiseMonotoneHamiltonian, NormalizationRecord)> {
    let mut probe = 1.0;
    let mut found = None;
    for _ in 0..20 {
        // extrema are searched on twice the window so that none hides
        // just outside it
        let ext = probe_extrema(&raw, 2.0 * probe)?;
        let inside = ext.iter().all(|e| e.at.abs() < probe);
        let fmin = ext.iter().filter(|e| !e.is_max).map(|e| e.value).fold(f64::INFINITY, f64::min);
        let top = ext.iter().filter(|e| e.is_max).map(|e| e.value - fmin).fold(0.0, f64::max);
        let ends = (raw(-probe) - fmin).min(raw(probe) - fmin);
        let outer_minima = ext.first().is_some_and(|e| !e.is_max) && ext.last().is_some_and(|e| !e.is_max);
        if inside && outer_minima && ends > 2.0 * top && ends > 0.0 {
            found = Some(ext);
            break;
        }
        probe *= 2.0;
    }
    let Some(ext) = found else {
        return Err(Error::NotCoercive { probe });
    };

    let fmin = ext.iter().filter(|e| !e.is_max).map(|e| e.value).fold(f64::INFINITY, f64::min);
    let tie = 1e-3 * tol;
    let origin = ext
        .iter()
        .filter(|e| !e.is_max && e.value - fmin <= tie)
        .min_by(|a, b| {
            let ka = (a.at.abs(), if a.at >= 0.0 { 0 } else { 1 });
            let kb = (b.at.abs(), if b.at >= 0.0 { 0 } else { 1 });
            ka.partial_cmp(&kb).unwrap()
        })
        .unwrap();
    let (p_star, e_star) = (origin.at, origin.value);

    // critical points in normalized coordinates, with neighbours for the
    // perturbation tents
    let crit: Vec<(f64, f64, bool)> = ext.iter().map(|e| (e.at - p_star, e.value - e_star, e.is_max)).collect();
    let lo_end = -probe - p_star;
    let hi_end = probe - p_star;
    let bumps_r = crit.iter().filter(|c| c.0 > 0.0).count() / 2;
    let bumps_l = crit.iter().filter(|c| c.0 < 0.0).count() / 2;
    let kk = bumps_r.max(bumps_l).max(1) as f64;

    let mut perturbed = Vec::new();
    let mut bumps: Vec<Lift> = Vec::new();
    let mut order: Vec<usize> = (0..crit.len()).filter(|&i| crit[i].0 != 0.0).collect();
    // right side from the outermost inward, then the left side likewise
    let key = |i: usize| {
        let p = crit[i].0;
        if p > 0.0 {
            (0, -p)
        } else {
            (1, p)
        }
    };
    order.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap());
    // the origin's zero counts as already taken
    let mut seen: Vec<(f64, usize)> = vec![(0.0, 0)];
    for &i in &order {
        let (p, v, is_max) = crit[i];
        let j = match seen.iter_mut().find(|(w, _)| (v - *w).abs() <= tol) {
            Some(entry) => {
                entry.1 += 1;
                entry.1
            }
            None => {
                seen.push((v, 0));
                0
            }
        };
        if j == 0 {
            continue;
        }
        let delta = j as f64 * tol / (2.0 * kk);
        let left = if i == 0 { lo_end } else { crit[i - 1].0 };
        let right = if i + 1 == crit.len() { hi_end } else { crit[i + 1].0 };
        bumps.push(if is_max {
            Lift::Tent { left, at: p, right, delta }
        } else {
            let reach = 0.5 * (p - left).min(right - p);
            Lift::Cone { left, at: p, right, floor: v + delta, slope: 0.1 * delta / reach }
        });
        perturbed.push((p, v, v + delta));
    }

    let shifted = |q: f64| {
        let mut v = raw(q + p_star) - e_star;
        for b in &bumps {
            if let Lift::Tent { left, at, right, delta } = *b {
                if q > left && q < right {
                    v += delta * if q <= at { (q - left) / (at - left) } else { (right - q) / (right - at) };
                }
            }
        }
        for b in &bumps {
            if let Lift::Cone { left, at, right, floor, slope } = *b {
                if q > left && q < right {
                    v = v.max(floor + slope * (q - at).abs());
                }
            }
        }
        v
    };

    let mut cuts: Vec<f64> = vec![lo_end];
    cuts.extend(crit.iter().map(|c| c.0));
    // where a cone meets the original curve the result has a kink
    for b in &bumps {
        if let Lift::Cone { left, at, right, .. } = *b {
            let gap = |q: f64| {
                let mut v = raw(q + p_star) - e_star;
                for t in &bumps {
                    if let Lift::Tent { left, at, right, delta } = *t {
                        if q > left && q < right {
                            v += delta * if q <= at { (q - left) / (at - left) } else { (right - q) / (right - at) };
                        }
                    }
                }
                shifted(q) - v
            };
            let scale = 1e-14 * at.abs().max(1.0);
            for (lo, hi) in [(left, at), (at, right)] {
                if let Some(x) = crate::numerics::bisect(|q| if gap(q) > 0.0 { 1.0 } else { -1.0 }, lo, hi, scale) {
                    if x > lo && x < hi {
                        cuts.push(x);
                    }
                }
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.push(hi_end);
    cuts.dedup();
    let mut pieces = Vec::new();
    for w in cuts.windows(2) {
        pieces.push(tabulate_piece(&shifted, w[0], w[1], tol)?);
    }
    let first = &pieces[0];
    let last = &pieces[pieces.len() - 1];
    let end_slope = |pc: &Piece, at: f64, dir: f64| match pc.profile {
        Profile::Affine { slope, .. } => slope,
        Profile::Table(_) => slope_near(&shifted, at, dir),
    };
    let dl = end_slope(first, lo_end, 1.0);
    let dr = end_slope(last, hi_end, -1.0);
    let left_tail = Piece::affine(f64::NEG_INFINITY, lo_end, dl.min(-1e-9), lo_end, first.eval(lo_end));
    let right_tail = Piece::affine(hi_end, f64::INFINITY, dr.max(1e-9), hi_end, last.eval(hi_end));
    let mut all = vec![left_tail];
    all.extend(pieces);
    all.push(right_tail);
    let h = PiecewiseMonotoneHamiltonian::new(all)?;

    let mut sup_error: f64 = 0.0;
    let n = 4 * NORMALIZE_GRID;
    for i in 0..=n {
        let q = lo_end + (hi_end - lo_end) * i as f64 / n as f64;
        sup_error = sup_error.max((h.evaluate(q) - (raw(q + p_star) - e_star)).abs());
    }
    let perturbation = perturbed.iter().map(|&(_, a, b): &(f64, f64, f64)| (b - a).abs()).fold(0.0, f64::max);
    Ok((
        h,
        NormalizationRecord {
            momentum_shift: p_star,
            energy_shift: e_star,
            perturbation,
            perturbed,
            mollification_width: 0.0,
            probe,
            sup_error,
        },
    ))
}

/// Local lifts used to separate repeated critical values: peaks get a
/// tent supported between their neighbours, wells are raised by taking the
/// maximum with a shallow cone.
enum Lift {
    Tent { left: f64, at: f64, right: f64, delta: f64 },
    Cone { left: f64, at: f64, right: f64, floor: f64, slope: f64 },
}

struct RawExtremum {
    at: f64,
    value: f64,
    is_max: bool,
}

fn probe_extrema(raw: &impl Fn(f64) -> f64, probe: f64) -> Result<Vec<RawExtremum>> {
    let n = NORMALIZE_GRID;
    let xs: Vec<f64> = (0..=n).map(|i| -probe + 2.0 * probe * i as f64 / n as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| raw(x)).collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidHamiltonian("non-finite value".into()));
    }
    let mut out = Vec::new();
    let mut prev = 0.0;
    for i in 0..n {
        let d = ys[i + 1] - ys[i];
        if d == 0.0 {
            return Err(Error::InvalidHamiltonian(format!("flat stretch near p = {}", xs[i])));
        }
        if prev != 0.0 && (d > 0.0) != (prev > 0.0) {
            let is_max = prev > 0.0;
            let at = refine_extremum(raw, xs[i - 1], xs[i], xs[i + 1], is_max);
            out.push(RawExtremum { at, value: raw(at), is_max });
        }
        prev = d;
    }
    Ok(out)
}

fn refine_extremum(raw: &impl Fn(f64) -> f64, mut a: f64, grid: f64, mut b: f64, is_max: bool) -> f64 {
    let g = |x: f64| if is_max { -raw(x) } else { raw(x) };
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    for _ in 0..200 {
        if b - a < 1e-13 * a.abs().max(1.0) {
            break;
        }
        if g(c) < g(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    // the grid point wins ties, so corners that fall on the grid stay exact
    let mut best = grid;
    for x in [a, 0.5 * (a + b), b] {
        if g(x) < g(best) {
            best = x;
        }
    }
    best
}

fn slope_near(f: &impl Fn(f64) -> f64, at: f64, dir: f64) -> f64 {
    let h = 1e-6 * at.abs().max(1.0);
    (f(at) - f(at + dir * h)) / (-dir * h)
}

fn tabulate_piece(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<Piece> {
    let (fa, fb) = (f(a), f(b));
    let slope = (fb - fa) / (b - a);
    let affine = (1..16).all(|i| {
        let x = a + (b - a) * i as f64 / 16.0;
        (f(x) - (fa + slope * (x - a))).abs() <= 1e-12 * fa.abs().max(fb.abs()).max(1.0)
    });
    if affine {
        return Ok(Piece::affine(a, b, slope, a, fa));
    }
    let mut n = 64;
    while n <= 1 << 20 {
        let xs: Vec<f64> = (0..=n).map(|i| if i == n { b } else { a + (b - a) * i as f64 / n as f64 }).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let t = MonotoneTable::new(xs.clone(), ys)
            .ok_or_else(|| Error::InvalidHamiltonian(format!("not strictly monotone on [{a}, {b}]")))?;
        let worst = xs
            .windows(2)
            .flat_map(|w| [0.25, 0.5, 0.75].map(|s| w[0] + s * (w[1] - w[0])))
            .map(|x| (t.eval(x) - f(x)).abs())
            .fold(0.0, f64::max);
        if worst <= 0.25 * tol {
            return Ok(Piece { lo: a, hi: b, profile: Profile::Table(t) });
        }
        n *= 2;
    }
    Err(Error::InvalidHamiltonian(format!("could not tabulate [{a}, {b}] to {tol}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w_well() -> PiecewiseMonotoneHamiltonian {
        PiecewiseMonotoneHamiltonian::piecewise_linear(&[(0.0, 0.0), (1.0, 3.0), (2.0, 1.0)], -3.0, 1.0).unwrap()
    }

    #[test]
    fn evaluates_declared_pieces() {
        let h = w_well();
        assert_eq!(h.evaluate(0.0), 0.0);
        assert_eq!(h.evaluate(1.0), 3.0);
        assert_eq!(h.evaluate(2.0), 1.0);
        assert_eq!(h.evaluate(-2.0), 6.0);
        assert_eq!(h.evaluate(5.0), 4.0);
    }

    #[test]
    fn breakpoints_and_critical_values() {
        let h = w_well();
        assert_eq!(h.right_breakpoints(), &[2.0, 1.0, 0.0]);
        assert_eq!(h.left_breakpoints(), &[0.0]);
        let cv = h.critical_values();
        assert_eq!(cv.wells, vec![1.0]);
        assert_eq!(cv.peaks, vec![3.0]);
        assert_eq!(cv.gap(), 2.0);
        assert_eq!(cv.min_well(), Some(1.0));
        assert_eq!(cv.max_peak(), Some(3.0));
        assert_eq!(h.lipschitz_bound(), 3.0);
        let convex = PiecewiseMonotoneHamiltonian::absolute(1.0).unwrap().critical_values();
        assert!(convex.wells.is_empty() && convex.peaks.is_empty());
    }

    #[test]
    fn inverts_each_branch() {
        let h = w_well();
        assert_eq!(h.branch_inverse(BranchId::Right(1), 1.0).unwrap(), 2.0);
        assert_eq!(h.branch_inverse(BranchId::Right(2), 3.0).unwrap(), 1.0);
        assert_eq!(h.branch_inverse(BranchId::Right(3), 0.0).unwrap(), 0.0);
        assert_eq!(h.branch_inverse(BranchId::Left(1), 1.5).unwrap(), -0.5);
        match h.branch_inverse(BranchId::Right(2), 3.5) {
            Err(Error::OutOfRange { lo, hi, .. }) => assert_eq!((lo, hi), (1.0, 3.0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn extremes_over_intervals() {
        let h = w_well();
        assert_eq!(h.max_on(1.5, 3.0), 2.0);
        assert_eq!(h.min_on(2.0 / 3.0, 1.5), 2.0);
        assert_eq!(h.max_on(0.5, 1.5), 3.0);
        assert_eq!(h.min_on(-1.0, 3.0), 0.0);
        assert_eq!(h.godunov(0.5, 2.5), 1.0);
        assert_eq!(h.godunov(2.5, 0.5), 3.0);
    }

    #[test]
    fn rejects_invalid_inputs() {
        // minimum not at the origin
        assert!(PiecewiseMonotoneHamiltonian::piecewise_linear(&[(0.0, 0.0), (1.0, 2.0), (2.0, -1.0)], -1.0, 1.0).is_err());
        // repeated peak heights across the two sides
        assert!(PiecewiseMonotoneHamiltonian::piecewise_linear(
            &[(-2.0, 1.0), (-1.0, 3.0), (0.0, 0.0), (1.0, 3.0), (2.0, 2.0)],
            -1.0,
            1.0
        )
        .is_err());
        // not coercive
        assert!(PiecewiseMonotoneHamiltonian::piecewise_linear(&[(0.0, 0.0)], 1.0, 1.0).is_err());
    }

    #[test]
    fn split_halves_reassemble() {
        let h = w_well();
        let (plus, minus) = h.split_at_zero().unwrap();
        assert_eq!((plus.bumps_right(), plus.bumps_left()), (1, 0));
        assert_eq!((minus.bumps_right(), minus.bumps_left()), (0, 0));
        for i in 0..=400 {
            let p = -4.0 + 10.0 * i as f64 / 400.0;
            assert!((plus.evaluate(p).min(minus.evaluate(p)) - h.evaluate(p)).abs() < 1e-12);
        }
    }

    #[test]
    fn carve_right_on_the_w_well() {
        let h = w_well();
        let c = h.carve_right(1, 1).unwrap();
        assert_eq!(c.inner.bumps_right(), 0);
        assert_eq!(c.outer.normalized.bumps_right() + c.outer.normalized.bumps_left(), 0);
        assert_eq!(c.outer.energy_shift, 1.0);
        assert_eq!(c.outer.momentum_shift, 2.0);
        for i in 0..=300 {
            let p = -2.0 + 6.0 * i as f64 / 300.0;
            let h1 = c.inner.evaluate(p);
            let h2 = c.outer.normalized.evaluate(p - 2.0) + 1.0;
            assert!(h1 >= h.evaluate(p) - 1e-12 && h2 >= h.evaluate(p) - 1e-12);
            if p <= 1.0 {
                assert_eq!(h1, h.evaluate(p));
            }
            if p >= 1.0 {
                assert!((h2 - h.evaluate(p)).abs() < 1e-12);
            }
        }
        assert!(h.carve_left(1, 1).is_err());
    }

    #[test]
    fn normalizes_double_well() {
        let (h, rec) = normalize(|p| (p * p - 1.0).powi(2), 1e-6).unwrap();
        assert_eq!(rec.momentum_shift, 1.0);
        assert_eq!(rec.energy_shift, 0.0);
        assert!(rec.sup_error <= 1e-6);
        assert_eq!(h.bumps_left(), 1);
        assert_eq!(h.bumps_right(), 0);
        for i in 0..=200 {
            let p = -1.8 + 3.6 * i as f64 / 200.0;
            let (q, v) = rec.to_normalized(p, (p * p - 1.0).powi(2));
            assert!((h.evaluate(q) - v).abs() <= 1e-6);
        }
    }

    #[test]
    fn normalizing_abs_is_identity() {
        let (h, rec) = normalize(f64::abs, 1e-6).unwrap();
        assert_eq!(rec.momentum_shift, 0.0);
        assert_eq!(rec.energy_shift, 0.0);
        assert_eq!(rec.perturbation, 0.0);
        assert!((h.evaluate(-3.7) - 3.7).abs() < 1e-12);
        assert!((h.evaluate(12.5) - 12.5).abs() < 1e-9);
    }

    #[test]
    fn separates_equal_peaks() {
        let tol = 1e-6;
        let raw = |p: f64| {
            let a = p.abs();
            if a <= 1.0 {
                3.0 * a
            } else if a <= 2.0 {
                3.0 - 2.0 * (a - 1.0)
            } else {
                1.0 + (a - 2.0) * if p > 0.0 { 1.0 } else { 1.5 }
            }
        };
        let (h, rec) = normalize(raw, tol).unwrap();
        assert_eq!(rec.perturbed.len(), 2);
        let peaks: Vec<f64> = rec.perturbed.iter().filter(|x| x.1 > 2.0).map(|x| x.2).collect();
        assert_eq!(peaks.len(), 1);
        assert!((peaks[0] - (3.0 + 0.5 * tol)).abs() < 1e-12);
        assert_eq!(h.critical_values().peaks, vec![3.0]);
        assert!((h.critical_values().left_peaks[0] - (3.0 + 0.5 * tol)).abs() < 1e-12);
    }

    #[test]
    fn spec_round_trip() {
        let h = w_well();
        let json = serde_json::to_string(&h.to_spec()).unwrap();
        let back: HamiltonianSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.build().unwrap().evaluate(1.5), 2.0);
        let abs = PiecewiseMonotoneHamiltonian::absolute(2.0).unwrap();
        assert_eq!(abs.to_spec().build().unwrap().evaluate(-1.0), 2.0);
    }
}
