//! Stationary potentials normalized to take values in `[-mbar, 0]`.
//!
//! A [`PotentialModel`] describes the law of the field; [`Field`] is one
//! realization that can be evaluated, split into monotone pieces and
//! integrated against functions of its value. Windows of a field, cyclic
//! for periodic models, are what the corrector and solvers work on.

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bisect, gauss_legendre_n};

const ROOT_TOL: f64 = 1e-14;

/// A one-periodic profile.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeriodicProfile {
    shape: Shape,
    mbar: f64,
    /// Local extrema in `[0, 1)` as `(y, is_max)`, ascending.
    critical: Vec<(f64, bool)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
enum Shape {
    Zero,
    Cosine,
    /// `scale * (w(y) - top)` with `w` a trigonometric polynomial.
    Fourier { cos: Vec<f64>, sin: Vec<f64>, top: f64, scale: f64 },
}

impl PeriodicProfile {
    /// `V = 0`.
    pub fn zero() -> Self {
        PeriodicProfile { shape: Shape::Zero, mbar: 0.0, critical: Vec::new() }
    }

    /// `V(y) = -(mbar/2)(1 - cos 2 pi y)`.
    pub fn cosine(mbar: f64) -> Result<Self> {
        if !(mbar > 0.0 && mbar.is_finite()) {
            return Err(Error::InvalidPotential(format!("oscillation must be positive, got {mbar}")));
        }
        Ok(PeriodicProfile { shape: Shape::Cosine, mbar, critical: vec![(0.0, true), (0.5, false)] })
    }

    /// Trigonometric polynomial with coefficients `cos[k-1]`, `sin[k-1]` for
    /// frequency `k`, affinely rescaled to range exactly over `[-mbar, 0]`.
    pub fn fourier(cos: Vec<f64>, sin: Vec<f64>, mbar: f64) -> Result<Self> {
        if !(mbar > 0.0 && mbar.is_finite()) {
            return Err(Error::InvalidPotential(format!("oscillation must be positive, got {mbar}")));
        }
        let raw = |y: f64| trig(&cos, &sin, y);
        let draw = |y: f64| trig_derivative(&cos, &sin, y);
        let n = 4096;
        let mut critical = Vec::new();
        for i in 0..n {
            let (a, b) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
            let (da, db) = (draw(a), draw(b));
            if da == 0.0 {
                let is_max = draw(a - 1e-9) > 0.0;
                critical.push((a, is_max));
            } else if da.signum() != db.signum() && db != 0.0 {
                let y = bisect(draw, a, b, ROOT_TOL).unwrap();
                critical.push((y, da > 0.0));
            }
        }
        if critical.is_empty() {
            return Err(Error::InvalidPotential("fourier profile is constant".into()));
        }
        let top = critical.iter().map(|c| raw(c.0)).fold(f64::NEG_INFINITY, f64::max);
        let bottom = critical.iter().map(|c| raw(c.0)).fold(f64::INFINITY, f64::min);
        let scale = mbar / (top - bottom);
        Ok(PeriodicProfile { shape: Shape::Fourier { cos, sin, top, scale }, mbar, critical })
    }

    pub fn mbar(&self) -> f64 {
        self.mbar
    }

    pub fn value(&self, y: f64) -> f64 {
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::Cosine => -0.5 * self.mbar * (1.0 - (2.0 * PI * y).cos()),
            Shape::Fourier { cos, sin, top, scale } => scale * (trig(cos, sin, y) - top),
        }
    }

    pub fn derivative(&self, y: f64) -> f64 {
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::Cosine => -PI * self.mbar * (2.0 * PI * y).sin(),
            Shape::Fourier { cos, sin, scale, .. } => scale * trig_derivative(cos, sin, y),
        }
    }

    /// `y -> profile(-y)`.
    pub fn reflected(&self) -> Self {
        let shape = match &self.shape {
            Shape::Fourier { cos, sin, top, scale } => Shape::Fourier {
                cos: cos.clone(),
                sin: sin.iter().map(|b| -b).collect(),
                top: *top,
                scale: *scale,
            },
            other => other.clone(),
        };
        let mut critical: Vec<(f64, bool)> = self.critical.iter().map(|&(y, m)| ((1.0 - y).rem_euclid(1.0), m)).collect();
        critical.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        PeriodicProfile { shape, mbar: self.mbar, critical }
    }

    fn spec(&self) -> PeriodicSpec {
        match &self.shape {
            Shape::Zero => PeriodicSpec::Zero,
            Shape::Cosine => PeriodicSpec::Cosine { mbar: self.mbar },
            Shape::Fourier { cos, sin, .. } => PeriodicSpec::Fourier { cos: cos.clone(), sin: sin.clone(), mbar: self.mbar },
        }
    }
}

fn trig(cos: &[f64], sin: &[f64], y: f64) -> f64 {
    let mut v = 0.0;
    for (k, a) in cos.iter().enumerate() {
        v += a * (2.0 * PI * (k + 1) as f64 * y).cos();
    }
    for (k, b) in sin.iter().enumerate() {
        v += b * (2.0 * PI * (k + 1) as f64 * y).sin();
    }
    v
}

fn trig_derivative(cos: &[f64], sin: &[f64], y: f64) -> f64 {
    let mut v = 0.0;
    for (k, a) in cos.iter().enumerate() {
        let w = 2.0 * PI * (k + 1) as f64;
        v -= a * w * (w * y).sin();
    }
    for (k, b) in sin.iter().enumerate() {
        let w = 2.0 * PI * (k + 1) as f64;
        v += b * w * (w * y).cos();
    }
    v
}

/// Law of the cell depths for the block model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthDist {
    Uniform([f64; 2]),
}

impl DepthDist {
    fn sup(&self) -> f64 {
        match self {
            DepthDist::Uniform([_, b]) => *b,
        }
    }

    fn sample(&self, rng: &mut SplitMix64) -> f64 {
        match self {
            DepthDist::Uniform([a, b]) => {
                if a == b {
                    *a
                } else {
                    rng.random_range(*a..*b)
                }
            }
        }
    }
}

/// Default number of cells (or periods) in a sampled window.
pub const DEFAULT_CELLS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum PotentialModel {
    Periodic(PeriodicProfile),
    /// The base profile translated by a phase drawn uniformly from `[0, 1)`.
    RandomPhase { base: PeriodicProfile, seed: u64 },
    /// Unit cells carrying independent bumps `-d B(y - i)`.
    BlockRandom { depth: DepthDist, seed: u64 },
}

impl PotentialModel {
    pub fn mbar(&self) -> f64 {
        match self {
            PotentialModel::Periodic(p) | PotentialModel::RandomPhase { base: p, .. } => p.mbar(),
            PotentialModel::BlockRandom { depth, .. } => depth.sup(),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            PotentialModel::Periodic(_) => None,
            PotentialModel::RandomPhase { seed, .. } | PotentialModel::BlockRandom { seed, .. } => Some(*seed),
        }
    }

    pub fn is_periodic(&self) -> bool {
        !matches!(self, PotentialModel::BlockRandom { .. })
    }

    /// Same model with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            PotentialModel::Periodic(_) => self.clone(),
            PotentialModel::RandomPhase { base, .. } => PotentialModel::RandomPhase { base: base.clone(), seed },
            PotentialModel::BlockRandom { depth, .. } => PotentialModel::BlockRandom { depth: *depth, seed },
        }
    }

    /// One realization. Block fields get cells `first_cell .. first_cell + cells`.
    pub fn realize(&self, first_cell: i64, cells: usize) -> Field {
        match self {
            PotentialModel::Periodic(p) => Field::Periodic { profile: p.clone(), phase: 0.0 },
            PotentialModel::RandomPhase { base, seed } => {
                let mut rng = SplitMix64::seed_from_u64(*seed);
                let phase: f64 = rng.random();
                Field::Periodic { profile: base.clone(), phase }
            }
            PotentialModel::BlockRandom { depth, seed } => {
                // depths are a function of (seed, cell index) so that
                // overlapping windows agree
                let depths = (0..cells)
                    .map(|k| {
                        let idx = first_cell + k as i64;
                        let mut rng = SplitMix64::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                        depth.sample(&mut rng)
                    })
                    .collect();
                Field::Blocks { depths, origin: first_cell }
            }
        }
    }

    /// Window used for corrector computations: one cyclic period, or a path
    /// of `cells` unit cells starting at 0.
    pub fn window(&self, cells: usize) -> Window {
        match self {
            PotentialModel::BlockRandom { .. } => {
                Window { field: self.realize(0, cells), lo: 0.0, hi: cells as f64, cyclic: false }
            }
            _ => Window { field: self.realize(0, 1), lo: 0.0, hi: 1.0, cyclic: true },
        }
    }

    /// `E[g(V(0))]`. `levels` lists values of `V` where `g` is not smooth.
    ///
    /// Periodic models integrate one period of the realized field; the
    /// block model averages per-cell integrals over `DEFAULT_CELLS` cells.
    pub fn expectation(&self, levels: &[f64], g: impl Fn(f64) -> f64) -> Estimate {
        self.expectation_over(DEFAULT_CELLS, levels, g)
    }

    pub fn expectation_over(&self, cells: usize, levels: &[f64], g: impl Fn(f64) -> f64) -> Estimate {
        match self {
            PotentialModel::BlockRandom { .. } => {
                let field = self.realize(0, cells);
                let per_cell: Vec<f64> =
                    (0..cells).map(|i| field.integrate(i as f64, i as f64 + 1.0, levels, &g)).collect();
                Estimate::from_samples(&per_cell)
            }
            _ => {
                let field = self.realize(0, 1);
                Estimate { mean: field.integrate(0.0, 1.0, levels, &g), stderr: 0.0 }
            }
        }
    }

    pub fn spec(&self) -> PotentialSpec {
        match self {
            PotentialModel::Periodic(p) => p.spec().into(),
            PotentialModel::RandomPhase { base, seed } => PotentialSpec::RandomPhase { base: base.spec(), seed: *seed },
            PotentialModel::BlockRandom { depth, seed } => PotentialSpec::BlockRandom { depth_dist: *depth, seed: *seed },
        }
    }
}

/// A mean with its standard error (zero for exact quadrature).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Estimate { mean, stderr: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Estimate { mean, stderr: (var / n).sqrt() }
    }
}

/// JSON form of a potential model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Zero,
    Cosine { mbar: f64 },
    Fourier { cos: Vec<f64>, sin: Vec<f64>, mbar: f64 },
    RandomPhase { base: PeriodicSpec, seed: u64 },
    BlockRandom { depth_dist: DepthDist, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum PeriodicSpec {
    Zero,
    Cosine { mbar: f64 },
    Fourier { cos: Vec<f64>, sin: Vec<f64>, mbar: f64 },
}

impl From<PeriodicSpec> for PotentialSpec {
    fn from(p: PeriodicSpec) -> Self {
        match p {
            PeriodicSpec::Zero => PotentialSpec::Zero,
            PeriodicSpec::Cosine { mbar } => PotentialSpec::Cosine { mbar },
            PeriodicSpec::Fourier { cos, sin, mbar } => PotentialSpec::Fourier { cos, sin, mbar },
        }
    }
}

impl PeriodicSpec {
    pub fn build(&self) -> Result<PeriodicProfile> {
        match self {
            PeriodicSpec::Zero => Ok(PeriodicProfile::zero()),
            PeriodicSpec::Cosine { mbar } => PeriodicProfile::cosine(*mbar),
            PeriodicSpec::Fourier { cos, sin, mbar } => PeriodicProfile::fourier(cos.clone(), sin.clone(), *mbar),
        }
    }
}

impl PotentialSpec {
    pub fn build(&self) -> Result<PotentialModel> {
        Ok(match self {
            PotentialSpec::Zero => PotentialModel::Periodic(PeriodicProfile::zero()),
            PotentialSpec::Cosine { mbar } => PotentialModel::Periodic(PeriodicProfile::cosine(*mbar)?),
            PotentialSpec::Fourier { cos, sin, mbar } => {
                PotentialModel::Periodic(PeriodicProfile::fourier(cos.clone(), sin.clone(), *mbar)?)
            }
            PotentialSpec::RandomPhase { base, seed } => PotentialModel::RandomPhase { base: base.build()?, seed: *seed },
            PotentialSpec::BlockRandom { depth_dist, seed } => {
                let DepthDist::Uniform([a, b]) = *depth_dist;
                if !(a > 0.0 && b >= a && b.is_finite()) {
                    return Err(Error::InvalidPotential(format!("depth range [{a}, {b}] must satisfy 0 < a <= b")));
                }
                PotentialModel::BlockRandom { depth: *depth_dist, seed: *seed }
            }
        })
    }
}

fn bump(t: f64) -> f64 {
    let u = 2.0 * t - 1.0;
    let r = 1.0 - u * u;
    if r <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / r).exp()
    }
}

fn bump_derivative(t: f64) -> f64 {
    let u = 2.0 * t - 1.0;
    let r = 1.0 - u * u;
    if r <= 0.0 {
        0.0
    } else {
        bump(t) * (-4.0 * u / (r * r))
    }
}

/// A realized potential.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Field {
    /// `profile(y + phase)`.
    Periodic { profile: PeriodicProfile, phase: f64 },
    /// Cell `origin + k` carries the bump `-depths[k] B(y - origin - k)`;
    /// outside the listed cells the field vanishes.
    Blocks { depths: Vec<f64>, origin: i64 },
    /// Linear interpolation of grid values starting at `y0`, constant
    /// beyond the ends.
    Sampled { y0: f64, h: f64, values: Vec<f64> },
}

impl Field {
    pub fn value(&self, y: f64) -> f64 {
        match self {
            Field::Periodic { profile, phase } => profile.value(y + phase),
            Field::Blocks { depths, origin } => {
                let cell = y.floor();
                let k = cell as i64 - origin;
                if k < 0 || k as usize >= depths.len() {
                    0.0
                } else {
                    -depths[k as usize] * bump(y - cell)
                }
            }
            Field::Sampled { y0, h, values } => {
                let x = (y - y0) / h;
                if x <= 0.0 {
                    return values[0];
                }
                let i = x.floor() as usize;
                if i + 1 >= values.len() {
                    return *values.last().unwrap();
                }
                let t = x - i as f64;
                values[i] * (1.0 - t) + values[i + 1] * t
            }
        }
    }

    pub fn derivative(&self, y: f64) -> f64 {
        match self {
            Field::Periodic { profile, phase } => profile.derivative(y + phase),
            Field::Blocks { depths, origin } => {
                let cell = y.floor();
                let k = cell as i64 - origin;
                if k < 0 || k as usize >= depths.len() {
                    0.0
                } else {
                    -depths[k as usize] * bump_derivative(y - cell)
                }
            }
            Field::Sampled { y0, h, values } => {
                let x = (y - y0) / h;
                let i = x.floor();
                if i < 0.0 || i as usize + 1 >= values.len() {
                    0.0
                } else {
                    (values[i as usize + 1] - values[i as usize]) / h
                }
            }
        }
    }

    /// `y -> V(-y)`.
    pub fn reflected(&self) -> Field {
        match self {
            Field::Periodic { profile, phase } => Field::Periodic { profile: profile.reflected(), phase: -phase },
            Field::Blocks { depths, origin } => {
                Field::Blocks { depths: depths.iter().rev().copied().collect(), origin: -origin - depths.len() as i64 }
            }
            Field::Sampled { y0, h, values } => Field::Sampled {
                y0: -(y0 + h * (values.len() - 1) as f64),
                h: *h,
                values: values.iter().rev().copied().collect(),
            },
        }
    }

    /// Oscillation of the realization's law (largest possible depth).
    pub fn mbar(&self) -> f64 {
        match self {
            Field::Periodic { profile, .. } => profile.mbar(),
            Field::Blocks { depths, .. } => depths.iter().copied().fold(0.0, f64::max),
            Field::Sampled { values, .. } => -values.iter().copied().fold(0.0, f64::min),
        }
    }

    /// Local extrema strictly inside `(lo, hi)` as `(y, is_max)`.
    pub fn critical_points(&self, lo: f64, hi: f64) -> Vec<(f64, bool)> {
        let mut out = Vec::new();
        match self {
            Field::Periodic { profile, phase } => {
                let start = (lo + phase).floor() as i64;
                let end = (hi + phase).ceil() as i64;
                for k in start..=end {
                    for &(c, is_max) in &profile.critical {
                        let y = k as f64 + c - phase;
                        if y > lo && y < hi {
                            out.push((y, is_max));
                        }
                    }
                }
            }
            Field::Blocks { depths, origin } => {
                let start = lo.floor() as i64;
                let end = hi.ceil() as i64;
                for cell in start..=end {
                    let k = cell - origin;
                    let has_bump = k >= 0 && (k as usize) < depths.len();
                    let y = cell as f64;
                    if y > lo && y < hi {
                        let prev = k - 1 >= 0 && ((k - 1) as usize) < depths.len();
                        if has_bump || prev {
                            out.push((y, true));
                        }
                    }
                    let c = y + 0.5;
                    if has_bump && c > lo && c < hi {
                        out.push((c, false));
                    }
                }
            }
            Field::Sampled { y0, h, values } => {
                let n = values.len();
                let mut prev = 0.0;
                for i in 0..n - 1 {
                    let d = values[i + 1] - values[i];
                    if d == 0.0 {
                        continue;
                    }
                    if prev != 0.0 && (d > 0.0) != (prev > 0.0) {
                        let y = y0 + h * i as f64;
                        if y > lo && y < hi {
                            out.push((y, prev > 0.0));
                        }
                    }
                    prev = d;
                }
            }
        }
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        out
    }

    /// Breakpoints splitting `[lo, hi]` into pieces where the field is
    /// monotone, including both ends.
    pub fn monotone_breaks(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut v = vec![lo];
        if let Field::Sampled { y0, h, values } = self {
            // linear interpolation: every grid point is a potential kink
            let a = ((lo - y0) / h).ceil().max(0.0) as usize;
            let b = (((hi - y0) / h).floor().max(0.0) as usize).min(values.len() - 1);
            for i in a..=b {
                let y = y0 + h * i as f64;
                if y > lo && y < hi {
                    v.push(y);
                }
            }
        } else {
            v.extend(self.critical_points(lo, hi).into_iter().map(|c| c.0));
        }
        v.push(hi);
        v
    }

    /// Points in `[lo, hi)` where `V - c` changes sign. Tangential touches
    /// are not reported.
    pub fn crossings(&self, lo: f64, hi: f64, c: f64) -> Vec<f64> {
        let breaks = self.monotone_breaks(lo, hi);
        let mut out = Vec::new();
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (va, vb) = (self.value(a) - c, self.value(b) - c);
            if va == 0.0 && a == lo && !self.is_extremum(a) {
                out.push(a);
            }
            if va != 0.0 && vb != 0.0 && va.signum() != vb.signum() {
                out.push(self.root(a, b, c));
            } else if vb == 0.0 && b < hi && !self.is_extremum(b) {
                out.push(b);
            }
        }
        out.dedup();
        out
    }

    fn is_extremum(&self, y: f64) -> bool {
        let d = 1e-7;
        let (l, r) = (self.value(y - d) - self.value(y), self.value(y + d) - self.value(y));
        l.signum() == r.signum()
    }

    fn root(&self, a: f64, b: f64, c: f64) -> f64 {
        if let Field::Sampled { .. } = self {
            let (va, vb) = (self.value(a), self.value(b));
            return a + (c - va) / (vb - va) * (b - a);
        }
        bisect(|y| self.value(y) - c, a, b, ROOT_TOL * b.abs().max(1.0)).unwrap_or(0.5 * (a + b))
    }

    /// `int_lo^hi g(V(y)) dy`, splitting at monotone pieces and at the
    /// crossings of every value in `levels`.
    pub fn integrate(&self, lo: f64, hi: f64, levels: &[f64], g: impl Fn(f64) -> f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let mut cuts = self.monotone_breaks(lo, hi);
        for &c in levels {
            cuts.extend(self.crossings(lo, hi, c));
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        let nodes = match self {
            Field::Periodic { .. } => 256,
            Field::Blocks { .. } => 64,
            Field::Sampled { .. } => 16,
        };
        cuts.windows(2).map(|w| gauss_legendre_n(nodes, w[0], w[1], |y| g(self.value(y)))).sum()
    }
}

/// A stretch of a realized field. Cyclic windows are one period long and
/// wrap around.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Window {
    pub field: Field,
    pub lo: f64,
    pub hi: f64,
    pub cyclic: bool,
}

impl Window {
    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn value(&self, y: f64) -> f64 {
        self.field.value(y)
    }

    /// The mirror image `y -> V(-y)` on `[-hi, -lo]`.
    pub fn reflected(&self) -> Window {
        Window { field: self.field.reflected(), lo: -self.hi, hi: -self.lo, cyclic: self.cyclic }
    }
}

/// Uniform grid samples of a realized potential.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PotentialPath {
    pub lo: f64,
    pub h: f64,
    pub values: Vec<f64>,
    pub seed: Option<u64>,
    pub mbar: f64,
}

impl PotentialPath {
    pub fn hi(&self) -> f64 {
        self.lo + self.h * (self.values.len() - 1) as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn field(&self) -> Field {
        Field::Sampled { y0: self.lo, h: self.h, values: self.values.clone() }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("y,value\n");
        for (i, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{},{}\n", self.lo + self.h * i as f64, v));
        }
        s
    }

    /// Number of adjacent grid pairs with equal values.
    pub fn ties(&self) -> usize {
        self.values.windows(2).filter(|w| w[0] == w[1]).count()
    }
}

/// Samples `model` on `[lo, hi]` with step `h`.
///
/// Fails when the sampled range misses `[-mbar + range_tol, -range_tol]`.
pub fn sample_path(model: &PotentialModel, seed: u64, lo: f64, hi: f64, h: f64, range_tol: f64) -> Result<PotentialPath> {
    if !(h > 0.0) || hi <= lo {
        return Err(Error::Precondition(format!("bad sampling window [{lo}, {hi}] with step {h}")));
    }
    let model = model.with_seed(seed);
    let first = lo.floor() as i64;
    let cells = (hi.ceil() as i64 - first).max(1) as usize;
    let field = model.realize(first, cells);
    let n = ((hi - lo) / h).round() as usize;
    let values: Vec<f64> = (0..=n).map(|i| field.value(lo + h * i as f64)).collect();
    let path = PotentialPath { lo, h, values, seed: model.seed(), mbar: model.mbar() };
    let (min, max) = (path.min(), path.max());
    let mbar = model.mbar();
    if min > -mbar + range_tol || max < -range_tol {
        return Err(Error::UnderResolved { min, max, mbar });
    }
    Ok(path)
}

/// Result of [`mollify`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mollified {
    pub path: PotentialPath,
    /// Constant subtracted after convolution to restore `max = 0`.
    pub shift: f64,
    /// `max |V_eps - V|` on the grid.
    pub sup_change: f64,
}

/// Gaussian convolution with standard deviation `width`, truncated at five
/// widths, ends extended by their boundary values, then shifted so that the
/// maximum is zero again.
pub fn mollify(path: &PotentialPath, width: f64) -> Result<Mollified> {
    if !(width > 0.0) {
        return Err(Error::Precondition(format!("mollification width must be positive, got {width}")));
    }
    let r = ((5.0 * width) / path.h).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|k| {
            let x = k as f64 * path.h / width;
            (-0.5 * x * x).exp()
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    let n = path.values.len() as isize;
    let mut out = Vec::with_capacity(path.values.len());
    for i in 0..n {
        let mut acc = 0.0;
        for (j, w) in kernel.iter().enumerate() {
            let idx = (i + j as isize - r).clamp(0, n - 1) as usize;
            acc += w * path.values[idx];
        }
        out.push(acc / total);
    }
    let top = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in &mut out {
        *v -= top;
    }
    let sup_change = out.iter().zip(&path.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mbar = -out.iter().copied().fold(0.0, f64::min);
    Ok(Mollified { path: PotentialPath { values: out, mbar, ..path.clone() }, shift: top, sup_change })
}

/// Sign changes of `V - c` along the path, located on the linear
/// interpolant. Grid points touching `c` without a sign change are skipped.
pub fn level_crossings(path: &PotentialPath, c: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let v = &path.values;
    let mut i = 0;
    while i + 1 < v.len() {
        let a = v[i] - c;
        let b = v[i + 1] - c;
        if a != 0.0 && b != 0.0 && a.signum() != b.signum() {
            out.push(path.lo + path.h * (i as f64 + a / (a - b)));
        } else if b == 0.0 && a != 0.0 {
            // find where the run of exact hits ends
            let mut j = i + 1;
            while j + 1 < v.len() && v[j + 1] - c == 0.0 {
                j += 1;
            }
            if j + 1 < v.len() && (v[j + 1] - c).signum() != a.signum() {
                out.push(path.lo + path.h * (i + 1) as f64);
            }
            i = j;
            continue;
        }
        i += 1;
    }
    out
}

/// Checks that every level has well separated crossings; if not, mollifies
/// with width `10 h` and reports the width used.
pub fn regularize(path: &PotentialPath, levels: &[f64]) -> Result<(PotentialPath, Option<f64>)> {
    let min_gap = 10.0 * path.h;
    let separated = |p: &PotentialPath| {
        p.ties() == 0
            && levels.iter().all(|&c| level_crossings(p, c).windows(2).all(|w| w[1] - w[0] > min_gap))
    };
    if separated(path) {
        return Ok((path.clone(), None));
    }
    let width = 10.0 * path.h;
    Ok((mollify(path, width)?.path, Some(width)))
}
