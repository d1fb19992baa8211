//! Quadrature, root bracketing and monotone interpolation.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

/// Number of Gauss-Legendre nodes used per monotone piece.
pub const GAUSS_NODES: usize = 256;

struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn legendre_rule(n: usize) -> GaussRule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    GaussRule { nodes, weights }
}

fn rule(n: usize) -> &'static GaussRule {
    static R16: OnceLock<GaussRule> = OnceLock::new();
    static R64: OnceLock<GaussRule> = OnceLock::new();
    static R256: OnceLock<GaussRule> = OnceLock::new();
    match n {
        16 => R16.get_or_init(|| legendre_rule(16)),
        64 => R64.get_or_init(|| legendre_rule(64)),
        _ => R256.get_or_init(|| legendre_rule(GAUSS_NODES)),
    }
}

/// Integrates `f` over `[a, b]` with the 256-point Gauss-Legendre rule.
pub fn gauss_legendre(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    gauss_legendre_n(GAUSS_NODES, a, b, f)
}

/// Gauss-Legendre with 16, 64 or 256 nodes (other counts use 256).
pub fn gauss_legendre_n(n: usize, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let r = rule(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in r.nodes.iter().zip(&r.weights) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Finds a root of `f` in `[lo, hi]` by bisection, assuming a sign change.
///
/// Returns `None` when the endpoints have the same strict sign.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Solves `g(x) = target` for nondecreasing `g` on `[lo, hi]`.
///
/// The result is clamped to the bracket when the target lies outside
/// `[g(lo), g(hi)]`.
pub fn solve_increasing(g: impl Fn(f64) -> f64, target: f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    if g(a) >= target {
        return a;
    }
    if g(b) <= target {
        return b;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if b - a <= tol || mid <= a || mid >= b {
            break;
        }
        if g(mid) < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Shape-preserving piecewise cubic Hermite interpolant of strictly
/// monotone data (harmonic-mean knot slopes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneTable {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl MonotoneTable {
    /// Builds the interpolant; `xs` must be strictly increasing and `ys`
    /// strictly monotone. Returns `None` otherwise.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Option<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return None;
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return None;
        }
        let up = ys[1] > ys[0];
        if ys.windows(2).any(|w| (w[1] > w[0]) != up || w[1] == w[0]) {
            return None;
        }
        let hs: Vec<f64> = (0..n - 1).map(|i| xs[i + 1] - xs[i]).collect();
        let secant: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / hs[i]).collect();
        let mut ds = vec![0.0; n];
        if n == 2 {
            ds[0] = secant[0];
            ds[1] = secant[0];
        } else {
            for i in 1..n - 1 {
                let w1 = 2.0 * hs[i] + hs[i - 1];
                let w2 = hs[i] + 2.0 * hs[i - 1];
                ds[i] = (w1 + w2) / (w1 / secant[i - 1] + w2 / secant[i]);
            }
            ds[0] = end_slope(hs[0], hs[1], secant[0], secant[1]);
            ds[n - 1] = end_slope(hs[n - 2], hs[n - 3], secant[n - 2], secant[n - 3]);
        }
        Some(MonotoneTable { xs, ys, ds })
    }

    pub fn lo(&self) -> f64 {
        self.xs[0]
    }

    pub fn hi(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    pub fn increasing(&self) -> bool {
        self.ys[1] > self.ys[0]
    }

    pub fn first_value(&self) -> f64 {
        self.ys[0]
    }

    pub fn last_value(&self) -> f64 {
        *self.ys.last().unwrap()
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    fn cell(&self, x: f64) -> usize {
        match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.xs.len() - 2),
        }
    }

    /// Evaluates the interpolant, clamping `x` to the table range.
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(self.lo(), self.hi());
        let i = self.cell(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.ds[i] + h01 * self.ys[i + 1] + h11 * h * self.ds[i + 1]
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let x = x.clamp(self.lo(), self.hi());
        let i = self.cell(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        let d00 = (6.0 * t2 - 6.0 * t) / h;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = (-6.0 * t2 + 6.0 * t) / h;
        let d11 = 3.0 * t2 - 2.0 * t;
        d00 * self.ys[i] + d10 * self.ds[i] + d01 * self.ys[i + 1] + d11 * self.ds[i + 1]
    }

    /// Bound on `|f'|`, from the knot slopes and the cubic's interior extrema.
    pub fn max_abs_derivative(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.xs.len() - 1 {
            for k in 0..=16 {
                let x = self.xs[i] + (self.xs[i + 1] - self.xs[i]) * k as f64 / 16.0;
                m = m.max(self.derivative(x).abs());
            }
        }
        m
    }

    /// Inverts the interpolant to absolute momentum tolerance `tol`.
    pub fn invert(&self, y: f64, tol: f64) -> f64 {
        if self.increasing() {
            solve_increasing(|x| self.eval(x), y, self.lo(), self.hi(), tol)
        } else {
            solve_increasing(|x| -self.eval(x), -y, self.lo(), self.hi(), tol)
        }
    }

    /// Table for `q -> f(q + shift) - offset`.
    pub fn shifted(&self, shift: f64, offset: f64) -> Self {
        MonotoneTable {
            xs: self.xs.iter().map(|x| x - shift).collect(),
            ys: self.ys.iter().map(|y| y - offset).collect(),
            ds: self.ds.clone(),
        }
    }

    /// Table for `q -> f(-q)`.
    pub fn reflected(&self) -> Self {
        MonotoneTable {
            xs: self.xs.iter().rev().map(|x| -x).collect(),
            ys: self.ys.iter().rev().copied().collect(),
            ds: self.ds.iter().rev().map(|d| -d).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_polynomials_and_cosine() {
        let v = gauss_legendre(0.0, 1.0, |x| x.powi(7));
        assert!((v - 0.125).abs() < 1e-15);
        let c = gauss_legendre(0.0, 1.0, |y| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * y).cos()));
        assert!((c - 0.5).abs() < 1e-14);
        let s = gauss_legendre_n(16, -1.0, 2.0, |x| x * x);
        assert!((s - 3.0).abs() < 1e-14);
    }

    #[test]
    fn bisection_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        assert!(bisect(|x| x * x + 1.0, 0.0, 1.0, 1e-12).is_none());
    }

    #[test]
    fn monotone_table_preserves_order_and_inverts() {
        let xs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x * x + x).collect();
        let t = MonotoneTable::new(xs, ys).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=1000 {
            let v = t.eval(k as f64 / 1000.0);
            assert!(v >= prev);
            prev = v;
        }
        let x = t.invert(1.0, 1e-13);
        assert!((t.eval(x) - 1.0).abs() < 1e-11);
        let r = t.reflected();
        assert!((r.eval(-0.35) - t.eval(0.35)).abs() < 1e-14);
    }

    #[test]
    fn table_rejects_nonmonotone_data() {
        assert!(MonotoneTable::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.5]).is_none());
        assert!(MonotoneTable::new(vec![0.0, 0.0], vec![0.0, 1.0]).is_none());
    }
}
