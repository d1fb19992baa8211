//! Discounted cell problem `lambda v + H(p + v') + V(y) = 0` on a grid.
//!
//! The gradient term uses the Godunov numerical Hamiltonian, so the scheme
//! is monotone for any continuous `H`. Each sweep visits the nodes forward
//! then backward and solves the nodal equation exactly for the node value
//! (it is strictly increasing in that value). After each sweep the mean
//! residual is removed by a constant shift, which is exact because the
//! gradient term ignores constants. `-lambda v(0)` estimates `Hbar(p)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::PiecewiseMonotoneHamiltonian as Hamiltonian;
use crate::potential::{PotentialModel, Window};

/// Discounts used by default, from largest to smallest.
pub const DEFAULT_LAMBDAS: [f64; 3] = [1e-2, 3e-3, 1e-3];

/// Grid step used for periodic models.
pub const PERIODIC_STEP: f64 = 1.0 / 512.0;

/// Grid step used for random models: sixteen nodes per unit cell.
pub const RANDOM_STEP: f64 = 1.0 / 16.0;

/// Residual target for each discounted solve.
pub const DEFAULT_TOL: f64 = 1e-8;

const MAX_SWEEPS: usize = 50_000;

/// Residual accepted when the sweeps stop making progress. Where the
/// corrector switches branches at a peak of `H` the iteration has a mode
/// that decays very slowly; the residual still bounds the error of
/// `lambda v` in sup norm, and it is carried into the error bar.
pub const STALL_TOL: f64 = 1e-4;

const STALL_WINDOW: usize = 2000;

fn stalled(history: &[f64]) -> bool {
    let n = history.len();
    n > STALL_WINDOW && history[n - 1] <= STALL_TOL && history[n - 1] > 0.5 * history[n - 1 - STALL_WINDOW]
}

#[derive(Clone, Debug, Serialize)]
pub struct CellSolution {
    pub p: f64,
    pub lambda: f64,
    pub lo: f64,
    pub step: f64,
    pub periodic: bool,
    pub values: Vec<f64>,
    /// Sup norm of the discrete residual at exit.
    pub residual: f64,
    pub sweeps: usize,
    /// Residual after every sweep.
    #[serde(skip)]
    pub history: Vec<f64>,
}

impl CellSolution {
    /// `v(y)` by linear interpolation.
    pub fn value_at(&self, y: f64) -> f64 {
        let n = self.values.len();
        let mut x = (y - self.lo) / self.step;
        if self.periodic {
            x = x.rem_euclid(n as f64);
        } else {
            x = x.clamp(0.0, (n - 1) as f64);
        }
        let i = (x.floor() as usize).min(n - 1);
        let t = x - i as f64;
        let j = if self.periodic { (i + 1) % n } else { (i + 1).min(n - 1) };
        self.values[i] * (1.0 - t) + self.values[j] * t
    }

    /// `-lambda v(0)`.
    pub fn estimate(&self) -> f64 {
        -self.lambda * self.value_at(0.0)
    }

    /// `lambda * sup |v|`.
    pub fn scaled_sup(&self) -> f64 {
        self.lambda * self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

struct Stencil<'a> {
    h: &'a Hamiltonian,
    p: f64,
    lambda: f64,
    step: f64,
    potential: Vec<f64>,
    periodic: bool,
}

impl Stencil<'_> {
    fn neighbours(&self, v: &[f64], i: usize) -> (f64, f64) {
        let n = v.len();
        if self.periodic {
            (v[(i + n - 1) % n], v[(i + 1) % n])
        } else {
            // zero-slope ghosts keep the end equations monotone
            let l = if i == 0 { v[0] } else { v[i - 1] };
            let r = if i + 1 == n { v[n - 1] } else { v[i + 1] };
            (l, r)
        }
    }

    fn nodal(&self, x: f64, l: f64, r: f64, vi: f64) -> f64 {
        let a = (x - l) / self.step;
        let b = (r - x) / self.step;
        self.lambda * x + self.h.godunov(self.p + a, self.p + b) + vi
    }

    fn residual(&self, v: &[f64], i: usize) -> f64 {
        let (l, r) = self.neighbours(v, i);
        self.nodal(v[i], l, r, self.potential[i])
    }

    /// Root of the nodal equation, which increases with slope at least
    /// `lambda`.
    fn solve_node(&self, v: &[f64], i: usize) -> f64 {
        let (l, r) = self.neighbours(v, i);
        let vi = self.potential[i];
        let f = |x: f64| self.nodal(x, l, r, vi);
        let x0 = v[i];
        let f0 = f(x0);
        if f0 == 0.0 {
            return x0;
        }
        let steep = self.lambda + 2.0 * self.h.lipschitz_bound() / self.step;
        let mut dx = -f0 / steep;
        let (mut a, mut fa, mut b, mut fb) = (x0, f0, x0 + dx, f(x0 + dx));
        while fb.signum() == f0.signum() && fb != 0.0 {
            a = b;
            fa = fb;
            dx *= 2.0;
            b = x0 + dx;
            fb = f(b);
        }
        if fb == 0.0 {
            return b;
        }
        // Illinois iteration on the bracket
        let mut side = 0;
        for _ in 0..100 {
            let c = (a * fb - b * fa) / (fb - fa);
            let fc = f(c);
            if fc == 0.0 || (b - a).abs() <= 1e-15 * c.abs().max(1.0) {
                return c;
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
        0.5 * (a + b)
    }
}

/// Solves the discounted problem on a window: periodic wrap for cyclic
/// windows, zero-slope ghost nodes at the ends of path windows.
pub fn solve_discounted(h: &Hamiltonian, window: &Window, p: f64, lambda: f64, step: f64, tol: f64) -> Result<CellSolution> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Precondition(format!("discount {lambda} outside (0, 1]")));
    }
    let len = window.length();
    let limit = if window.cyclic { len / 64.0 } else { len / 1000.0 };
    if !(step > 0.0 && step <= limit + 1e-15) {
        return Err(Error::Precondition(format!("grid step {step} above {limit}")));
    }
    let n = if window.cyclic { (len / step).round() as usize } else { (len / step).round() as usize + 1 };
    let step = if window.cyclic { len / n as f64 } else { len / (n - 1) as f64 };
    let potential: Vec<f64> = (0..n).map(|i| window.value(window.lo + step * i as f64)).collect();
    let st = Stencil { h, p, lambda, step, potential, periodic: window.cyclic };

    let mut v = vec![-h.evaluate(p) / lambda; n];
    let mut history: Vec<f64> = Vec::new();
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        for i in 0..n {
            v[i] = st.solve_node(&v, i);
        }
        for i in (0..n).rev() {
            v[i] = st.solve_node(&v, i);
        }
        sweeps += 1;
        let shift = (0..n).map(|i| st.residual(&v, i)).sum::<f64>() / (n as f64 * lambda);
        for x in v.iter_mut() {
            *x -= shift;
        }
        residual = (0..n).map(|i| st.residual(&v, i).abs()).fold(0.0, f64::max);
        history.push(residual);
        if residual <= tol || stalled(&history) {
            break;
        }
    }
    let tol = if stalled(&history) { STALL_TOL } else { tol };
    if residual > tol {
        return Err(Error::NotConverged { iterations: sweeps, residual });
    }
    Ok(CellSolution { p, lambda, lo: window.lo, step, periodic: window.cyclic, values: v, residual, sweeps, history })
}

/// `(C/R) sqrt(|y|^2 + 1) + C^2 / R`: the effect of solving on a ball of
/// radius `R/lambda` instead of the whole line, on `lambda * v` at `y`.
pub fn truncation_error_bound(c: f64, r: f64, y: f64) -> f64 {
    c / r * (y * y + 1.0).sqrt() + c * c / r
}

#[derive(Clone, Debug, Serialize)]
pub struct LambdaRun {
    pub lambda: f64,
    pub estimate: f64,
    pub residual: f64,
    pub sweeps: usize,
    pub step: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HbarEstimate {
    pub p: f64,
    /// Linear extrapolation in `lambda` through the two smallest discounts.
    pub value: f64,
    /// Spread of the last two discounts plus truncation plus the largest
    /// exit residual.
    pub error_bar: f64,
    /// Truncation part of the error bar (zero for periodic models).
    pub truncation: f64,
    pub runs: Vec<LambdaRun>,
}

/// Window used for one discount: a period for periodic models, otherwise
/// `[-R/lambda, R/lambda]` with `R = 10 (H(p) + mbar) / max(1, |p|)`.
pub fn cell_window(h: &Hamiltonian, model: &PotentialModel, p: f64, lambda: f64) -> (Arc<Window>, f64) {
    if model.is_periodic() {
        return (Arc::new(model.window(1)), 0.0);
    }
    let c = h.evaluate(p) + model.mbar();
    let r = 10.0 * c / p.abs().max(1.0);
    let radius = (r / lambda).ceil().max(1.0);
    let first = -(radius as i64);
    let cells = 2 * radius as usize;
    let field = model.realize(first, cells);
    let w = Window { field, lo: -radius, hi: radius, cyclic: false };
    (Arc::new(w), truncation_error_bound(c.max(h.lipschitz_bound()), r, 0.0))
}

/// Estimate of `Hbar(p)` from a decreasing sequence of discounts.
/// `step` defaults to [`PERIODIC_STEP`] for periodic models and to
/// [`RANDOM_STEP`] otherwise.
pub fn estimate_hbar(h: &Hamiltonian, model: &PotentialModel, p: f64, lambdas: &[f64], step: Option<f64>) -> Result<HbarEstimate> {
    if lambdas.is_empty() || lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition("discounts must be strictly decreasing".into()));
    }
    if lambdas.iter().any(|&l| l < 1e-4) {
        return Err(Error::Precondition("discounts below 1e-4 are not supported".into()));
    }
    let mut runs = Vec::new();
    let mut truncation: f64 = 0.0;
    let mut residual: f64 = 0.0;
    for &lambda in lambdas {
        let (window, trunc) = cell_window(h, model, p, lambda);
        let dx = step.unwrap_or(if window.cyclic { PERIODIC_STEP } else { RANDOM_STEP });
        let sol = solve_discounted(h, &window, p, lambda, dx, DEFAULT_TOL)?;
        truncation = trunc;
        residual = residual.max(sol.residual);
        runs.push(LambdaRun { lambda, estimate: sol.estimate(), residual: sol.residual, sweeps: sol.sweeps, step: sol.step });
    }
    let n = runs.len();
    let (value, spread) = if n >= 2 {
        let (a, b) = (&runs[n - 2], &runs[n - 1]);
        let slope = (a.estimate - b.estimate) / (a.lambda - b.lambda);
        (b.estimate - slope * b.lambda, (a.estimate - b.estimate).abs())
    } else {
        (runs[0].estimate, 0.0)
    };
    Ok(HbarEstimate { p, value, error_bar: spread + truncation + residual, truncation, runs })
}

/// [`estimate_hbar`] at several momenta in parallel.
pub fn estimate_many(h: &Hamiltonian, model: &PotentialModel, ps: &[f64], lambdas: &[f64], step: Option<f64>) -> Result<Vec<HbarEstimate>> {
    ps.par_iter().map(|&p| estimate_hbar(h, model, p, lambdas, step)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PeriodicProfile;

    #[test]
    fn zero_potential_is_constant() {
        let h = Hamiltonian::piecewise_linear(&[(0.0, 0.0), (1.0, 3.0), (2.0, 1.0)], -3.0, 1.0).unwrap();
        let w = PotentialModel::Periodic(PeriodicProfile::zero()).window(1);
        let s = solve_discounted(&h, &w, 0.7, 0.01, 1.0 / 64.0, 1e-10).unwrap();
        assert!(s.values.iter().all(|&v| (v + h.evaluate(0.7) / 0.01).abs() < 1e-7));
    }

    #[test]
    fn truncation_examples() {
        assert!((truncation_error_bound(4.0, 100.0, 0.0) - 0.2).abs() < 1e-15);
        assert!(truncation_error_bound(4.0, 1e6, 0.0) < truncation_error_bound(4.0, 1e3, 0.0));
    }
}
