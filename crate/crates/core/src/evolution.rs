//! Time marching for `u_t + H(u_x) + V(x/eps) = 0` and `u_t + Hbar(u_x) = 0`.
//!
//! Both use the same explicit scheme: forward Euler in time and the
//! Godunov numerical Hamiltonian in space. The grid is padded by the
//! numerical domain of dependence so values on the window of interest do
//! not see the boundary at all.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective::EffectiveCurve;
use crate::error::{Error, Result};
use crate::hamiltonian::PiecewiseMonotoneHamiltonian as Hamiltonian;
use crate::potential::{Field, PotentialModel};

/// Courant number `dt * Lip / h`.
pub const CFL: f64 = 0.45;

/// Momentum resolution of the tabulated effective flux.
pub const TABLE_STEP: f64 = 1e-3;

/// Grid step of homogenized runs.
pub const HOMOGENIZED_STEP: f64 = 1.0 / 256.0;

/// Initial data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `max(0, 1 - |x|)`.
    Cone,
    /// `amplitude * sin(2 pi x / wavelength)`.
    Sinusoid { amplitude: f64, wavelength: f64 },
    /// `slope * x + offset`.
    Plane { slope: f64, offset: f64 },
}

impl InitialData {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            InitialData::Cone => (1.0 - x.abs()).max(0.0),
            InitialData::Sinusoid { amplitude, wavelength } => amplitude * (2.0 * std::f64::consts::PI * x / wavelength).sin(),
            InitialData::Plane { slope, offset } => slope * x + offset,
        }
    }

    /// Range of slopes of the data.
    pub fn slope_range(&self) -> (f64, f64) {
        match *self {
            InitialData::Cone => (-1.0, 1.0),
            InitialData::Sinusoid { amplitude, wavelength } => {
                let s = (2.0 * std::f64::consts::PI * amplitude / wavelength).abs();
                (-s, s)
            }
            InitialData::Plane { slope, .. } => (slope, slope),
        }
    }
}

/// Space-time window of a run: `[-half_width, half_width] x [0, horizon]`,
/// with `snapshots + 1` equally spaced output times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunWindow {
    pub half_width: f64,
    pub horizon: f64,
    pub snapshots: usize,
}

impl RunWindow {
    pub fn unit() -> Self {
        RunWindow { half_width: 1.0, horizon: 1.0, snapshots: 20 }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.snapshots).map(|j| self.horizon * j as f64 / self.snapshots as f64).collect()
    }
}

/// Piecewise-linear table of `Hbar` used as a flux.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FluxTable {
    pub lo: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl FluxTable {
    /// Samples `curve` on `[lo, hi]` every `step`.
    pub fn from_curve(curve: &EffectiveCurve, lo: f64, hi: f64, step: f64) -> Result<Self> {
        let n = ((hi - lo) / step).ceil() as usize + 1;
        let ps: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
        Ok(FluxTable { lo, step, values: curve.evaluate_many(&ps)? })
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.step * (self.values.len() - 1) as f64
    }

    pub fn eval(&self, q: f64) -> f64 {
        let n = self.values.len();
        let x = (q - self.lo) / self.step;
        let i = (x.floor().max(0.0) as usize).min(n - 2);
        let t = x - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    pub fn lipschitz(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs() / self.step).fold(0.0, f64::max)
    }

    fn knots_between(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        let n = self.values.len();
        let i = (((a - self.lo) / self.step).floor() + 1.0).max(0.0) as usize;
        let j = (((b - self.lo) / self.step).ceil() - 1.0).max(-1.0);
        let j = if j < 0.0 { 0 } else { (j as usize + 1).min(n) };
        self.values[i.min(j)..j].iter().copied()
    }

    pub fn godunov(&self, a: f64, b: f64) -> f64 {
        if a <= b {
            self.knots_between(a, b).fold(self.eval(a).min(self.eval(b)), f64::min)
        } else {
            self.knots_between(b, a).fold(self.eval(a).max(self.eval(b)), f64::max)
        }
    }
}

/// The flux of a run.
pub enum Flux<'a> {
    /// `H` plus the potential sampled at `x / eps`.
    Oscillatory { h: &'a Hamiltonian, field: &'a Field, eps: f64 },
    Homogenized { table: &'a FluxTable },
}

impl Flux<'_> {
    fn lipschitz(&self) -> f64 {
        match self {
            Flux::Oscillatory { h, .. } => h.lipschitz_bound(),
            Flux::Homogenized { table } => table.lipschitz().max(1e-12),
        }
    }

    fn numerical(&self, a: f64, b: f64) -> f64 {
        match self {
            Flux::Oscillatory { h, .. } => h.godunov(a, b),
            Flux::Homogenized { table } => table.godunov(a, b),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvolutionSolution {
    /// `None` for the homogenized problem.
    pub eps: Option<f64>,
    pub step: f64,
    pub dt: f64,
    pub steps: usize,
    /// Window node `i` sits at `(first + i) * step`.
    pub first: i64,
    pub window: RunWindow,
    pub pad: f64,
    pub times: Vec<f64>,
    /// Values on the window nodes at each output time.
    pub snapshots: Vec<Vec<f64>>,
}

impl EvolutionSolution {
    pub fn x(&self, i: usize) -> f64 {
        (self.first + i as i64) as f64 * self.step
    }

    /// `u(x, times[j])` by linear interpolation, clamped to the window.
    pub fn value(&self, j: usize, x: f64) -> f64 {
        let u = &self.snapshots[j];
        let s = (x / self.step - self.first as f64).clamp(0.0, (u.len() - 1) as f64);
        let i = (s.floor() as usize).min(u.len() - 2);
        let t = s - i as f64;
        u[i] * (1.0 - t) + u[i + 1] * t
    }

    /// `(x, u)` pairs at output time `j`.
    pub fn window_values(&self, j: usize) -> Vec<(f64, f64)> {
        self.snapshots[j].iter().enumerate().map(|(i, &u)| (self.x(i), u)).collect()
    }

    /// Largest `|u|` over all output times.
    pub fn sup_norm(&self) -> f64 {
        self.snapshots.iter().flatten().fold(0.0, |m, u| m.max(u.abs()))
    }

    /// `t,x,u` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,x,u\n");
        for (j, &t) in self.times.iter().enumerate() {
            for (x, u) in self.window_values(j) {
                s.push_str(&format!("{t},{x},{u}\n"));
            }
        }
        s
    }
}

/// Time steps taken to reach every output time with steps of at most `dt`.
fn step_schedule(times: &[f64], dt: f64) -> Vec<(f64, bool)> {
    let mut out = Vec::new();
    let mut t = 0.0;
    for &target in &times[1..] {
        while t < target - 1e-14 {
            let tau = dt.min(target - t);
            t += tau;
            out.push((tau, false));
        }
        t = target;
        if let Some(last) = out.last_mut() {
            last.1 = true;
        }
    }
    out
}

/// Marches the scheme. The grid extends `pad_factor` times the numerical
/// domain of dependence past the window (1 is enough for exactness).
pub fn march(flux: &Flux, g: &InitialData, window: RunWindow, step: f64, pad_factor: f64) -> Result<EvolutionSolution> {
    march_with(flux, |x| g.value(x), window, step, pad_factor)
}

/// [`march`] for arbitrary initial data.
pub fn march_with(flux: &Flux, g: impl Fn(f64) -> f64, window: RunWindow, step: f64, pad_factor: f64) -> Result<EvolutionSolution> {
    if !(step > 0.0) || window.snapshots == 0 || !(window.horizon > 0.0) || !(window.half_width > 0.0) {
        return Err(Error::Precondition("step, window, horizon and snapshot count must be positive".into()));
    }
    if pad_factor < 1.0 {
        return Err(Error::Precondition(format!("padding factor {pad_factor} below 1")));
    }
    let dt = CFL * step / flux.lipschitz();
    let times = window.times();
    let schedule = step_schedule(&times, dt);
    let steps = schedule.len();
    let reach = ((pad_factor * (steps + 1) as f64).ceil()) as i64;
    let k = (window.half_width / step + 1e-9).floor() as i64;
    let m = k + reach;
    let n = (2 * m + 1) as usize;
    let xs: Vec<f64> = (0..n).map(|i| (i as i64 - m) as f64 * step).collect();
    let potential: Vec<f64> = match flux {
        Flux::Oscillatory { field, eps, .. } => xs.iter().map(|&x| field.value(x / eps)).collect(),
        Flux::Homogenized { .. } => vec![0.0; n],
    };
    let mut u: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
    let mut next = u.clone();
    let (w0, w1) = ((m - k) as usize, (m + k) as usize);
    let mut snapshots = vec![u[w0..=w1].to_vec()];
    for (s, &(tau, output)) in schedule.iter().enumerate() {
        // nodes past the shrinking range can no longer reach the window
        let (lo, hi) = (s + 1, n - 2 - s);
        for i in lo..=hi {
            let a = (u[i] - u[i - 1]) / step;
            let b = (u[i + 1] - u[i]) / step;
            next[i] = u[i] - tau * (flux.numerical(a, b) + potential[i]);
        }
        std::mem::swap(&mut u, &mut next);
        if output {
            snapshots.push(u[w0..=w1].to_vec());
        }
    }
    if snapshots.len() != times.len() {
        return Err(Error::Internal("snapshot count mismatch".into()));
    }
    let eps = match flux {
        Flux::Oscillatory { eps, .. } => Some(*eps),
        Flux::Homogenized { .. } => None,
    };
    Ok(EvolutionSolution { eps, step, dt, steps, first: -k, window, pad: reach as f64 * step, times, snapshots })
}

/// Grid steps: `eps / osc_nodes_per_eps` for oscillatory runs and
/// `homogenized_step` for the limit problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRule {
    pub osc_nodes_per_eps: f64,
    pub homogenized_step: f64,
}

impl Default for GridRule {
    fn default() -> Self {
        GridRule { osc_nodes_per_eps: 32.0, homogenized_step: HOMOGENIZED_STEP }
    }
}

/// `u^eps` with grid step `eps / 32` unless given.
pub fn solve_oscillatory(h: &Hamiltonian, field: &Field, eps: f64, g: &InitialData, window: RunWindow, step: Option<f64>) -> Result<EvolutionSolution> {
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("eps = {eps} must be positive")));
    }
    let step = step.unwrap_or(eps / 32.0);
    if step > eps / 32.0 * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("grid step {step} above eps/32")));
    }
    march(&Flux::Oscillatory { h, field, eps }, g, window, step, 1.0)
}

/// Flux table covering the slopes of `g` with a margin.
pub fn flux_table_for(curve: &EffectiveCurve, g: &InitialData) -> Result<FluxTable> {
    let (lo, hi) = g.slope_range();
    FluxTable::from_curve(curve, lo - 0.5, hi + 0.5, TABLE_STEP)
}

pub fn solve_homogenized(table: &FluxTable, g: &InitialData, window: RunWindow, step: Option<f64>) -> Result<EvolutionSolution> {
    march(&Flux::Homogenized { table }, g, window, step.unwrap_or(HOMOGENIZED_STEP), 1.0)
}

/// Sup over the window and output times of `|a - b|`, on the finer of the
/// two grids.
pub fn sup_difference(a: &EvolutionSolution, b: &EvolutionSolution) -> Result<f64> {
    if a.times.len() != b.times.len() || a.times.iter().zip(&b.times).any(|(s, t)| (s - t).abs() > 1e-12) {
        return Err(Error::Precondition("runs have different output times".into()));
    }
    let fine = if a.step <= b.step { a } else { b };
    let other = if a.step <= b.step { b } else { a };
    let mut worst: f64 = 0.0;
    for j in 0..a.times.len() {
        for (x, u) in fine.window_values(j) {
            worst = worst.max((u - other.value(j, x)).abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub step: f64,
    pub error: f64,
    /// The same error with both grid steps halved.
    pub refined_error: f64,
    /// Change of the oscillatory solution when its grid step is halved.
    pub refinement_delta: f64,
    /// Scheme-error slack of the row: `|error - refined_error|`.
    pub slack: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub seed: Option<u64>,
    pub grid: GridRule,
    pub homogenized_delta: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Each error drops below the previous one by more than the sum of
    /// the two slacks.
    pub strictly_decreasing: bool,
    /// Each error is at most the previous one plus the sum of the slacks.
    pub non_increasing: bool,
}

/// Errors between oscillatory and homogenized runs for a decreasing list
/// of `eps`. Both problems use the same scheme, so most of its bias cancels
/// in the difference; the slack of a row is how much its error moves when
/// both grids are refined by two.
pub fn convergence_report(
    h: &Hamiltonian,
    model: &PotentialModel,
    curve: &EffectiveCurve,
    g: &InitialData,
    window: RunWindow,
    eps_list: &[f64],
    grid: GridRule,
) -> Result<ConvergenceReport> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition("eps list must be non-empty and strictly decreasing".into()));
    }
    if grid.osc_nodes_per_eps < 32.0 || !(grid.homogenized_step > 0.0) {
        return Err(Error::Precondition("grid rule needs at least 32 nodes per eps and a positive step".into()));
    }
    let table = flux_table_for(curve, g)?;
    let hom_step = grid.homogenized_step;
    let (hom, hom_fine) = rayon::join(
        || solve_homogenized(&table, g, window, Some(hom_step)),
        || solve_homogenized(&table, g, window, Some(hom_step / 2.0)),
    );
    let (hom, hom_fine) = (hom?, hom_fine?);
    let homogenized_delta = sup_difference(&hom, &hom_fine)?;
    let rows: Vec<ConvergenceRow> = eps_list
        .par_iter()
        .map(|&eps| -> Result<ConvergenceRow> {
            let step = eps / grid.osc_nodes_per_eps;
            let (first, cells) = cells_for(eps, step / 2.0, window, h);
            let field = model.realize(first, cells);
            let (run, fine) = rayon::join(
                || solve_oscillatory(h, &field, eps, g, window, Some(step)),
                || solve_oscillatory(h, &field, eps, g, window, Some(step / 2.0)),
            );
            let (run, fine) = (run?, fine?);
            let error = sup_difference(&run, &hom)?;
            let refined_error = sup_difference(&fine, &hom_fine)?;
            let refinement_delta = sup_difference(&run, &fine)?;
            Ok(ConvergenceRow { eps, step, error, refined_error, refinement_delta, slack: (error - refined_error).abs() })
        })
        .collect::<Result<_>>()?;
    let strictly_decreasing = rows.windows(2).all(|w| w[0].error - w[1].error > w[0].slack + w[1].slack);
    let non_increasing = rows.windows(2).all(|w| w[1].error <= w[0].error + w[0].slack + w[1].slack);
    Ok(ConvergenceReport { seed: model.seed(), grid, homogenized_delta, rows, strictly_decreasing, non_increasing })
}

/// Cells of a block potential covering the padded grid of a run at scale
/// `eps` with grid step `step`.
fn cells_for(eps: f64, step: f64, window: RunWindow, h: &Hamiltonian) -> (i64, usize) {
    let steps = (window.horizon / (CFL * step / h.lipschitz_bound())).ceil() + window.snapshots as f64 + 4.0;
    let reach = window.half_width + steps * step;
    let cells = (reach / eps).ceil() as i64 + 2;
    (-cells, 2 * cells as usize)
}
