//! Dispatch and artifact assembly. Everything here is a pure function of
//! the resolved config, so the bytes of every artifact are reproducible.

use std::sync::Arc;

use hjhom::cell_solver::{estimate_many, HbarEstimate};
use hjhom::corrector::{
    flat_interval_on, inf_admissible, monotone_solution, sup_admissible, transition_slope_on, verify_metric_solution,
    Provenance, SlopeField, VerifyMode,
};
use hjhom::effective::{
    compute_effective, effective_large_osc, effective_small_osc, small_oscillation_holds, EffectiveCurve,
};
use hjhom::evolution::convergence_report;
use hjhom::hamiltonian::PiecewiseMonotoneHamiltonian as Hamiltonian;
use hjhom::potential::PotentialModel;
use serde_json::{json, Value};

use crate::config::{CellParams, Command, CorrectorParams, EffectiveParams, EvolveParams, Params, Route, RunConfig, Selection};
use crate::failure::Failure;

/// Residual tolerance used when checking corrector fields.
pub const VERIFY_TOL: f64 = 1e-8;

/// One output file: name relative to the output directory, and contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

/// Everything a run produces, before anything touches the disk.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub hash: String,
    pub artifacts: Vec<Artifact>,
}

struct Stage<'a> {
    cfg: &'a RunConfig,
    stem: String,
}

impl Stage<'_> {
    fn csv(&self, body: &str) -> Artifact {
        let header = format!(
            "# hjhom {}\n# seed: {}\n# config: {}\n",
            self.cfg.command.name(),
            self.cfg.seed,
            self.cfg.canonical()
        );
        Artifact { name: format!("{}.csv", self.stem), contents: header + body }
    }

    fn json(&self, result: Value) -> Artifact {
        let config: Value = serde_json::from_str(&self.cfg.canonical()).unwrap();
        let doc = json!({ "command": self.cfg.command.name(), "seed": self.cfg.seed, "config": config, "result": result });
        Artifact { name: format!("{}.json", self.stem), contents: serde_json::to_string_pretty(&doc).unwrap() + "\n" }
    }

    /// Gnuplot script rendering the CSV to a PNG next to it.
    fn gnuplot(&self, settings: &str, plot: &str) -> Artifact {
        let script = format!(
            "# hjhom {} seed {}\nset datafile separator \",\"\nset terminal pngcairo size 900,600\nset output \"{stem}.png\"\nset key autotitle columnhead\n{settings}plot {plot}\n",
            self.cfg.command.name(),
            self.cfg.seed,
            stem = self.stem,
        );
        Artifact { name: format!("{}.gp", self.stem), contents: script }
    }

    fn data(&self) -> String {
        format!("\"{}.csv\"", self.stem)
    }
}

/// Runs a resolved config in the current rayon pool.
pub fn execute(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let h = cfg.hamiltonian.build().map_err(|e| Failure::from(e).at("/hamiltonian"))?;
    let model = cfg.potential.build().map_err(|e| Failure::from(e).at("/potential"))?;
    let hash = cfg.hash();
    let stage = Stage { cfg, stem: format!("{}_{hash}", cfg.command.name()) };
    let artifacts = match (cfg.command, &cfg.params) {
        (Command::Effective, Params::Effective(p)) => effective(&stage, &h, &model, p)?,
        (Command::Cell, Params::Cell(p)) => cell(&stage, &h, &model, p)?,
        (Command::Compare, Params::Cell(p)) => compare(&stage, &h, &model, p)?,
        (Command::Evolve, Params::Evolve(p)) => evolve(&stage, &h, &model, p)?,
        (Command::Corrector, Params::Corrector(p)) => corrector(&stage, &h, &model, p)?,
        _ => return Err(Failure::config("command_matches_params", "parameters do not belong to the command".into(), "/params")),
    };
    Ok(Outcome { hash, artifacts })
}

fn curve_for(h: &Hamiltonian, model: &PotentialModel, route: Route) -> Result<EffectiveCurve, Failure> {
    Ok(match route {
        Route::Recursive => compute_effective(h, model)?,
        Route::SmallOsc => effective_small_osc(h, model)?,
        Route::LargeOsc => effective_large_osc(h, model)?,
    })
}

fn effective(stage: &Stage, h: &Hamiltonian, model: &PotentialModel, p: &EffectiveParams) -> Result<Vec<Artifact>, Failure> {
    if !(p.lo < p.hi) || p.points < 2 {
        return Err(Failure::config("grid_nonempty", format!("need lo < hi and points >= 2, got [{}, {}] x {}", p.lo, p.hi, p.points), "/params"));
    }
    let curve = curve_for(h, model, p.route)?;
    let breakpoints = curve.breakpoints();
    let mut ps: Vec<f64> = (0..p.points).map(|k| p.lo + (p.hi - p.lo) * k as f64 / (p.points - 1) as f64).collect();
    ps.extend(breakpoints.iter().copied().filter(|b| (p.lo..=p.hi).contains(b)));
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    let flats: Vec<Value> =
        curve.flats().into_iter().map(|(lo, hi, level, prov)| json!({ "lo": lo, "hi": hi, "level": level, "provenance": prov })).collect();
    let result = json!({
        "route": p.route,
        "breakpoints": breakpoints,
        "flats": flats,
        "segments": curve.manifest(),
        "continuity_defect": curve.continuity_defect()?,
    });
    let bps: String = breakpoints.iter().map(|b| format!("set arrow from {b}, graph 0 to {b}, graph 1 nohead dt 3\n")).collect();
    Ok(vec![
        stage.csv(&curve.to_csv(&ps)?),
        stage.json(result),
        stage.gnuplot(&format!("set xlabel \"p\"\nset ylabel \"effective Hamiltonian\"\n{bps}"), &format!("{} using 1:2 with lines lw 2", stage.data())),
    ])
}

fn estimates(h: &Hamiltonian, model: &PotentialModel, p: &CellParams) -> Result<Vec<HbarEstimate>, Failure> {
    Ok(estimate_many(h, model, &p.momenta, &p.lambdas, p.step)?)
}

fn cell(stage: &Stage, h: &Hamiltonian, model: &PotentialModel, p: &CellParams) -> Result<Vec<Artifact>, Failure> {
    let est = estimates(h, model, p)?;
    let mut body = String::from("p,lambda,estimate,residual,sweeps,step\n");
    for e in &est {
        for r in &e.runs {
            body.push_str(&format!("{},{},{},{},{},{}\n", e.p, r.lambda, r.estimate, r.residual, r.sweeps, r.step));
        }
    }
    Ok(vec![
        stage.csv(&body),
        stage.json(json!({ "estimates": est })),
        stage.gnuplot("set xlabel \"p\"\nset ylabel \"-lambda v(0)\"\n", &format!("{} using 1:3 with points pt 7", stage.data())),
    ])
}

/// Closed-form route used as the reference in `compare`.
fn formula_curve(h: &Hamiltonian, model: &PotentialModel) -> (Value, Option<EffectiveCurve>) {
    let (route, res) = if small_oscillation_holds(h, model.mbar()) {
        ("small_osc", effective_small_osc(h, model))
    } else {
        ("large_osc", effective_large_osc(h, model))
    };
    match res {
        Ok(c) => (json!({ "route": route }), Some(c)),
        Err(e) => (json!({ "route": route, "unavailable": e.to_string() }), None),
    }
}

fn compare(stage: &Stage, h: &Hamiltonian, model: &PotentialModel, p: &CellParams) -> Result<Vec<Artifact>, Failure> {
    let ((formula_info, formula), curve) = rayon::join(|| formula_curve(h, model), || compute_effective(h, model));
    let curve = curve?;
    let est = estimates(h, model, p)?;
    let mut body = String::from("p,formula,cell,error_bar,curve\n");
    let mut rows = Vec::new();
    for e in &est {
        let c = curve.evaluate(e.p)?;
        let f = match &formula {
            Some(f) => Some(f.evaluate(e.p)?),
            None => None,
        };
        let fcol = f.map_or_else(|| "nan".to_string(), |v| v.to_string());
        body.push_str(&format!("{},{},{},{},{}\n", e.p, fcol, e.value, e.error_bar, c));
        rows.push(json!({
            "p": e.p,
            "formula": f,
            "cell": { "value": e.value, "error_bar": e.error_bar },
            "curve": c,
            "cell_minus_curve": e.value - c,
        }));
    }
    let d = stage.data();
    Ok(vec![
        stage.csv(&body),
        stage.json(json!({ "formula": formula_info, "rows": rows, "estimates": est })),
        stage.gnuplot(
            "set xlabel \"p\"\nset ylabel \"effective Hamiltonian\"\n",
            &format!("{d} using 1:5 with linespoints, {d} using 1:3:4 with yerrorbars, {d} using 1:2 with points pt 6"),
        ),
    ])
}

fn evolve(stage: &Stage, h: &Hamiltonian, model: &PotentialModel, p: &EvolveParams) -> Result<Vec<Artifact>, Failure> {
    let curve = compute_effective(h, model)?;
    let report = convergence_report(h, model, &curve, &p.initial, p.window, &p.eps, p.grid)?;
    let mut body = String::from("eps,step,error,refined_error,refinement_delta,slack\n");
    for r in &report.rows {
        body.push_str(&format!("{},{},{},{},{},{}\n", r.eps, r.step, r.error, r.refined_error, r.refinement_delta, r.slack));
    }
    Ok(vec![
        stage.csv(&body),
        stage.json(serde_json::to_value(&report).unwrap()),
        stage.gnuplot(
            "set logscale xy\nset xlabel \"eps\"\nset ylabel \"sup error\"\n",
            &format!("{} using 1:3:6 with yerrorbars", stage.data()),
        ),
    ])
}

fn corrector(stage: &Stage, h: &Hamiltonian, model: &PotentialModel, p: &CorrectorParams) -> Result<Vec<Artifact>, Failure> {
    let window = Arc::new(model.window(p.cells.unwrap_or(1)));
    let field: SlopeField = match p.selection {
        Selection::Sup => sup_admissible(h, window.clone(), p.mu)?.to_field(Provenance::Selection),
        Selection::Inf => inf_admissible(h, window.clone(), p.mu)?.to_field(Provenance::Selection),
        Selection::Transition => transition_slope_on(h, window.clone(), p.mu, p.t)?,
        Selection::Monotone => monotone_solution(h, window.clone(), p.mu)?,
    };
    let report = verify_metric_solution(&field, VerifyMode::Solution, VERIFY_TOL);
    let flat = flat_interval_on(h, window, p.mu).map_err(|e| e.to_string());
    let result = json!({
        "mu": field.mu,
        "expected_slope": field.expected_slope(),
        "field": field,
        "verify": report,
        "flat_interval": match flat { Ok(f) => json!(f), Err(m) => json!({ "unavailable": m }) },
    });
    Ok(vec![
        stage.csv(&field.to_csv(p.samples_per_piece.max(1))),
        stage.json(result),
        stage.gnuplot("set xlabel \"y\"\nset ylabel \"slope\"\n", &format!("{} using 1:2 with lines", stage.data())),
    ])
}
