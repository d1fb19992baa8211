//! Hard errors and their machine-readable form.

use hjhom::error::Error;
use serde::Serialize;

/// Exit status for configuration and input-validation errors.
pub const EXIT_INVALID: i32 = 2;
/// Exit status for solver failures on a valid configuration.
pub const EXIT_SOLVER: i32 = 3;
/// Exit status for I/O trouble.
pub const EXIT_IO: i32 = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    /// `config`, `input`, `solver` or `io`.
    pub kind: &'static str,
    /// Name of the violated invariant.
    pub invariant: String,
    pub message: String,
    /// JSON pointer into the config, when the error has a location.
    #[serde(skip_serializing_if = "String::is_empty")]
    pub path: String,
}

impl Failure {
    pub fn config(invariant: &str, message: String, path: &str) -> Self {
        Failure { kind: "config", invariant: invariant.into(), message, path: path.into() }
    }

    pub fn io(message: String) -> Self {
        Failure { kind: "io", invariant: "output_writable".into(), message, path: String::new() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            "config" | "input" => EXIT_INVALID,
            "io" => EXIT_IO,
            _ => EXIT_SOLVER,
        }
    }

    /// One-line JSON document `{"error": {...}}`.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }

    pub fn at(mut self, path: &str) -> Self {
        self.path = path.into();
        self
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (kind, invariant) = match &e {
            Error::InvalidHamiltonian(_) => ("input", "hamiltonian_piecewise_monotone"),
            Error::NotCoercive { .. } => ("input", "hamiltonian_coercive"),
            Error::InvalidPotential(_) => ("input", "potential_well_formed"),
            Error::UnderResolved { .. } => ("input", "potential_range_resolved"),
            Error::Precondition(_) => ("input", "operation_precondition"),
            Error::LevelOutside { .. } => ("input", "level_in_admissible_range"),
            Error::OutOfRange { .. } => ("solver", "branch_energy_in_range"),
            Error::NoSelection(_) => ("solver", "admissible_selection_exists"),
            Error::NotConverged { .. } => ("solver", "solver_converged"),
            Error::Internal(_) => ("solver", "internal_consistency"),
        };
        Failure { kind, invariant: invariant.into(), message: e.to_string(), path: String::new() }
    }
}
