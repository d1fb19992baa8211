//! Run configuration: schema check, typed parameters, seed resolution.

use std::sync::OnceLock;

use hjhom::cell_solver::DEFAULT_LAMBDAS;
use hjhom::evolution::{GridRule, InitialData, RunWindow};
use hjhom::hamiltonian::HamiltonianSpec;
use hjhom::potential::{PotentialSpec, DEFAULT_CELLS};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::failure::Failure;

/// The schema shipped in `docs/`, compiled once.
pub const SCHEMA: &str = include_str!("../../../docs/config.schema.json");

fn validator() -> &'static jsonschema::Validator {
    static V: OnceLock<jsonschema::Validator> = OnceLock::new();
    V.get_or_init(|| {
        let schema: Value = serde_json::from_str(SCHEMA).expect("shipped schema is valid JSON");
        jsonschema::validator_for(&schema).expect("shipped schema compiles")
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Effective,
    Cell,
    Evolve,
    Corrector,
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Effective => "effective",
            Command::Cell => "cell",
            Command::Evolve => "evolve",
            Command::Corrector => "corrector",
            Command::Compare => "compare",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Recursive,
    SmallOsc,
    LargeOsc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectiveParams {
    #[serde(default = "EffectiveParams::route")]
    pub route: Route,
    #[serde(default = "EffectiveParams::lo")]
    pub lo: f64,
    #[serde(default = "EffectiveParams::hi")]
    pub hi: f64,
    #[serde(default = "EffectiveParams::points")]
    pub points: usize,
}

impl EffectiveParams {
    fn route() -> Route {
        Route::Recursive
    }
    fn lo() -> f64 {
        -1.0
    }
    fn hi() -> f64 {
        4.0
    }
    fn points() -> usize {
        200
    }
}

/// Parameters of `cell` and `compare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellParams {
    pub momenta: Vec<f64>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

fn default_lambdas() -> Vec<f64> {
    DEFAULT_LAMBDAS.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveParams {
    #[serde(default = "EvolveParams::eps")]
    pub eps: Vec<f64>,
    #[serde(default = "EvolveParams::initial")]
    pub initial: InitialData,
    #[serde(default = "RunWindow::unit")]
    pub window: RunWindow,
    #[serde(default)]
    pub grid: GridRule,
}

impl EvolveParams {
    fn eps() -> Vec<f64> {
        vec![0.2, 0.1, 0.05]
    }
    fn initial() -> InitialData {
        InitialData::Cone
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Sup,
    Inf,
    Transition,
    Monotone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectorParams {
    pub mu: f64,
    #[serde(default = "CorrectorParams::selection")]
    pub selection: Selection,
    /// Position inside the flat interval for `transition`.
    #[serde(default = "CorrectorParams::t")]
    pub t: f64,
    /// Periods or cells in the window: one period for periodic
    /// potentials, the library default for random ones.
    #[serde(default)]
    pub cells: Option<usize>,
    #[serde(default = "CorrectorParams::samples")]
    pub samples_per_piece: usize,
}

impl CorrectorParams {
    fn selection() -> Selection {
        Selection::Sup
    }
    fn t() -> f64 {
        0.5
    }
    fn samples() -> usize {
        16
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    Effective(EffectiveParams),
    Cell(CellParams),
    Evolve(EvolveParams),
    Corrector(CorrectorParams),
}

/// On-disk form, before defaults are filled in.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    command: Command,
    #[serde(default)]
    params: Option<Value>,
    hamiltonian: HamiltonianSpec,
    potential: PotentialSpec,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    out: Option<String>,
}

/// A fully resolved run. Serializing it gives the config embedded in every
/// artifact; its hash names the artifacts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub params: Params,
    pub hamiltonian: HamiltonianSpec,
    pub potential: PotentialSpec,
    pub seed: u64,
    pub out: String,
}

/// Overrides coming from the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub command: Option<Command>,
    pub seed: Option<u64>,
    pub out: Option<String>,
}

impl RunConfig {
    /// Validates `text` against the schema, then resolves defaults, the
    /// seed and the output directory.
    pub fn load(text: &str, overrides: &Overrides) -> Result<RunConfig, Failure> {
        let value: Value = serde_json::from_str(text).map_err(|e| Failure::config("config_is_json", e.to_string(), ""))?;
        if let Some(e) = validator().iter_errors(&value).next() {
            return Err(Failure::config("config_schema", e.to_string(), &e.instance_path.to_string()));
        }
        let raw: RawConfig = serde_json::from_value(value).map_err(|e| Failure::config("config_schema", e.to_string(), ""))?;
        if let Some(c) = overrides.command {
            if c != raw.command {
                return Err(Failure::config(
                    "command_matches_config",
                    format!("subcommand {} but config says {}", c.name(), raw.command.name()),
                    "/command",
                ));
            }
        }
        let mut params = parse_params(raw.command, raw.params)?;
        if let Params::Corrector(c) = &mut params {
            let periodic = matches!(raw.potential, PotentialSpec::Zero | PotentialSpec::Cosine { .. } | PotentialSpec::Fourier { .. });
            c.cells.get_or_insert(if periodic { 1 } else { DEFAULT_CELLS });
        }
        let seed = overrides.seed.or(raw.seed).or_else(|| spec_seed(&raw.potential)).unwrap_or(0);
        let potential = with_seed(raw.potential, seed);
        let out = overrides.out.clone().or(raw.out).unwrap_or_else(|| ".".into());
        Ok(RunConfig { command: raw.command, params, hamiltonian: raw.hamiltonian, potential, seed, out })
    }

    /// Canonical JSON of the parts that determine the results. The output
    /// directory is left out so moving a run does not rename its files.
    pub fn canonical(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().unwrap().remove("out");
        serde_json::to_string(&v).unwrap()
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_params(command: Command, params: Option<Value>) -> Result<Params, Failure> {
    let v = params.unwrap_or_else(|| Value::Object(Default::default()));
    let bad = |e: serde_json::Error| Failure::config("config_schema", e.to_string(), "/params");
    Ok(match command {
        Command::Effective => Params::Effective(serde_json::from_value(v).map_err(bad)?),
        Command::Cell | Command::Compare => Params::Cell(serde_json::from_value(v).map_err(bad)?),
        Command::Evolve => Params::Evolve(serde_json::from_value(v).map_err(bad)?),
        Command::Corrector => Params::Corrector(serde_json::from_value(v).map_err(bad)?),
    })
}

fn spec_seed(p: &PotentialSpec) -> Option<u64> {
    match p {
        PotentialSpec::RandomPhase { seed, .. } | PotentialSpec::BlockRandom { seed, .. } => Some(*seed),
        _ => None,
    }
}

fn with_seed(p: PotentialSpec, seed: u64) -> PotentialSpec {
    match p {
        PotentialSpec::RandomPhase { base, .. } => PotentialSpec::RandomPhase { base, seed },
        PotentialSpec::BlockRandom { depth_dist, .. } => PotentialSpec::BlockRandom { depth_dist, seed },
        other => other,
    }
}
