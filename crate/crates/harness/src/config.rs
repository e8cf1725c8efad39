//! Versioned JSON scenario configuration and its resolution into runnable
//! scenarios.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rgmpc_core::governor::{RgConfig, Strategy};
use rgmpc_core::mpc::MpcConfig;
use rgmpc_core::plant::{Constraint, ConstraintSet, InputSet, LinearPlant, ReferenceBox};
use rgmpc_core::spacecraft::{self, CwhSchedule};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_STEPS: usize = 600;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub scenario: ScenarioSource,
    #[serde(default = "default_variants")]
    pub variants: Vec<VariantSpec>,
    pub initial: InitialSpec,
    /// Overrides the scenario's desired reference `r`.
    #[serde(default)]
    pub target: Option<Vec<f64>>,
    #[serde(default)]
    pub mpc: MpcOverrides,
    #[serde(default)]
    pub governor: GovernorOverrides,
    #[serde(default)]
    pub cmpc: CmpcSettings,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub convergence: ConvergenceSpec,
    #[serde(default)]
    pub seed: u64,
    /// Violations turn into a non-zero exit status.
    #[serde(default)]
    pub forbid_violations: bool,
}

fn default_variants() -> Vec<VariantSpec> {
    vec![VariantSpec::new(VariantKind::Rgmpc)]
}

fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}

/// A preset name or a fully inline plant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSource {
    Preset(String),
    Inline(Box<InlineScenario>),
}

/// Discrete-time plant given directly; matrices are row-major nested lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineScenario {
    pub name: String,
    pub ts: f64,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub input_set: InputSet,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    pub target: Vec<f64>,
    #[serde(default)]
    pub reference_box: Option<BoxSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    Rgmpc,
    Umpc,
    SlqrRg,
    Cmpc,
}

impl VariantKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Rgmpc => "rgmpc",
            VariantKind::Umpc => "umpc",
            VariantKind::SlqrRg => "slqr-rg",
            VariantKind::Cmpc => "cmpc",
        }
    }

    pub fn is_governed(self) -> bool {
        matches!(self, VariantKind::Rgmpc | VariantKind::SlqrRg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub kind: VariantKind,
    /// Prediction horizon of the cMPC variant.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub label: Option<String>,
}

impl VariantSpec {
    pub fn new(kind: VariantKind) -> Self {
        Self {
            kind,
            horizon: None,
            label: None,
        }
    }

    pub fn cmpc(horizon: usize) -> Self {
        Self {
            kind: VariantKind::Cmpc,
            horizon: Some(horizon),
            label: None,
        }
    }

    pub fn label(&self) -> String {
        match (&self.label, self.kind, self.horizon) {
            (Some(l), _, _) => l.clone(),
            (None, VariantKind::Cmpc, Some(h)) => format!("cmpc-{h}"),
            (None, kind, _) => kind.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    State(Vec<f64>),
    States(Vec<Vec<f64>>),
    /// Concentric circles at a fixed along-track distance (CWH scenarios).
    Grid {
        x2: f64,
        count: usize,
        max_half_angle_deg: f64,
    },
    /// Steady states at references drawn uniformly from the reference box.
    Random { count: usize },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcOverrides {
    pub horizon: Option<usize>,
    pub q_diag: Option<Vec<f64>>,
    pub r_diag: Option<Vec<f64>>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// The scenario's reference schedule.
    Schedule,
    /// Scalar progress `v = v0 + s (r - v0)` with the decaying increment rule.
    Scalar,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernorOverrides {
    pub n_rg: Option<usize>,
    pub kappa0: Option<f64>,
    pub n_a: Option<usize>,
    pub strategy: Option<StrategyKind>,
    pub schedule: Option<CwhSchedule>,
    pub boundary_samples: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmpcSettings {
    #[serde(default = "default_cmpc_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_cmpc_iterations")]
    pub max_iterations: usize,
}

fn default_cmpc_tolerance() -> f64 {
    1e-9
}

fn default_cmpc_iterations() -> usize {
    50_000
}

impl Default for CmpcSettings {
    fn default() -> Self {
        Self {
            tolerance: default_cmpc_tolerance(),
            max_iterations: default_cmpc_iterations(),
        }
    }
}

/// The convergence ball around `x_ss(r)`.
///
/// The output error is `C (x - x_ss)`; the remaining error is the part of
/// `x - x_ss` outside the row space of `C` (velocities for CWH).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    #[serde(default = "default_position_tol")]
    pub position_tol: f64,
    #[serde(default = "default_velocity_tol")]
    pub velocity_tol: f64,
    /// Consecutive steps inside the ball before a run stops early.
    #[serde(default = "default_settle_steps")]
    pub settle_steps: usize,
}

fn default_position_tol() -> f64 {
    0.1
}

fn default_velocity_tol() -> f64 {
    0.01
}

fn default_settle_steps() -> usize {
    10
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self {
            position_tol: default_position_tol(),
            velocity_tol: default_velocity_tol(),
            settle_steps: default_settle_steps(),
        }
    }
}

/// Everything a simulation needs, with all overrides applied.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub ts: f64,
    pub plant: LinearPlant,
    pub constraints: ConstraintSet,
    pub target: DVector<f64>,
    pub mpc: MpcConfig,
    pub rg: RgConfig,
    pub reference_box: Option<ReferenceBox>,
}

impl Scenario {
    pub fn mpc_with_horizon(&self, horizon: usize) -> rgmpc_core::Result<MpcConfig> {
        Ok(MpcConfig::new(&self.plant, self.mpc.q.clone(), self.mpc.r.clone(), horizon)?
            .with_tolerance(self.mpc.tolerance, self.mpc.max_iterations))
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub scenario: Arc<Scenario>,
    pub variants: Vec<VariantSpec>,
    pub initial_states: Vec<DVector<f64>>,
    pub max_steps: usize,
    pub convergence: ConvergenceSpec,
    pub cmpc: CmpcSettings,
    pub seed: u64,
    pub forbid_violations: bool,
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(config_err(format!("matrix `{name}` must be a non-empty rectangular list of rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn diag(name: &str, values: &[f64], size: usize) -> Result<DMatrix<f64>> {
    if values.len() != size {
        return Err(config_err(format!("`{name}` needs {size} entries, got {}", values.len())));
    }
    Ok(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(msg) => config_err(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// A config for one of the named presets with everything else defaulted.
    pub fn preset(name: &str, initial: InitialSpec, variants: Vec<VariantSpec>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: ScenarioSource::Preset(name.to_string()),
            variants,
            initial,
            target: None,
            mpc: MpcOverrides::default(),
            governor: GovernorOverrides::default(),
            cmpc: CmpcSettings::default(),
            max_steps: DEFAULT_MAX_STEPS,
            convergence: ConvergenceSpec::default(),
            seed: 0,
            forbid_violations: false,
        }
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let scenario = self.resolve_scenario()?;
        if self.variants.is_empty() {
            return Err(config_err("at least one controller variant is required"));
        }
        for v in &self.variants {
            match v.kind {
                VariantKind::Cmpc => {
                    match v.horizon {
                        Some(h) if h > 0 => {}
                        _ => return Err(config_err("cmpc variants need a positive `horizon`")),
                    }
                    if !scenario.constraints.is_polyhedral()
                        || !matches!(scenario.constraints.input_set, InputSet::Box { .. })
                    {
                        return Err(config_err(format!(
                            "cmpc needs a box input set and linear constraints; scenario `{}` has others",
                            scenario.name
                        )));
                    }
                }
                _ if v.horizon.is_some() => {
                    return Err(config_err(format!(
                        "`horizon` applies to cmpc variants only (variant {})",
                        v.label()
                    )))
                }
                _ => {}
            }
            if v.kind.is_governed() {
                scenario
                    .rg
                    .validate(scenario.mpc.horizon)
                    .map_err(|e| config_err(e.to_string()))?;
            }
        }
        let mut labels: Vec<String> = self.variants.iter().map(VariantSpec::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.variants.len() {
            return Err(config_err("variant labels must be unique"));
        }
        if self.max_steps == 0 {
            return Err(config_err("max_steps must be positive"));
        }
        let c = &self.convergence;
        if !(c.position_tol > 0.0 && c.velocity_tol > 0.0) {
            return Err(config_err("convergence tolerances must be positive"));
        }
        if !(self.cmpc.tolerance > 0.0) || self.cmpc.max_iterations == 0 {
            return Err(config_err("cmpc tolerance and max_iterations must be positive"));
        }
        let initial_states = self.initial_states(&scenario)?;
        Ok(ResolvedConfig {
            scenario: Arc::new(scenario),
            variants: self.variants.clone(),
            initial_states,
            max_steps: self.max_steps,
            convergence: self.convergence,
            cmpc: self.cmpc.clone(),
            seed: self.seed,
            forbid_violations: self.forbid_violations,
        })
    }

    fn resolve_scenario(&self) -> Result<Scenario> {
        let (name, ts, plant, constraints, mut target, mut q, mut r, mut n_mpc, mut rg, schedule, reference_box) =
            match &self.scenario {
                ScenarioSource::Preset(name) => {
                    let sc = spacecraft::preset(name).map_err(|e| config_err(e.to_string()))?;
                    let schedule = Some(sc.schedule.clone());
                    (
                        sc.name,
                        sc.params.ts,
                        sc.plant,
                        sc.constraints,
                        sc.target,
                        sc.q,
                        sc.r,
                        sc.n_mpc,
                        sc.rg,
                        schedule,
                        Some(sc.reference_box),
                    )
                }
                ScenarioSource::Inline(inline) => {
                    if !(inline.ts > 0.0) {
                        return Err(config_err("inline scenario needs ts > 0"));
                    }
                    let plant = LinearPlant::new(
                        matrix("a", &inline.a)?,
                        matrix("b", &inline.b)?,
                        matrix("c", &inline.c)?,
                    )
                    .map_err(|e| config_err(e.to_string()))?;
                    let constraints = ConstraintSet::new(
                        plant.n(),
                        plant.m(),
                        inline.input_set.clone(),
                        inline.constraints.clone(),
                    )
                    .map_err(|e| config_err(e.to_string()))?;
                    let reference_box = match &inline.reference_box {
                        Some(b) => Some(
                            ReferenceBox::new(
                                &plant,
                                &constraints,
                                DVector::from_column_slice(&b.lower),
                                DVector::from_column_slice(&b.upper),
                            )
                            .map_err(|e| config_err(e.to_string()))?,
                        ),
                        None => None,
                    };
                    let (n, m) = (plant.n(), plant.m());
                    (
                        inline.name.clone(),
                        inline.ts,
                        plant,
                        constraints,
                        DVector::from_column_slice(&inline.target),
                        DMatrix::identity(n, n),
                        DMatrix::identity(m, m),
                        10,
                        RgConfig {
                            n_rg: 60,
                            ..RgConfig::default()
                        },
                        None,
                        reference_box,
                    )
                }
            };

        if let Some(t) = &self.target {
            target = DVector::from_column_slice(t);
        }
        if target.len() != plant.p() {
            return Err(config_err(format!(
                "target has {} entries, the plant has {} outputs",
                target.len(),
                plant.p()
            )));
        }
        let m = &self.mpc;
        if let Some(h) = m.horizon {
            n_mpc = h;
        }
        if n_mpc == 0 {
            return Err(config_err("MPC horizon must be positive"));
        }
        if let Some(d) = &m.q_diag {
            q = diag("q_diag", d, plant.n())?;
        }
        if let Some(d) = &m.r_diag {
            r = diag("r_diag", d, plant.m())?;
        }
        let mut mpc = MpcConfig::new(&plant, q, r, n_mpc).map_err(|e| config_err(e.to_string()))?;
        let tolerance = m.tolerance.unwrap_or(mpc.tolerance);
        let max_iterations = m.max_iterations.unwrap_or(mpc.max_iterations);
        if !(tolerance > 0.0) || max_iterations == 0 {
            return Err(config_err("MPC tolerance and max_iterations must be positive"));
        }
        mpc = mpc.with_tolerance(tolerance, max_iterations);

        let g = &self.governor;
        if let Some(v) = g.n_rg {
            rg.n_rg = v;
        }
        if let Some(v) = g.kappa0 {
            rg.kappa0 = v;
        }
        if let Some(v) = g.n_a {
            rg.n_a = v;
        }
        if let Some(v) = g.boundary_samples {
            rg.boundary_samples = v.max(1);
        }
        let schedule = g.schedule.clone().or(schedule);
        let strategy = g.strategy.unwrap_or(if schedule.is_some() {
            StrategyKind::Schedule
        } else {
            StrategyKind::Scalar
        });
        rg.strategy = match strategy {
            StrategyKind::Scalar => Strategy::Scalar,
            StrategyKind::Schedule => {
                let schedule = schedule
                    .ok_or_else(|| config_err("strategy `schedule` needs a `governor.schedule` for inline plants"))?;
                if plant.p() != 3 {
                    return Err(config_err("the reference schedule needs a plant with 3 outputs"));
                }
                schedule.validate().map_err(|e| config_err(e.to_string()))?;
                Strategy::Custom(Arc::new(schedule))
            }
        };
        Ok(Scenario {
            name,
            ts,
            plant,
            constraints,
            target,
            mpc,
            rg,
            reference_box,
        })
    }

    fn initial_states(&self, scenario: &Scenario) -> Result<Vec<DVector<f64>>> {
        let n = scenario.plant.n();
        let states = match &self.initial {
            InitialSpec::State(x) => vec![DVector::from_column_slice(x)],
            InitialSpec::States(xs) => xs.iter().map(|x| DVector::from_column_slice(x)).collect(),
            InitialSpec::Grid {
                x2,
                count,
                max_half_angle_deg,
            } => {
                if n != 6 {
                    return Err(config_err("grid initial conditions need the 6-state CWH plant"));
                }
                spacecraft::ic_grid(*x2, *count, *max_half_angle_deg).map_err(|e| config_err(e.to_string()))?
            }
            InitialSpec::Random { count } => {
                let bx = scenario
                    .reference_box
                    .as_ref()
                    .ok_or_else(|| config_err("random initial conditions need a reference box"))?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut out = Vec::with_capacity(*count);
                for _ in 0..*count {
                    let v = bx.sample(&mut rng);
                    let ss = scenario
                        .plant
                        .steady_state(&scenario.constraints, &v)
                        .map_err(|e| config_err(e.to_string()))?;
                    out.push(ss.x_ss);
                }
                out
            }
        };
        if states.is_empty() {
            return Err(config_err("no initial conditions"));
        }
        if let Some(bad) = states.iter().position(|x| x.len() != n) {
            return Err(config_err(format!("initial state {bad} does not have {n} entries")));
        }
        Ok(states)
    }
}
