//! Closed-loop simulation of one controller variant from one initial state.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use rgmpc_core::governor::{Governor, GovernorState, Predictor};
use rgmpc_core::mpc::{solve_umpc, CmpcProblem, Condensation, InputSequence};
use rgmpc_core::plant::SteadyStatePoint;
use rgmpc_core::Error;

use crate::config::{CmpcSettings, ConvergenceSpec, ResolvedConfig, Scenario, VariantKind, VariantSpec};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    HorizonCap,
    InitializationInfeasible,
    OcpInfeasible,
    SolverError,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::HorizonCap => "horizon-cap",
            Termination::InitializationInfeasible => "initialization-infeasible",
            Termination::OcpInfeasible => "ocp-infeasible",
            Termination::SolverError => "solver-error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Termination::Converged,
            Termination::HorizonCap,
            Termination::InitializationInfeasible,
            Termination::OcpInfeasible,
            Termination::SolverError,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationEntry {
    pub step: usize,
    pub constraint: String,
    pub value: f64,
}

/// Per-step arrays of one closed-loop run. Entry `k` of every array belongs to
/// step `k`; `final_state` is the state after the last applied input.
#[derive(Debug, Clone)]
pub struct SimulationRecord {
    pub variant: String,
    pub kind: VariantKind,
    pub ic_id: usize,
    pub ts: f64,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub references: Vec<DVector<f64>>,
    pub kappa: Vec<f64>,
    pub s: Vec<f64>,
    pub branch: Vec<String>,
    pub t_comp: Vec<f64>,
    pub final_state: DVector<f64>,
    /// `x_ss(r)`, the point the convergence ball is centred on.
    pub target_state: DVector<f64>,
    /// The plant's `C`, which splits the convergence error.
    pub output_map: DMatrix<f64>,
    pub input_dim: usize,
    pub termination: Termination,
    pub initialized: bool,
    pub violations: Vec<ViolationEntry>,
    pub message: Option<String>,
}

impl SimulationRecord {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// `x_0, ..., x_K` including the final state.
    pub fn trajectory(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.states.iter().chain(std::iter::once(&self.final_state))
    }
}

/// Splits `x - x_ss` into its output part and the rest.
#[derive(Debug, Clone)]
pub struct ConvergenceBall {
    center: DVector<f64>,
    c: DMatrix<f64>,
    /// Projector onto the orthogonal complement of the row space of `C`.
    rest: DMatrix<f64>,
    spec: ConvergenceSpec,
}

impl ConvergenceBall {
    pub fn new(c: &DMatrix<f64>, center: DVector<f64>, spec: ConvergenceSpec) -> Self {
        let n = c.ncols();
        let pinv = c
            .clone()
            .pseudo_inverse(1e-12)
            .unwrap_or_else(|_| DMatrix::zeros(n, c.nrows()));
        let rest = DMatrix::identity(n, n) - pinv * c;
        Self {
            center,
            c: c.clone(),
            rest,
            spec,
        }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        let e = x - &self.center;
        (&self.c * &e).norm() <= self.spec.position_tol && (&self.rest * &e).norm() <= self.spec.velocity_tol
    }
}

enum Controller {
    Governed {
        governor: Box<Governor>,
        state: Option<Box<GovernorState>>,
    },
    Umpc {
        model: Box<Condensation>,
        warm: Option<DVector<f64>>,
    },
    Cmpc(Box<CmpcProblem>),
}

struct StepResult {
    u: DVector<f64>,
    v: DVector<f64>,
    kappa: f64,
    s: f64,
    branch: String,
}

impl Controller {
    fn build(scenario: &Scenario, variant: &VariantSpec, cmpc: &CmpcSettings) -> rgmpc_core::Result<Self> {
        Ok(match variant.kind {
            VariantKind::Rgmpc | VariantKind::SlqrRg => {
                let predictor = if variant.kind == VariantKind::Rgmpc {
                    Predictor::Mpc
                } else {
                    Predictor::SaturatedLqr
                };
                let governor = Governor::new(
                    scenario.plant.clone(),
                    scenario.constraints.clone(),
                    scenario.mpc.clone(),
                    scenario.rg.clone(),
                    predictor,
                )?;
                Controller::Governed {
                    governor: Box::new(governor),
                    state: None,
                }
            }
            VariantKind::Umpc => Controller::Umpc {
                model: Box::new(Condensation::new(&scenario.plant, &scenario.mpc)?),
                warm: None,
            },
            VariantKind::Cmpc => {
                let horizon = variant.horizon.unwrap_or(scenario.mpc.horizon);
                let cfg = scenario.mpc_with_horizon(horizon)?;
                let mut problem = CmpcProblem::new(&scenario.plant, &cfg, &scenario.constraints)?;
                problem.tolerance = cmpc.tolerance;
                problem.max_iterations = cmpc.max_iterations;
                Controller::Cmpc(Box::new(problem))
            }
        })
    }

    fn step(
        &mut self,
        scenario: &Scenario,
        ss: &SteadyStatePoint,
        k: usize,
        x: &DVector<f64>,
    ) -> rgmpc_core::Result<StepResult> {
        match self {
            Controller::Governed { governor, state } => {
                let state = state.as_mut().expect("governor initialized before stepping");
                let out = governor.step(k, x, state)?;
                Ok(StepResult {
                    u: out.u,
                    v: out.v,
                    kappa: out.kappa,
                    s: out.s,
                    branch: out.branch.as_str().to_string(),
                })
            }
            Controller::Umpc { model, warm } => {
                let qp = model.condense(x, ss);
                let seq = match solve_umpc(&qp, &scenario.constraints, &scenario.mpc, warm.as_ref()) {
                    Ok(seq) => seq,
                    Err(Error::SolverMaxIterations {
                        iterations,
                        residual,
                        best,
                    }) => InputSequence::from_stacked(
                        &best,
                        model.m,
                        iterations,
                        residual,
                        false,
                        Default::default(),
                    ),
                    Err(e) => return Err(e),
                };
                *warm = Some(seq.shifted(&ss.u_ss));
                Ok(StepResult {
                    u: seq.inputs[0].clone(),
                    v: ss.r.clone(),
                    kappa: 0.0,
                    s: 1.0,
                    branch: "umpc".to_string(),
                })
            }
            Controller::Cmpc(problem) => {
                let seq = problem.solve(x, ss)?;
                Ok(StepResult {
                    u: seq.inputs[0].clone(),
                    v: ss.r.clone(),
                    kappa: 0.0,
                    s: 1.0,
                    branch: "cmpc".to_string(),
                })
            }
        }
    }
}

/// Runs `variant` in closed loop from `x0` until the state settles in the
/// convergence ball, the step cap is hit, or the controller fails.
///
/// Controller failures end the run and are reported in the record.
pub fn simulate(
    scenario: &Scenario,
    variant: &VariantSpec,
    x0: &DVector<f64>,
    ic_id: usize,
    max_steps: usize,
    convergence: ConvergenceSpec,
    cmpc: &CmpcSettings,
) -> Result<SimulationRecord> {
    let plant = &scenario.plant;
    let target_ss = plant.steady_state(&scenario.constraints, &scenario.target)?;
    let ball = ConvergenceBall::new(plant.c(), target_ss.x_ss.clone(), convergence);
    let mut rec = SimulationRecord {
        variant: variant.label(),
        kind: variant.kind,
        ic_id,
        ts: scenario.ts,
        states: Vec::new(),
        inputs: Vec::new(),
        references: Vec::new(),
        kappa: Vec::new(),
        s: Vec::new(),
        branch: Vec::new(),
        t_comp: Vec::new(),
        final_state: x0.clone(),
        target_state: target_ss.x_ss.clone(),
        output_map: plant.c().clone(),
        input_dim: plant.m(),
        termination: Termination::HorizonCap,
        initialized: true,
        violations: Vec::new(),
        message: None,
    };

    let mut controller = Controller::build(scenario, variant, cmpc)?;
    if let Controller::Governed { governor, state } = &mut controller {
        match governor.init(x0, &scenario.target, None) {
            Ok(s) => *state = Some(Box::new(s)),
            Err(e) => {
                rec.initialized = false;
                rec.termination = Termination::InitializationInfeasible;
                rec.message = Some(e.to_string());
                return Ok(rec);
            }
        }
    }

    let mut x = x0.clone();
    let mut settled = 0;
    for k in 0..max_steps {
        let start = Instant::now();
        let step = controller.step(scenario, &target_ss, k, &x);
        let elapsed = start.elapsed().as_secs_f64();
        let step = match step {
            Ok(step) => step,
            Err(e) => {
                rec.termination = match e {
                    Error::InfeasibleOcp(_) => Termination::OcpInfeasible,
                    _ => Termination::SolverError,
                };
                rec.message = Some(format!("step {k}: {e}"));
                break;
            }
        };
        for v in scenario.constraints.check(&x, &step.u) {
            rec.violations.push(ViolationEntry {
                step: k,
                constraint: v.name,
                value: v.value,
            });
        }
        let next = plant.step(&x, &step.u);
        let done = step.s >= 1.0;
        rec.states.push(std::mem::replace(&mut x, next));
        rec.inputs.push(step.u);
        rec.references.push(step.v);
        rec.kappa.push(step.kappa);
        rec.s.push(step.s);
        rec.branch.push(step.branch);
        rec.t_comp.push(elapsed);

        if done && ball.contains(&x) {
            settled += 1;
            if settled >= convergence.settle_steps.max(1) {
                rec.termination = Termination::Converged;
                break;
            }
        } else {
            settled = 0;
        }
    }
    rec.final_state = x;
    Ok(rec)
}

/// [`simulate`] with the settings of a resolved config.
pub fn simulate_config(cfg: &ResolvedConfig, variant: &VariantSpec, ic_id: usize) -> Result<SimulationRecord> {
    simulate(
        &cfg.scenario,
        variant,
        &cfg.initial_states[ic_id],
        ic_id,
        cfg.max_steps,
        cfg.convergence,
        &cfg.cmpc,
    )
}
