//! Incremental reference governor on top of the uMPC.
//!
//! At every step the governor proposes `v+`, solves the uMPC for it, extends the
//! solution with the saturated LQR law and accepts `v+` only when the extended
//! prediction is admissible and ends in the terminal set. Otherwise it replays
//! the stored MPC inputs and finally falls back to the saturated LQR law.

mod extend;
mod terminal;

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DVector;

pub use extend::{extend_sequence, saturated_lqr, ExtendedSequence};
pub use terminal::{InvariantSet, TerminalSetBuilder, DEFAULT_BOUNDARY_SAMPLES};

use crate::error::{Error, Result};
use crate::mpc::{solve_umpc, Condensation, InputSequence, MpcConfig};
use crate::plant::{ConstraintSet, LinearPlant, SteadyStatePoint, FEASIBILITY_TOL, INPUT_SET_NAME};

pub const TERMINAL_SET_NAME: &str = "terminal-set";
const S_ROUNDOFF: f64 = 1e-12;

/// A problem-specific rule mapping the current governed reference to the next
/// candidate `v+`. Implementations must move monotonically toward `r` and land
/// on it exactly after finitely many accepted steps.
pub trait ReferenceSchedule: Send + Sync + fmt::Debug {
    fn next(&self, v_prev: &DVector<f64>, v0: &DVector<f64>, r: &DVector<f64>) -> DVector<f64>;

    /// Progress in `[0, 1]`; exactly 1 iff `v == r`.
    fn progress(&self, v: &DVector<f64>, v0: &DVector<f64>, r: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..v.len() {
            let span = (v0[i] - r[i]).abs();
            let rest = (v[i] - r[i]).abs();
            if span > 0.0 {
                worst = worst.max(rest / span);
            } else if rest > 0.0 {
                worst = 1.0;
            }
        }
        (1.0 - worst).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone)]
pub enum Strategy {
    /// `v+ = v_prev + kappa_k v_dir` with the decaying increment rule.
    Scalar,
    Custom(Arc<dyn ReferenceSchedule>),
}

#[derive(Debug, Clone)]
pub struct RgConfig {
    /// Admissibility horizon `N_RG`.
    pub n_rg: usize,
    pub kappa0: f64,
    /// Grace steps before the increment starts to decay.
    pub n_a: usize,
    pub strategy: Strategy,
    pub boundary_samples: usize,
}

impl Default for RgConfig {
    fn default() -> Self {
        Self {
            n_rg: 120,
            kappa0: 0.1,
            n_a: 5,
            strategy: Strategy::Scalar,
            boundary_samples: DEFAULT_BOUNDARY_SAMPLES,
        }
    }
}

impl RgConfig {
    pub fn validate(&self, n_mpc: usize) -> Result<()> {
        if !(self.kappa0 > 0.0 && self.kappa0 <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "kappa0 must lie in (0, 1], got {}",
                self.kappa0
            )));
        }
        if self.n_rg <= n_mpc {
            return Err(Error::InvalidArgument(format!(
                "N_RG ({}) must exceed the MPC horizon ({n_mpc})",
                self.n_rg
            )));
        }
        Ok(())
    }
}

/// Where the governor's prediction comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predictor {
    /// uMPC inputs padded with the saturated LQR law.
    Mpc,
    /// Saturated LQR from the first step on (the sLQR-RG baseline).
    SaturatedLqr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Advance,
    Replay,
    LqrFallback,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Advance => "advance",
            Branch::Replay => "replay",
            Branch::LqrFallback => "lqr-fallback",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct GovernorState {
    pub v_prev: DVector<f64>,
    pub v0: DVector<f64>,
    pub v_dir: DVector<f64>,
    pub r: DVector<f64>,
    pub k_prime: usize,
    pub stored_tail: Vec<DVector<f64>>,
    pub kappa_history: Vec<f64>,
    /// Running sum of accepted increments.
    pub s: f64,
    steady_prev: SteadyStatePoint,
    warm_start: Option<DVector<f64>>,
}

impl GovernorState {
    pub fn steady_state(&self) -> &SteadyStatePoint {
        &self.steady_prev
    }
}

/// First constraint failure found along an extended sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub step: usize,
    pub constraint: String,
}

#[derive(Debug, Clone)]
pub struct Admissibility {
    pub admissible: bool,
    pub rejection: Option<Rejection>,
}

/// Checks `z_j in Z` for `j = 0..N_RG-2` and terminal membership of `x_{N_RG-1}`.
pub fn check_admissible(ext: &ExtendedSequence, cs: &ConstraintSet, inv: &InvariantSet) -> Admissibility {
    if let Some(rejection) = first_horizon_violation(ext, cs) {
        return Admissibility {
            admissible: false,
            rejection: Some(rejection),
        };
    }
    terminal_check(ext, inv)
}

fn first_horizon_violation(ext: &ExtendedSequence, cs: &ConstraintSet) -> Option<Rejection> {
    let last = ext.len().saturating_sub(1);
    for j in 0..last {
        let (x, u) = (ext.states[j].as_slice(), ext.inputs[j].as_slice());
        if cs.input_set.excess(u) > FEASIBILITY_TOL {
            return Some(Rejection {
                step: j,
                constraint: INPUT_SET_NAME.to_string(),
            });
        }
        if let Some(i) = cs.first_violation(x, u) {
            return Some(Rejection {
                step: j,
                constraint: cs.constraints[i].name.clone(),
            });
        }
    }
    None
}

fn terminal_check(ext: &ExtendedSequence, inv: &InvariantSet) -> Admissibility {
    let last = ext.len().saturating_sub(1);
    if inv.contains(&ext.states[last]) {
        Admissibility {
            admissible: true,
            rejection: None,
        }
    } else {
        Admissibility {
            admissible: false,
            rejection: Some(Rejection {
                step: last,
                constraint: TERMINAL_SET_NAME.to_string(),
            }),
        }
    }
}

/// Increment selection of the decaying rule, including the final clamp that
/// makes the running sum land on 1 exactly.
pub fn select_kappa_scalar(state: &GovernorState, cfg: &RgConfig, k: usize) -> f64 {
    let since = k.saturating_sub(state.k_prime);
    let mut kappa = if since <= cfg.n_a {
        cfg.kappa0
    } else {
        cfg.kappa0 / (since - cfg.n_a) as f64
    };
    if state.s + kappa > 1.0 {
        kappa = 1.0 - state.s;
    }
    kappa.max(0.0)
}

/// Per-step governor output.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub u: DVector<f64>,
    pub branch: Branch,
    pub kappa: f64,
    pub s: f64,
    pub v: DVector<f64>,
    pub solver_iterations: usize,
    pub solver_residual: f64,
    pub solve_time: Duration,
    pub rejection: Option<Rejection>,
}

/// Bundles the immutable problem data with the terminal-set cache.
#[derive(Debug, Clone)]
pub struct Governor {
    plant: LinearPlant,
    cs: ConstraintSet,
    mpc: MpcConfig,
    rg: RgConfig,
    model: Condensation,
    terminal: TerminalSetBuilder,
    predictor: Predictor,
}

impl Governor {
    pub fn new(
        plant: LinearPlant,
        cs: ConstraintSet,
        mpc: MpcConfig,
        rg: RgConfig,
        predictor: Predictor,
    ) -> Result<Self> {
        let horizon = match predictor {
            Predictor::Mpc => mpc.horizon,
            Predictor::SaturatedLqr => 0,
        };
        rg.validate(horizon)?;
        if cs.n != plant.n() || cs.m != plant.m() {
            return Err(Error::DimensionMismatch(
                "constraint set does not match the plant".to_string(),
            ));
        }
        let model = Condensation::new(&plant, &mpc)?;
        let terminal = TerminalSetBuilder::new(&plant, &mpc.k, rg.boundary_samples)?;
        Ok(Self {
            plant,
            cs,
            mpc,
            rg,
            model,
            terminal,
            predictor,
        })
    }

    pub fn plant(&self) -> &LinearPlant {
        &self.plant
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.cs
    }

    pub fn mpc_config(&self) -> &MpcConfig {
        &self.mpc
    }

    pub fn rg_config(&self) -> &RgConfig {
        &self.rg
    }

    pub fn predictor(&self) -> Predictor {
        self.predictor
    }

    pub fn terminal_sets(&mut self) -> &mut TerminalSetBuilder {
        &mut self.terminal
    }

    /// Solves the uMPC at `(x, ss)`, accepting the best iterate at the iteration cap.
    pub fn solve_mpc(
        &self,
        x: &DVector<f64>,
        ss: &SteadyStatePoint,
        warm_start: Option<&DVector<f64>>,
    ) -> Result<InputSequence> {
        let qp = self.model.condense(x, ss);
        let start = Instant::now();
        match solve_umpc(&qp, &self.cs, &self.mpc, warm_start) {
            Ok(seq) => Ok(seq),
            Err(Error::SolverMaxIterations {
                iterations,
                residual,
                best,
            }) => Ok(InputSequence::from_stacked(
                &best,
                self.model.m,
                iterations,
                residual,
                false,
                start.elapsed(),
            )),
            Err(e) => Err(e),
        }
    }

    fn predict(
        &self,
        x: &DVector<f64>,
        ss: &SteadyStatePoint,
        warm_start: Option<&DVector<f64>>,
    ) -> Result<(ExtendedSequence, Option<InputSequence>)> {
        let seq = match self.predictor {
            Predictor::Mpc => Some(self.solve_mpc(x, ss, warm_start)?),
            Predictor::SaturatedLqr => None,
        };
        let inputs: &[DVector<f64>] = seq.as_ref().map_or(&[], |s| &s.inputs);
        let ext = extend_sequence(&self.plant, inputs, x, ss, &self.mpc.k, self.rg.n_rg, &self.cs);
        Ok((ext, seq))
    }

    /// Horizon check first, terminal set only when the horizon passes.
    fn admissible(&mut self, ext: &ExtendedSequence) -> Admissibility {
        if let Some(rejection) = first_horizon_violation(ext, &self.cs) {
            return Admissibility {
                admissible: false,
                rejection: Some(rejection),
            };
        }
        match self.terminal.build(&self.cs, &ext.steady) {
            Ok(inv) => terminal_check(ext, &inv),
            Err(Error::DegenerateSet { constraint }) => Admissibility {
                admissible: false,
                rejection: Some(Rejection {
                    step: ext.len().saturating_sub(1),
                    constraint: format!("{TERMINAL_SET_NAME} ({constraint})"),
                }),
            },
            Err(e) => Admissibility {
                admissible: false,
                rejection: Some(Rejection {
                    step: 0,
                    constraint: e.to_string(),
                }),
            },
        }
    }

    /// Builds the initial governor state with `v0 = C x0` unless given, and
    /// verifies that `(x0, v0)` passes the admissibility test.
    pub fn init(
        &mut self,
        x0: &DVector<f64>,
        r: &DVector<f64>,
        v0: Option<&DVector<f64>>,
    ) -> Result<GovernorState> {
        let v0 = v0.cloned().unwrap_or_else(|| self.plant.output(x0));
        let ss = self
            .plant
            .steady_state(&self.cs, &v0)
            .map_err(|e| Error::InitializationInfeasible(format!("v0 has no steady state: {e}")))?;
        self.plant.steady_state(&self.cs, r)?;
        let (ext, seq) = self.predict(x0, &ss, None)?;
        let check = self.admissible(&ext);
        if !check.admissible {
            let why = check
                .rejection
                .map(|r| format!("`{}` fails at prediction step {}", r.constraint, r.step))
                .unwrap_or_default();
            return Err(Error::InitializationInfeasible(why));
        }
        let warm_start = seq.as_ref().map(|s| s.shifted(&ss.u_ss));
        // starting on the target leaves nothing to govern
        let s = if &v0 == r { 1.0 } else { 0.0 };
        Ok(GovernorState {
            v_dir: r - &v0,
            v_prev: v0.clone(),
            v0,
            r: r.clone(),
            k_prime: 0,
            stored_tail: ext.mpc_tail().to_vec(),
            kappa_history: Vec::new(),
            s,
            steady_prev: ss,
            warm_start,
        })
    }

    fn propose(&self, state: &GovernorState, k: usize) -> (DVector<f64>, f64, f64) {
        match &self.rg.strategy {
            Strategy::Scalar => {
                let kappa = select_kappa_scalar(state, &self.rg, k);
                let s_next = state.s + kappa;
                // sums like ten increments of 0.1 fall short of 1 by one ulp
                if s_next >= 1.0 - S_ROUNDOFF {
                    (state.r.clone(), 1.0 - state.s, 1.0)
                } else {
                    (&state.v0 + &state.v_dir * s_next, kappa, s_next)
                }
            }
            Strategy::Custom(schedule) => {
                let v = schedule.next(&state.v_prev, &state.v0, &state.r);
                let s_next = if v == state.r {
                    1.0
                } else {
                    schedule.progress(&v, &state.v0, &state.r).max(state.s)
                };
                (v, s_next - state.s, s_next)
            }
        }
    }

    /// One pass of the governed control loop at step `k` and state `x`.
    pub fn step(&mut self, k: usize, x: &DVector<f64>, state: &mut GovernorState) -> Result<StepOutcome> {
        let (v_plus, kappa, s_plus) = self.propose(state, k);
        let start = Instant::now();
        let candidate = self.plant.steady_state(&self.cs, &v_plus);

        let (mut iterations, mut residual) = (0, 0.0);
        let mut rejection = None;
        let mut accepted = None;
        match candidate {
            Ok(ss) => {
                let (ext, seq) = self.predict(x, &ss, state.warm_start.as_ref())?;
                if let Some(seq) = &seq {
                    iterations = seq.iterations;
                    residual = seq.residual;
                    state.warm_start = Some(seq.shifted(&ss.u_ss));
                }
                let check = self.admissible(&ext);
                if check.admissible {
                    accepted = Some((ext, ss));
                } else {
                    rejection = check.rejection;
                }
            }
            Err(e) => {
                rejection = Some(Rejection {
                    step: 0,
                    constraint: e.to_string(),
                });
            }
        }
        let solve_time = start.elapsed();

        let since = k.saturating_sub(state.k_prime);
        let (u, branch, kappa) = match accepted {
            Some((ext, ss)) => {
                state.v_prev = v_plus;
                state.s = s_plus;
                state.k_prime = k;
                state.stored_tail = ext.mpc_tail().to_vec();
                state.steady_prev = ss;
                (ext.inputs[0].clone(), Branch::Advance, kappa)
            }
            None if since < state.stored_tail.len() => {
                (state.stored_tail[since].clone(), Branch::Replay, 0.0)
            }
            None => (
                saturated_lqr(&self.cs, &self.mpc.k, x, &state.steady_prev),
                Branch::LqrFallback,
                0.0,
            ),
        };
        state.kappa_history.push(kappa);
        Ok(StepOutcome {
            u,
            branch,
            kappa,
            s: state.s,
            v: state.v_prev.clone(),
            solver_iterations: iterations,
            solver_residual: residual,
            solve_time,
            rejection,
        })
    }
}
