//! Input-constrained tracking MPC (uMPC) and the fully constrained cMPC baseline.

pub mod active_set;
pub mod apg;
mod condense;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

pub use condense::{
    umpc_cost, CondensedQp, Condensation, MpcConfig, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE,
};

use crate::error::{Error, Result};
use crate::plant::{ConstraintSet, InputSet, LinearPlant, SteadyStatePoint};
use active_set::{ActiveSetStatus, InequalityRows, Normal};

/// Optimal input sequence together with solver diagnostics.
#[derive(Debug, Clone)]
pub struct InputSequence {
    pub inputs: Vec<DVector<f64>>,
    pub iterations: usize,
    /// Fixed-point residual (uMPC) or KKT residual (cMPC).
    pub residual: f64,
    pub converged: bool,
    pub solve_time: Duration,
}

impl InputSequence {
    pub fn from_stacked(
        stacked: &DVector<f64>,
        m: usize,
        iterations: usize,
        residual: f64,
        converged: bool,
        solve_time: Duration,
    ) -> Self {
        let inputs = stacked
            .as_slice()
            .chunks(m)
            .map(DVector::from_column_slice)
            .collect();
        Self {
            inputs,
            iterations,
            residual,
            converged,
            solve_time,
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.inputs.iter().map(|u| u.len()).sum(),
            self.inputs.iter().flat_map(|u| u.iter().copied()),
        )
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Drops the first input and pads with `u_ss`.
    pub fn shifted(&self, u_ss: &DVector<f64>) -> DVector<f64> {
        let m = u_ss.len();
        let mut out = self.stacked();
        let total = out.len();
        if total >= m {
            out.as_mut_slice().copy_within(m.., 0);
            out.rows_mut(total - m, m).copy_from(u_ss);
        }
        out
    }
}

/// Solves the uMPC problem by accelerated projected gradient.
///
/// `warm_start` defaults to the stacked steady-state input. When the iteration
/// cap is hit the best iterate comes back inside [`Error::SolverMaxIterations`].
pub fn solve_umpc(
    qp: &CondensedQp<'_>,
    cs: &ConstraintSet,
    cfg: &MpcConfig,
    warm_start: Option<&DVector<f64>>,
) -> Result<InputSequence> {
    let model = qp.model;
    let start = Instant::now();
    let default_start;
    let warm = match warm_start {
        Some(w) if w.len() == model.m * model.horizon => w,
        Some(w) => {
            return Err(Error::DimensionMismatch(format!(
                "warm start has length {}, expected {}",
                w.len(),
                model.m * model.horizon
            )))
        }
        None => {
            default_start = qp.stacked_steady_input();
            &default_start
        }
    };
    let out = apg::solve(
        &model.hessian,
        &qp.linear,
        model.lipschitz,
        &cs.input_set,
        model.m,
        warm,
        cfg.tolerance,
        cfg.max_iterations,
    );
    if !out.converged {
        return Err(Error::SolverMaxIterations {
            iterations: out.iterations,
            residual: out.residual,
            best: out.solution,
        });
    }
    Ok(InputSequence::from_stacked(
        &out.solution,
        model.m,
        out.iterations,
        out.residual,
        true,
        start.elapsed(),
    ))
}

#[derive(Debug, Clone)]
struct StateRow {
    step: usize,
    a_x: DVector<f64>,
    a_u: DVector<f64>,
    b: f64,
}

/// Condensed cMPC: the uMPC QP plus stacked linear state/input constraints
/// over the horizon, solved by a dual active-set method.
#[derive(Debug, Clone)]
pub struct CmpcProblem {
    pub model: Condensation,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    j0: DMatrix<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<StateRow>,
    normals: Vec<DVector<f64>>,
    norms: Vec<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl CmpcProblem {
    pub fn new(plant: &LinearPlant, cfg: &MpcConfig, cs: &ConstraintSet) -> Result<Self> {
        let (lower, upper) = match &cs.input_set {
            InputSet::Box { lower, upper } => (lower.clone(), upper.clone()),
            InputSet::Ball { .. } => {
                return Err(Error::InvalidArgument(
                    "cMPC requires a box input set".to_string(),
                ))
            }
        };
        if !cs.is_polyhedral() {
            return Err(Error::InvalidArgument(
                "cMPC requires linear state constraints".to_string(),
            ));
        }
        let model = Condensation::new(plant, cfg)?;
        let (n, m, nh) = (model.n, model.m, model.horizon);
        let j0 = active_set::inverse_factor(&model.hessian).ok_or_else(|| {
            Error::InvalidArgument("condensed Hessian is not positive definite".to_string())
        })?;

        let mut rows = Vec::new();
        for step in 0..=nh {
            for c in &cs.constraints {
                let (a, b) = c.linear_form().expect("polyhedral set");
                let a_x = DVector::from_column_slice(&a[..n]);
                let a_u = DVector::from_column_slice(&a[n..]);
                let has_input = a_u.iter().any(|v| *v != 0.0);
                let has_state = a_x.iter().any(|v| *v != 0.0);
                // the current state is fixed; inputs do not exist at the terminal step
                if (step == 0 && !has_input) || (step == nh && has_input) || (!has_input && !has_state) {
                    continue;
                }
                rows.push(StateRow { step, a_x, a_u, b });
            }
        }
        let normals: Vec<DVector<f64>> = rows
            .iter()
            .map(|row| {
                let mut nrm = DVector::zeros(m * nh);
                if row.step >= 1 {
                    let g = model.gamma.rows((row.step - 1) * n, n);
                    nrm -= g.tr_mul(&row.a_x);
                }
                if row.step < nh {
                    let mut blk = nrm.rows_mut(row.step * m, m);
                    blk -= &row.a_u;
                }
                nrm
            })
            .collect();
        let mut norms = vec![1.0; 2 * m * nh];
        norms.extend(normals.iter().map(|v| v.norm()));
        Ok(Self {
            model,
            a: plant.a().clone(),
            b: plant.b().clone(),
            j0,
            lower: (0..nh).flat_map(|_| lower.iter().copied()).collect(),
            upper: (0..nh).flat_map(|_| upper.iter().copied()).collect(),
            rows,
            normals,
            norms,
            tolerance: 1e-9,
            max_iterations: 50_000,
        })
    }

    pub fn constraint_count(&self) -> usize {
        self.norms.len()
    }

    /// Solves the OCP at `(x, ss)`. An empty feasible set yields [`Error::InfeasibleOcp`].
    pub fn solve(&self, x: &DVector<f64>, ss: &SteadyStatePoint) -> Result<InputSequence> {
        let start = Instant::now();
        let qp = self.model.condense(x, ss);
        let n = self.model.n;
        let offsets: Vec<f64> = {
            let phi_x = &self.model.phi * x;
            self.rows
                .iter()
                .map(|row| {
                    let xi = if row.step == 0 {
                        x.clone()
                    } else {
                        phi_x.rows((row.step - 1) * n, n).into_owned()
                    };
                    row.b - row.a_x.dot(&xi)
                })
                .collect()
        };
        let rows = CmpcRows {
            problem: self,
            x0: x,
            offsets,
        };
        let out = active_set::solve(
            &self.j0,
            &qp.linear,
            &rows,
            self.tolerance,
            self.max_iterations,
        );
        match out.status {
            ActiveSetStatus::Infeasible => {
                return Err(Error::InfeasibleOcp(format!(
                    "no input sequence satisfies the stacked constraints (violation {:.3e})",
                    out.max_violation
                )))
            }
            ActiveSetStatus::IterationLimit => {
                return Err(Error::NoConvergence {
                    what: "dual active-set QP",
                    iterations: out.iterations,
                    residual: out.max_violation,
                })
            }
            ActiveSetStatus::Optimal => {}
        }
        // stationarity: H u + f - sum(lambda_j n_j)
        let mut stat = qp.gradient(&out.x);
        for &(j, lambda) in &out.active {
            match rows.normal(j) {
                Normal::Unit { index, sign } => stat[index] -= lambda * sign,
                Normal::Dense(v) => stat.axpy(-lambda, v, 1.0),
            }
        }
        let residual = stat.amax().max(out.max_violation);
        let mut stacked = out.x;
        // clip round-off outside the input box
        for ((u, lo), hi) in stacked.iter_mut().zip(&self.lower).zip(&self.upper) {
            *u = u.clamp(*lo, *hi);
        }
        Ok(InputSequence::from_stacked(
            &stacked,
            self.model.m,
            out.iterations,
            residual,
            true,
            start.elapsed(),
        ))
    }
}

struct CmpcRows<'a> {
    problem: &'a CmpcProblem,
    x0: &'a DVector<f64>,
    /// `b - a_x' Phi_i x` for each state row; the input-free part of the slack.
    offsets: Vec<f64>,
}

impl InequalityRows for CmpcRows<'_> {
    fn len(&self) -> usize {
        self.problem.norms.len()
    }

    fn slacks(&self, u: &DVector<f64>, out: &mut [f64]) {
        let p = self.problem;
        let nb = p.lower.len();
        for i in 0..nb {
            out[2 * i] = u[i] - p.lower[i];
            out[2 * i + 1] = p.upper[i] - u[i];
        }
        let m = p.model.m;
        let nh = p.model.horizon;
        // states xi_0..xi_N by rollout
        let mut states = Vec::with_capacity(nh + 1);
        states.push(self.x0.clone());
        for i in 0..nh {
            let ui = u.rows(i * m, m);
            let mut next = &p.a * &states[i];
            next.gemv(1.0, &p.b, &ui, 1.0);
            states.push(next);
        }
        for (k, row) in p.rows.iter().enumerate() {
            let mut g = row.a_x.dot(&states[row.step]);
            if row.step < nh {
                g += row.a_u.dot(&u.rows(row.step * m, m));
            }
            out[2 * nb + k] = row.b - g;
        }
    }

    fn normal(&self, j: usize) -> Normal<'_> {
        let nb = self.problem.lower.len();
        if j < 2 * nb {
            Normal::Unit {
                index: j / 2,
                sign: if j % 2 == 0 { 1.0 } else { -1.0 },
            }
        } else {
            Normal::Dense(&self.problem.normals[j - 2 * nb])
        }
    }

    fn offset(&self, j: usize) -> f64 {
        let p = self.problem;
        let nb = p.lower.len();
        if j < 2 * nb {
            if j % 2 == 0 {
                p.lower[j / 2]
            } else {
                -p.upper[j / 2]
            }
        } else {
            // n' u - offset = b - a_x' Phi x - a' (Gamma u, u)
            -self.offsets[j - 2 * nb]
        }
    }

    fn normal_norm(&self, j: usize) -> f64 {
        self.problem.norms[j]
    }
}

/// Convenience wrapper building the cMPC problem for a single solve.
pub fn solve_cmpc(
    plant: &LinearPlant,
    cfg: &MpcConfig,
    cs: &ConstraintSet,
    x: &DVector<f64>,
    ss: &SteadyStatePoint,
) -> Result<InputSequence> {
    CmpcProblem::new(plant, cfg, cs)?.solve(x, ss)
}
