use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{ensure_spd, max_symmetric_eigenvalue, solve_dare};
use crate::plant::{LinearPlant, SteadyStatePoint};

/// Weights and solver settings for the short-horizon tracking MPC.
#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Terminal weight, the DARE solution unless overridden.
    pub p: DMatrix<f64>,
    /// LQR gain from the same DARE.
    pub k: DMatrix<f64>,
    pub horizon: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
}

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITERATIONS: usize = 5_000;

impl MpcConfig {
    pub fn new(plant: &LinearPlant, q: DMatrix<f64>, r: DMatrix<f64>, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("MPC horizon must be positive".to_string()));
        }
        let dare = solve_dare(plant.a(), plant.b(), &q, &r)?;
        Ok(Self {
            q,
            r,
            p: dare.p,
            k: dare.k,
            horizon,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        })
    }

    pub fn with_terminal_weight(mut self, p: DMatrix<f64>) -> Result<Self> {
        ensure_spd(&p, "P")?;
        if p.shape() != self.q.shape() {
            return Err(Error::DimensionMismatch("terminal weight must be n x n".to_string()));
        }
        self.p = p;
        Ok(self)
    }

    pub fn with_tolerance(mut self, tolerance: f64, max_iterations: usize) -> Self {
        self.tolerance = tolerance;
        self.max_iterations = max_iterations;
        self
    }
}

/// State elimination for a fixed plant and configuration.
///
/// Stacked predicted states `X = [xi_1; ...; xi_N] = Phi x + Gamma U`, and the
/// cost becomes `J(U) = 1/2 U' H U + f' U + c`.
#[derive(Debug, Clone)]
pub struct Condensation {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub hessian: DMatrix<f64>,
    /// Largest eigenvalue of `H`.
    pub lipschitz: f64,
    q: DMatrix<f64>,
    qbar_diag_blocks: Vec<DMatrix<f64>>,
    r: DMatrix<f64>,
    wx: DMatrix<f64>,
    wxs: DMatrix<f64>,
    wus: DMatrix<f64>,
}

impl Condensation {
    pub fn new(plant: &LinearPlant, cfg: &MpcConfig) -> Result<Self> {
        let (n, m, nh) = (plant.n(), plant.m(), cfg.horizon);
        if cfg.q.shape() != (n, n) || cfg.r.shape() != (m, m) || cfg.p.shape() != (n, n) {
            return Err(Error::DimensionMismatch("MPC weights do not match the plant".to_string()));
        }
        let a = plant.a();
        let b = plant.b();

        let mut phi = DMatrix::zeros(n * nh, n);
        let mut gamma = DMatrix::zeros(n * nh, m * nh);
        let mut apow = a.clone();
        // A^(i-j) B blocks
        let mut ab = Vec::with_capacity(nh);
        ab.push(b.clone());
        for i in 1..nh {
            let next = a * &ab[i - 1];
            ab.push(next);
        }
        for i in 0..nh {
            phi.view_mut((i * n, 0), (n, n)).copy_from(&apow);
            apow = a * &apow;
            for j in 0..=i {
                gamma
                    .view_mut((i * n, j * m), (n, m))
                    .copy_from(&ab[i - j]);
            }
        }

        let qbar_diag_blocks: Vec<DMatrix<f64>> = (0..nh)
            .map(|i| if i + 1 == nh { cfg.p.clone() } else { cfg.q.clone() })
            .collect();
        // Qbar * Gamma and Qbar * Phi, block by block
        let mut qg = DMatrix::zeros(n * nh, m * nh);
        let mut qp = DMatrix::zeros(n * nh, n);
        let mut qs = DMatrix::zeros(n * nh, n);
        for (i, w) in qbar_diag_blocks.iter().enumerate() {
            qg.view_mut((i * n, 0), (n, m * nh))
                .copy_from(&(w * gamma.view((i * n, 0), (n, m * nh))));
            qp.view_mut((i * n, 0), (n, n))
                .copy_from(&(w * phi.view((i * n, 0), (n, n))));
            qs.view_mut((i * n, 0), (n, n)).copy_from(w);
        }
        let gt = gamma.transpose();
        let mut hessian = &gt * &qg * 2.0;
        for i in 0..nh {
            let mut blk = hessian.view_mut((i * m, i * m), (m, m));
            blk += &cfg.r * 2.0;
        }
        crate::linalg::symmetrize(&mut hessian);
        let lipschitz = max_symmetric_eigenvalue(&hessian);

        let wx = &gt * &qp * 2.0;
        let wxs = &gt * &qs * 2.0;
        let mut wus = DMatrix::zeros(m * nh, m);
        for i in 0..nh {
            wus.view_mut((i * m, 0), (m, m)).copy_from(&(&cfg.r * 2.0));
        }

        Ok(Self {
            n,
            m,
            horizon: nh,
            phi,
            gamma,
            hessian,
            lipschitz,
            q: cfg.q.clone(),
            qbar_diag_blocks,
            r: cfg.r.clone(),
            wx,
            wxs,
            wus,
        })
    }

    /// Linear and constant terms of the QP at state `x` for steady state `ss`.
    pub fn condense<'a>(&'a self, x: &DVector<f64>, ss: &SteadyStatePoint) -> CondensedQp<'a> {
        let (n, nh) = (self.n, self.horizon);
        let mut linear = &self.wx * x;
        linear.gemv(-1.0, &self.wxs, &ss.x_ss, 1.0);
        linear.gemv(-1.0, &self.wus, &ss.u_ss, 1.0);

        let dx = x - &ss.x_ss;
        let mut constant = dx.dot(&(&self.q * &dx));
        let d0 = &self.phi * x;
        for i in 0..nh {
            let di = d0.rows(i * n, n) - &ss.x_ss;
            constant += di.dot(&(&self.qbar_diag_blocks[i] * &di));
        }
        constant += nh as f64 * ss.u_ss.dot(&(&self.r * &ss.u_ss));
        CondensedQp {
            model: self,
            linear,
            constant,
            x0: x.clone(),
            steady: ss.clone(),
        }
    }

    /// Stacked predicted states `xi_1..xi_N` for the stacked inputs `u`.
    pub fn predict(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.phi * x;
        out.gemv(1.0, &self.gamma, u, 1.0);
        out
    }
}

/// The uMPC optimal control problem at one `(x, v)` pair.
#[derive(Debug, Clone)]
pub struct CondensedQp<'a> {
    pub model: &'a Condensation,
    pub linear: DVector<f64>,
    pub constant: f64,
    pub x0: DVector<f64>,
    pub steady: SteadyStatePoint,
}

impl CondensedQp<'_> {
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.model.hessian * u)) + self.linear.dot(u) + self.constant
    }

    pub fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut g = self.linear.clone();
        g.gemv(1.0, &self.model.hessian, u, 1.0);
        g
    }

    pub fn stacked_steady_input(&self) -> DVector<f64> {
        stack_repeat(&self.steady.u_ss, self.model.horizon)
    }
}

pub(crate) fn stack_repeat(v: &DVector<f64>, times: usize) -> DVector<f64> {
    DVector::from_iterator(v.len() * times, (0..times).flat_map(|_| v.iter().copied()))
}

/// Tracking cost evaluated by explicit rollout, including the terminal term.
pub fn umpc_cost(
    plant: &LinearPlant,
    cfg: &MpcConfig,
    inputs: &[DVector<f64>],
    x: &DVector<f64>,
    ss: &SteadyStatePoint,
) -> f64 {
    let mut xi = x.clone();
    let mut cost = 0.0;
    for u in inputs {
        let dx = &xi - &ss.x_ss;
        let du = u - &ss.u_ss;
        cost += dx.dot(&(&cfg.q * &dx)) + du.dot(&(&cfg.r * &du));
        xi = plant.step(&xi, u);
    }
    let dx = &xi - &ss.x_ss;
    cost + dx.dot(&(&cfg.p * &dx))
}
