//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rgmpc_core::linalg::spectral_radius;
use rgmpc_core::mpc::{solve_cmpc, solve_umpc, Condensation, InputSequence, MpcConfig};
use rgmpc_core::plant::{Constraint, ConstraintSet, InputSet, LinearPlant, SteadyStatePoint};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Truncated Taylor series of the matrix exponential.
pub fn taylor_exp(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..terms {
        term = &term * m / k as f64;
        sum += &term;
    }
    sum
}

/// Element-by-element `A x + B u`.
pub fn naive_step(a: &DMatrix<f64>, b: &DMatrix<f64>, x: &[f64], u: &[f64]) -> Vec<f64> {
    let n = a.nrows();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += a[(i, j)] * x[j];
        }
        for j in 0..b.ncols() {
            acc += b[(i, j)] * u[j];
        }
        out[i] = acc;
    }
    out
}

/// Riccati recursion from `P = Q` until the update is below `tol`.
pub fn riccati_recursion(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
) -> DMatrix<f64> {
    let mut p = q.clone();
    for _ in 0..200_000 {
        let bt_p = b.transpose() * &p;
        let gain = (r + &bt_p * b).try_inverse().expect("R + B'PB invertible") * &bt_p * a;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * gain;
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).norm();
        p = next;
        if delta <= tol {
            return p;
        }
    }
    panic!("Riccati recursion did not settle");
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn random_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-scale..scale))
}

/// Random orthogonal matrix from the QR factor of a random square matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    random_matrix(rng, n, n, 1.0).qr().q()
}

/// Stacked prediction `x_1..x_N` for inputs `u`, by plain recursion.
pub fn rollout(a: &DMatrix<f64>, b: &DMatrix<f64>, x0: &DVector<f64>, u: &DVector<f64>) -> Vec<DVector<f64>> {
    let m = b.ncols();
    let mut x = x0.clone();
    let mut out = Vec::new();
    for blk in u.as_slice().chunks(m) {
        x = a * &x + b * DVector::from_column_slice(blk);
        out.push(x.clone());
    }
    out
}

/// Minimizes `1/2 u'Hu + f'u` subject to `G u <= h` by enumerating active
/// sets: every subset of at most `dim` rows is solved as an equality
/// constrained QP and the cheapest primal-feasible candidate wins.
pub fn enumerate_qp(h: &DMatrix<f64>, f: &DVector<f64>, g: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let dim = h.nrows();
    let rows = g.nrows();
    assert!(rows < 32);
    let objective = |u: &DVector<f64>| 0.5 * u.dot(&(h * u)) + f.dot(u);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << rows) {
        let active: Vec<usize> = (0..rows).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() > dim {
            continue;
        }
        let k = active.len();
        let mut kkt = DMatrix::zeros(dim + k, dim + k);
        kkt.view_mut((0, 0), (dim, dim)).copy_from(h);
        let mut b = DVector::zeros(dim + k);
        b.rows_mut(0, dim).copy_from(&(-f));
        for (j, &i) in active.iter().enumerate() {
            for c in 0..dim {
                kkt[(dim + j, c)] = g[(i, c)];
                kkt[(c, dim + j)] = g[(i, c)];
            }
            b[dim + j] = rhs[i];
        }
        let Some(sol) = kkt.lu().solve(&b) else { continue };
        let u = sol.rows(0, dim).into_owned();
        if !u.iter().all(|v| v.is_finite()) {
            continue;
        }
        let slack = g * &u - rhs;
        if slack.iter().any(|s| *s > 1e-9) {
            continue;
        }
        let val = objective(&u);
        if best.as_ref().is_none_or(|(bv, _)| val < *bv) {
            best = Some((val, u));
        }
    }
    best.map(|(_, u)| u)
}

/// Box `lo <= u <= hi` written as `G u <= h`.
pub fn box_rows(lo: &[f64], hi: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let d = lo.len();
    let mut g = DMatrix::zeros(2 * d, d);
    let mut h = DVector::zeros(2 * d);
    for i in 0..d {
        g[(2 * i, i)] = 1.0;
        h[2 * i] = hi[i];
        g[(2 * i + 1, i)] = -1.0;
        h[2 * i + 1] = -lo[i];
    }
    (g, h)
}

/// Condensed cost of the tracking problem, built from plain rollouts:
/// `sum_{i<N} |x_i - xs|_Q^2 + |u_i - us|_R^2 + |x_N - xs|_P^2`.
pub struct NaiveQp {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub c: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn naive_qp(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
    horizon: usize,
    x0: &DVector<f64>,
    xs: &DVector<f64>,
    us: &DVector<f64>,
) -> NaiveQp {
    let m = b.ncols();
    let d = m * horizon;
    let cost = |u: &DVector<f64>| -> f64 {
        let xs_pred = rollout(a, b, x0, u);
        let mut j = (x0 - xs).dot(&(q * (x0 - xs)));
        for i in 0..horizon {
            let du = u.rows(i * m, m) - us;
            j += du.dot(&(r * &du));
            let dx = &xs_pred[i] - xs;
            let w = if i + 1 == horizon { p } else { q };
            j += dx.dot(&(w * &dx));
        }
        j
    };
    // the cost is exactly quadratic, so finite differences of unit steps are exact
    let c = cost(&DVector::zeros(d));
    let mut h = DMatrix::zeros(d, d);
    let mut f = DVector::zeros(d);
    let e = |i: usize| {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    };
    for i in 0..d {
        let plus = cost(&e(i));
        let minus = cost(&(-e(i)));
        h[(i, i)] = plus + minus - 2.0 * c;
        f[i] = 0.5 * (plus - minus);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let both = cost(&(e(i) + e(j)));
            let val = both - c - f[i] - f[j] - 0.5 * (h[(i, i)] + h[(j, j)]);
            h[(i, j)] = val;
            h[(j, i)] = val;
        }
    }
    NaiveQp { h, f, c }
}

pub struct Instance {
    pub plant: LinearPlant,
    pub cfg: MpcConfig,
    pub cs: ConstraintSet,
    pub x: DVector<f64>,
    pub ss: SteadyStatePoint,
    pub bound: f64,
}

/// Random plant with `n` states, `m` inputs, one output, and a box input set
/// small enough that bounds are often active.
pub fn random_instance(r: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize, state_rows: Vec<Constraint>) -> Instance {
    loop {
        let raw = random_matrix(r, n, n, 1.0);
        let rho = spectral_radius(&raw).unwrap();
        if rho < 1e-3 {
            continue;
        }
        // spectral radius between strongly damped and mildly unstable
        let a = raw * (r.random_range(0.3..1.1) / rho);
        let b = random_matrix(r, n, m, 1.0);
        let c = random_matrix(r, 1, n, 1.0);
        let Ok(plant) = LinearPlant::new(a, b, c) else { continue };
        let bound = r.random_range(0.2..2.0);
        let cs = ConstraintSet::new(n, m, InputSet::symmetric_box(m, bound), state_rows.clone()).unwrap();
        let q = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| r.random_range(0.5..3.0)));
        let rw = DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| r.random_range(0.2..2.0)));
        let Ok(cfg) = MpcConfig::new(&plant, q, rw, horizon) else { continue };
        let Ok(ss) = plant.steady_state(&cs, &DVector::from_element(1, r.random_range(-0.5..0.5))) else {
            continue;
        };
        let x = random_vector(r, n, 3.0);
        return Instance { plant, cfg, cs, x, ss, bound };
    }
}

/// Stacked state constraints `a' x_j <= b` for `j = 1..N` as rows over `U`.
pub fn state_rows(plant: &LinearPlant, x0: &DVector<f64>, horizon: usize, a: &[f64], b: f64) -> (DMatrix<f64>, DVector<f64>) {
    let m = plant.m();
    let d = m * horizon;
    let av = DVector::from_column_slice(a);
    let free = rollout(plant.a(), plant.b(), x0, &DVector::zeros(d));
    let mut g = DMatrix::zeros(horizon, d);
    let mut h = DVector::zeros(horizon);
    for k in 0..d {
        let mut e = DVector::zeros(d);
        e[k] = 1.0;
        let forced = rollout(plant.a(), plant.b(), x0, &e);
        for j in 0..horizon {
            g[(j, k)] = av.dot(&(&forced[j] - &free[j]));
        }
    }
    for j in 0..horizon {
        h[j] = b - av.dot(&free[j]);
    }
    (g, h)
}

pub fn stack_rows(parts: &[(DMatrix<f64>, DVector<f64>)]) -> (DMatrix<f64>, DVector<f64>) {
    let rows: usize = parts.iter().map(|p| p.0.nrows()).sum();
    let cols = parts[0].0.ncols();
    let mut g = DMatrix::zeros(rows, cols);
    let mut h = DVector::zeros(rows);
    let mut at = 0;
    for (pg, ph) in parts {
        g.view_mut((at, 0), (pg.nrows(), cols)).copy_from(pg);
        h.rows_mut(at, ph.len()).copy_from(ph);
        at += pg.nrows();
    }
    (g, h)
}

/// Solves one random uMPC instance and compares it with enumeration.
pub fn check_umpc_against_enumeration(r: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize) -> f64 {
    let inst = random_instance(r, n, m, horizon, vec![]);
    let model = Condensation::new(&inst.plant, &inst.cfg).unwrap();
    let qp = model.condense(&inst.x, &inst.ss);
    let seq = solve_umpc(&qp, &inst.cs, &inst.cfg, None).unwrap();
    let d = m * horizon;
    let naive = naive_qp(
        inst.plant.a(),
        inst.plant.b(),
        &inst.cfg.q,
        &inst.cfg.r,
        &inst.cfg.p,
        horizon,
        &inst.x,
        &inst.ss.x_ss,
        &inst.ss.u_ss,
    );
    let (g, h) = box_rows(&vec![-inst.bound; d], &vec![inst.bound; d]);
    let oracle = enumerate_qp(&naive.h, &naive.f, &g, &h).expect("box QP is feasible");
    let got = seq.stacked();
    assert!(
        (&got - &oracle).amax() <= 1e-6,
        "n={n} m={m} N={horizon}: {got:?} vs {oracle:?}"
    );
    assert!(got.iter().all(|u| u.abs() <= inst.bound + 1e-10));
    (&got - &oracle).amax()
}

/// One random (2, 1, 3) instance with an `x1 <= limit` row: the enumeration
/// oracle and the cMPC solver result.
pub fn cmpc_case(r: &mut ChaCha8Rng) -> (Option<DVector<f64>>, rgmpc_core::Result<InputSequence>) {
    let a_row = vec![1.0, 0.0];
    let limit = r.random_range(-0.5..1.5);
    let row = Constraint::linear("x1-max", &a_row, &[0.0], limit);
    let inst = random_instance(r, 2, 1, 3, vec![row]);
    let naive = naive_qp(
        inst.plant.a(),
        inst.plant.b(),
        &inst.cfg.q,
        &inst.cfg.r,
        &inst.cfg.p,
        3,
        &inst.x,
        &inst.ss.x_ss,
        &inst.ss.u_ss,
    );
    let bx = box_rows(&[-inst.bound; 3], &[inst.bound; 3]);
    let st = state_rows(&inst.plant, &inst.x, 3, &a_row, limit);
    let (g, h) = stack_rows(&[bx, st]);
    let oracle = enumerate_qp(&naive.h, &naive.f, &g, &h);
    let got = solve_cmpc(&inst.plant, &inst.cfg, &inst.cs, &inst.x, &inst.ss);
    (oracle, got)
}
