//! Dual active-set method (Goldfarb-Idnani) for strictly convex QPs
//!
//! ```text
//! min 1/2 x'Gx + a'x   s.t.   n_j' x >= b_j
//! ```
//!
//! The method starts from the unconstrained minimizer and adds the most
//! violated constraint at each outer step, keeping the factorization
//! `J' N = [R; 0]` with `J J' = G^-1` up to date through Givens rotations.

use nalgebra::{DMatrix, DVector};

/// Normal vector of one inequality row.
pub enum Normal<'a> {
    /// `sign * e_index`
    Unit { index: usize, sign: f64 },
    Dense(&'a DVector<f64>),
}

impl Normal<'_> {
    fn dot(&self, v: &DVector<f64>) -> f64 {
        match self {
            Normal::Unit { index, sign } => sign * v[*index],
            Normal::Dense(n) => n.dot(v),
        }
    }
}

pub trait InequalityRows {
    fn len(&self) -> usize;
    /// `s_j = n_j' x - b_j` for every row (non-negative when feasible).
    fn slacks(&self, x: &DVector<f64>, out: &mut [f64]);
    fn normal(&self, j: usize) -> Normal<'_>;
    /// `b_j`
    fn offset(&self, j: usize) -> f64;
    /// Euclidean norm of `n_j`, used to rank violations.
    fn normal_norm(&self, j: usize) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveSetStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct ActiveSetOutcome {
    pub x: DVector<f64>,
    pub status: ActiveSetStatus,
    /// `(row, multiplier)` for the final active set.
    pub active: Vec<(usize, f64)>,
    pub iterations: usize,
    /// Largest scaled constraint violation at `x`.
    pub max_violation: f64,
}

/// `J0 = L^-T` where `G = L L'`.
pub fn inverse_factor(hessian: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(hessian.clone())?;
    let l = chol.l();
    let n = l.nrows();
    let linv = l.solve_lower_triangular(&DMatrix::identity(n, n))?;
    Some(linv.transpose())
}

#[inline]
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

#[inline]
fn rotate_columns(j: &mut DMatrix<f64>, c1: usize, c2: usize, c: f64, s: f64) {
    let n = j.nrows();
    let (left, right) = j.as_mut_slice().split_at_mut(c2 * n);
    let col1 = &mut left[c1 * n..c1 * n + n];
    let col2 = &mut right[..n];
    for (a, b) in col1.iter_mut().zip(col2.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x + s * y;
        *b = -s * x + c * y;
    }
}

struct Factor {
    j: DMatrix<f64>,
    /// Upper triangular, column `k` belongs to `active[k]`.
    r: DMatrix<f64>,
    q: usize,
}

impl Factor {
    fn d_for(&self, normal: &Normal<'_>) -> DVector<f64> {
        match normal {
            Normal::Unit { index, sign } => self.j.row(*index).transpose() * *sign,
            Normal::Dense(v) => self.j.tr_mul(v),
        }
    }

    /// Appends a constraint whose `d = J' n` is given.
    fn add(&mut self, mut d: DVector<f64>) -> bool {
        let n = self.j.nrows();
        let q = self.q;
        for k in (q + 1..n).rev() {
            if d[k] == 0.0 {
                continue;
            }
            let (c, s, h) = givens(d[k - 1], d[k]);
            d[k - 1] = h;
            d[k] = 0.0;
            rotate_columns(&mut self.j, k - 1, k, c, s);
        }
        let scale = d.rows(0, q + 1).amax().max(1.0);
        if d[q].abs() <= 1e-14 * scale {
            return false;
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.q += 1;
        true
    }

    /// Removes the active constraint at position `l` and restores triangularity.
    fn drop(&mut self, l: usize) {
        let q = self.q;
        for col in l..q - 1 {
            for i in 0..=col + 1 {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for k in l..q - 1 {
            let (c, s, h) = givens(self.r[(k, k)], self.r[(k + 1, k)]);
            self.r[(k, k)] = h;
            self.r[(k + 1, k)] = 0.0;
            for col in k + 1..q - 1 {
                let (x, y) = (self.r[(k, col)], self.r[(k + 1, col)]);
                self.r[(k, col)] = c * x + s * y;
                self.r[(k + 1, col)] = -s * x + c * y;
            }
            rotate_columns(&mut self.j, k, k + 1, c, s);
        }
        self.q -= 1;
    }

    /// Solves `R r = d[0..q]`.
    fn back_substitute(&self, d: &DVector<f64>) -> Vec<f64> {
        let q = self.q;
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut s = d[i];
            for k in i + 1..q {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        r
    }

    /// `J[:, q..] d[q..]`
    fn primal_direction(&self, d: &DVector<f64>) -> DVector<f64> {
        let n = self.j.nrows();
        let q = self.q;
        if q == n {
            return DVector::zeros(n);
        }
        self.j.columns(q, n - q) * d.rows(q, n - q)
    }
}

/// Solves the QP. `j0` is [`inverse_factor`] of the Hessian.
pub fn solve<C: InequalityRows>(
    j0: &DMatrix<f64>,
    linear: &DVector<f64>,
    rows: &C,
    tolerance: f64,
    max_iterations: usize,
) -> ActiveSetOutcome {
    let n = j0.nrows();
    let mut factor = Factor {
        j: j0.clone(),
        r: DMatrix::zeros(n, n),
        q: 0,
    };
    // unconstrained minimizer -J J' a
    let mut x = -(j0 * j0.tr_mul(linear));
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut slacks = vec![0.0; rows.len()];
    let mut iterations = 0;

    let mut is_active = vec![false; rows.len()];

    let most_violated = |x: &DVector<f64>, slacks: &mut [f64], is_active: &[bool]| {
        rows.slacks(x, slacks);
        let mut worst = (usize::MAX, -tolerance);
        for (j, s) in slacks.iter().enumerate() {
            let scaled = s / rows.normal_norm(j).max(1e-300);
            if scaled < worst.1 && !is_active[j] {
                worst = (j, scaled);
            }
        }
        worst
    };

    loop {
        let (p, _) = most_violated(&x, &mut slacks, &is_active);
        if p == usize::MAX {
            let max_violation = max_scaled_violation(rows, &slacks);
            return ActiveSetOutcome {
                x,
                status: ActiveSetStatus::Optimal,
                active: active.into_iter().zip(mult).collect(),
                iterations,
                max_violation,
            };
        }
        let normal = rows.normal(p);
        let mut u_new = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iterations {
                rows.slacks(&x, &mut slacks);
                let max_violation = max_scaled_violation(rows, &slacks);
                return ActiveSetOutcome {
                    x,
                    status: ActiveSetStatus::IterationLimit,
                    active: active.into_iter().zip(mult).collect(),
                    iterations,
                    max_violation,
                };
            }
            let d = factor.d_for(&normal);
            let z = factor.primal_direction(&d);
            let r = factor.back_substitute(&d);

            // largest dual step keeping the multipliers non-negative
            let mut t1 = f64::INFINITY;
            let mut drop_at = usize::MAX;
            for (k, rk) in r.iter().enumerate() {
                if *rk > 0.0 {
                    let ratio = mult[k] / rk;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = k;
                    }
                }
            }
            let znorm = z.amax();
            let zn = normal.dot(&z);
            let s_p = normal.dot(&x) - rows.offset(p);
            let t2 = if znorm > 1e-14 && zn > 1e-14 * (1.0 + rows.normal_norm(p)) {
                -s_p / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if t.is_infinite() {
                rows.slacks(&x, &mut slacks);
                let max_violation = max_scaled_violation(rows, &slacks);
                return ActiveSetOutcome {
                    x,
                    status: ActiveSetStatus::Infeasible,
                    active: active.into_iter().zip(mult).collect(),
                    iterations,
                    max_violation,
                };
            }
            if t2.is_infinite() {
                // dual step only
                for (mk, rk) in mult.iter_mut().zip(&r) {
                    *mk -= t * rk;
                }
                u_new += t;
                factor.drop(drop_at);
                is_active[active.remove(drop_at)] = false;
                mult.remove(drop_at);
                continue;
            }
            x.axpy(t, &z, 1.0);
            for (mk, rk) in mult.iter_mut().zip(&r) {
                *mk -= t * rk;
            }
            u_new += t;
            if t2 <= t1 {
                if factor.add(d) {
                    is_active[p] = true;
                    active.push(p);
                    mult.push(u_new);
                }
                break;
            }
            factor.drop(drop_at);
            is_active[active.remove(drop_at)] = false;
            mult.remove(drop_at);
        }
    }
}

fn max_scaled_violation<C: InequalityRows>(rows: &C, slacks: &[f64]) -> f64 {
    slacks
        .iter()
        .enumerate()
        .map(|(j, s)| -s / rows.normal_norm(j).max(1e-300))
        .fold(0.0, f64::max)
}
