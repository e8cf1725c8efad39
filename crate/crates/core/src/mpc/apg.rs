//! Accelerated projected gradient with function-value restart for
//! `min 1/2 u'Hu + f'u` over a product of per-step input sets.

use nalgebra::{DMatrix, DVector};

use crate::plant::InputSet;

#[derive(Debug, Clone)]
pub struct ApgOutcome {
    pub solution: DVector<f64>,
    pub iterations: usize,
    /// `||u - Proj(u - grad/L)||_inf` at the returned point.
    pub residual: f64,
    pub objective: f64,
    pub restarts: usize,
    pub converged: bool,
}

pub(crate) fn project_blocks(set: &InputSet, u: &mut DVector<f64>, m: usize) {
    for block in u.as_mut_slice().chunks_mut(m) {
        set.project_in_place(block);
    }
}

/// Fixed-point residual of the projected gradient map at `u` with gradient `g`.
pub fn fixed_point_residual(set: &InputSet, m: usize, u: &DVector<f64>, g: &DVector<f64>, step: f64) -> f64 {
    let mut trial = u - g * step;
    project_blocks(set, &mut trial, m);
    (u - trial).amax()
}

fn residual_into(set: &InputSet, m: usize, u: &DVector<f64>, g: &DVector<f64>, step: f64, scratch: &mut DVector<f64>) -> f64 {
    scratch.copy_from(u);
    scratch.axpy(-step, g, 1.0);
    project_blocks(set, scratch, m);
    u.iter().zip(scratch.iter()).fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
}

/// `H u + f` into `out`, using the symmetry of `H`: row `i` is column `i`.
fn gradient_into(hessian: &DMatrix<f64>, linear: &DVector<f64>, u: &DVector<f64>, out: &mut DVector<f64>) {
    let n = u.len();
    let h = hessian.as_slice();
    let u = u.as_slice();
    for (i, (o, f)) in out.iter_mut().zip(linear.iter()).enumerate() {
        *o = f + dot(&h[i * n..(i + 1) * n], u);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, ra) = a.split_at(a.len() - a.len() % 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[allow(clippy::too_many_arguments)]
pub fn solve(
    hessian: &DMatrix<f64>,
    linear: &DVector<f64>,
    lipschitz: f64,
    set: &InputSet,
    m: usize,
    warm_start: &DVector<f64>,
    tolerance: f64,
    max_iterations: usize,
) -> ApgOutcome {
    let step = 1.0 / lipschitz;
    // 1/2 u'Hu + f'u from the gradient Hu + f
    let objective_of = |u: &DVector<f64>, grad: &DVector<f64>| 0.5 * (u.dot(grad) + u.dot(linear));
    let dim = warm_start.len();
    let mut scratch = DVector::zeros(dim);

    let mut x = warm_start.clone();
    project_blocks(set, &mut x, m);
    let mut grad_x = DVector::zeros(dim);
    gradient_into(hessian, linear, &x, &mut grad_x);
    let mut fx = objective_of(&x, &grad_x);
    let mut residual = residual_into(set, m, &x, &grad_x, step, &mut scratch);
    if residual <= tolerance {
        return ApgOutcome {
            solution: x,
            iterations: 0,
            residual,
            objective: fx,
            restarts: 0,
            converged: true,
        };
    }

    let mut y = x.clone();
    let mut grad_y = grad_x.clone();
    let mut t = 1.0f64;
    let mut restarts = 0;
    let mut best = x.clone();
    let (mut best_f, mut best_res) = (fx, residual);
    let mut next = DVector::zeros(dim);
    let mut grad_next = DVector::zeros(dim);

    for it in 1..=max_iterations {
        next.copy_from(&y);
        next.axpy(-step, &grad_y, 1.0);
        project_blocks(set, &mut next, m);

        gradient_into(hessian, linear, &next, &mut grad_next);
        let f_next = objective_of(&next, &grad_next);
        residual = residual_into(set, m, &next, &grad_next, step, &mut scratch);

        if f_next <= best_f {
            best.copy_from(&next);
            best_f = f_next;
            best_res = residual;
        }
        if residual <= tolerance {
            return ApgOutcome {
                solution: next,
                iterations: it,
                residual,
                objective: f_next,
                restarts,
                converged: true,
            };
        }

        // a step without momentum (t == 1) is a plain projected gradient step
        // and is always kept, so rounding noise in f cannot stall the method
        if f_next > fx && t > 1.0 {
            // restart momentum from the last accepted point
            restarts += 1;
            t = 1.0;
            y.copy_from(&x);
            grad_y.copy_from(&grad_x);
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        // y = next + beta (next - x)
        y.copy_from(&next);
        y.axpy(beta, &next, 1.0);
        y.axpy(-beta, &x, 1.0);
        grad_y.copy_from(&grad_next);
        grad_y.axpy(beta, &grad_next, 1.0);
        grad_y.axpy(-beta, &grad_x, 1.0);
        std::mem::swap(&mut x, &mut next);
        std::mem::swap(&mut grad_x, &mut grad_next);
        fx = f_next;
        t = t_next;
    }

    ApgOutcome {
        solution: best,
        iterations: max_iterations,
        residual: best_res,
        objective: best_f,
        restarts,
        converged: false,
    }
}
