//! Lyapunov-sublevel terminal sets `{x : (x - x_ss)' P (x - x_ss) <= c}` for
//! the unsaturated LQR closed loop.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{max_symmetric_eigenvalue, solve_discrete_lyapunov};
use crate::plant::{ConstraintKind, ConstraintSet, InputSet, LinearPlant, SteadyStatePoint, FEASIBILITY_TOL};

pub const DEFAULT_BOUNDARY_SAMPLES: usize = 2_000;
const BISECTION_TOL: f64 = 1e-6;
const SAMPLE_SEED: u64 = 0x5eed_0f_e111;
const REFINE_STARTS: usize = 6;
const REFINE_STEPS: usize = 40;
const LEVEL_CAP: f64 = 1e12;
const KEY_QUANTUM: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct InvariantSet {
    pub center: DVector<f64>,
    pub p: DMatrix<f64>,
    pub level: f64,
}

impl InvariantSet {
    /// `(x - x_ss)' P (x - x_ss)`
    pub fn lyapunov_value(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.center;
        d.dot(&(&self.p * &d))
    }

    /// Membership with the feasibility tolerance counted as inside.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.lyapunov_value(x) <= self.level + FEASIBILITY_TOL
    }
}

/// Computes sublevel sets for a fixed plant, gain and constraint set.
///
/// `P` does not depend on the reference, so only the level is recomputed
/// when the center moves; levels are cached per reference.
#[derive(Debug, Clone)]
pub struct TerminalSetBuilder {
    k: DMatrix<f64>,
    p: DMatrix<f64>,
    p_inv: DMatrix<f64>,
    /// `L^-1` with `P = L L'`
    l_inv: DMatrix<f64>,
    /// `L^-T d` for unit directions `d`
    boundary: Vec<DVector<f64>>,
    directions: Vec<DVector<f64>>,
    cache: HashMap<Vec<i64>, Option<f64>>,
}

impl TerminalSetBuilder {
    pub fn new(plant: &LinearPlant, k: &DMatrix<f64>, samples: usize) -> Result<Self> {
        let acl = plant.a() - plant.b() * k;
        let p = solve_discrete_lyapunov(&acl)?;
        let chol = nalgebra::Cholesky::new(p.clone())
            .ok_or_else(|| Error::InvalidArgument("Lyapunov matrix is not positive definite".to_string()))?;
        let n = p.nrows();
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::InvalidArgument("singular Lyapunov factor".to_string()))?;
        let p_inv = l_inv.tr_mul(&l_inv);
        let l_inv_t = l_inv.transpose();

        let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
        let directions: Vec<DVector<f64>> = (0..samples.max(1))
            .map(|_| loop {
                let d: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                let norm = d.norm();
                if norm > 1e-12 {
                    break d / norm;
                }
            })
            .collect();
        let boundary = directions.iter().map(|d| &l_inv_t * d).collect();
        Ok(Self {
            k: k.clone(),
            p,
            p_inv,
            l_inv,
            boundary,
            directions,
            cache: HashMap::new(),
        })
    }

    pub fn lyapunov_matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// The set centered at `x_ss(v)`, from the cache when available.
    pub fn build(&mut self, cs: &ConstraintSet, ss: &SteadyStatePoint) -> Result<InvariantSet> {
        let key: Vec<i64> = ss.r.iter().map(|v| (v / KEY_QUANTUM).round() as i64).collect();
        let level = match self.cache.get(&key) {
            Some(Some(c)) => Ok(*c),
            Some(None) => Err(self.degenerate_reason(cs, ss)),
            None => {
                let level = self.compute_level(cs, ss);
                self.cache.insert(key, level.as_ref().ok().copied());
                level
            }
        }?;
        Ok(InvariantSet {
            center: ss.x_ss.clone(),
            p: self.p.clone(),
            level,
        })
    }

    fn degenerate_reason(&self, cs: &ConstraintSet, ss: &SteadyStatePoint) -> Error {
        match self.compute_level(cs, ss) {
            Err(e) => e,
            Ok(_) => Error::DegenerateSet {
                constraint: "unknown".to_string(),
            },
        }
    }

    /// Largest admissible level for the center `x_ss(v)`, bypassing the cache.
    pub fn compute_level(&self, cs: &ConstraintSet, ss: &SteadyStatePoint) -> Result<f64> {
        let n = self.p.nrows();
        let (xs, us) = (&ss.x_ss, &ss.u_ss);
        let mut level = f64::INFINITY;

        // input set, pulled back through u = u_ss - K (x - x_ss)
        match &cs.input_set {
            InputSet::Box { lower, upper } => {
                for i in 0..us.len() {
                    let a = -self.k.row(i).transpose();
                    let denom = a.dot(&(&self.p_inv * &a));
                    for (gap, side) in [(upper[i] - us[i], "upper"), (us[i] - lower[i], "lower")] {
                        if gap <= 0.0 {
                            return Err(Error::DegenerateSet {
                                constraint: format!("input-set ({side} bound {i})"),
                            });
                        }
                        if denom > 0.0 {
                            level = level.min(gap * gap / denom);
                        }
                    }
                }
            }
            InputSet::Ball { radius } => {
                let gap = radius - us.norm();
                if gap <= 0.0 {
                    return Err(Error::DegenerateSet {
                        constraint: "input-set".to_string(),
                    });
                }
                let kpk = &self.k * &self.p_inv * self.k.transpose();
                let lam = max_symmetric_eigenvalue(&kpk);
                if lam > 0.0 {
                    level = level.min(gap * gap / lam);
                }
            }
        }

        let mut nonlinear = Vec::new();
        for c in &cs.constraints {
            match c.linear_form() {
                Some((a, b)) => {
                    let (ax, au) = (&a[..n], &a[n..]);
                    let center = ax.iter().zip(xs.iter()).map(|(p, q)| p * q).sum::<f64>()
                        + au.iter().zip(us.iter()).map(|(p, q)| p * q).sum::<f64>();
                    let gap = b - center;
                    if gap <= 0.0 {
                        return Err(Error::DegenerateSet {
                            constraint: c.name.clone(),
                        });
                    }
                    // a_x - K' a_u
                    let mut at = DVector::from_column_slice(ax);
                    at.gemv_tr(-1.0, &self.k, &DVector::from_column_slice(au), 1.0);
                    let denom = at.dot(&(&self.p_inv * &at));
                    if denom > 0.0 {
                        level = level.min(gap * gap / denom);
                    }
                }
                None => {
                    let g = c.eval(xs.as_slice(), us.as_slice());
                    if g >= 0.0 {
                        return Err(Error::DegenerateSet {
                            constraint: c.name.clone(),
                        });
                    }
                    nonlinear.push(c);
                }
            }
        }
        let upper = level.min(LEVEL_CAP);
        if nonlinear.is_empty() {
            return Ok(upper);
        }

        let worst = |c_level: f64| -> f64 {
            nonlinear
                .iter()
                .map(|c| self.boundary_max(&c.expr, c.kind(), xs, us, c_level))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        if worst(upper) <= 0.0 {
            return Ok(upper);
        }
        let (mut lo, mut hi) = (0.0, upper);
        while hi - lo > BISECTION_TOL * hi {
            let mid = 0.5 * (lo + hi);
            if worst(mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo <= 0.0 {
            return Err(Error::DegenerateSet {
                constraint: nonlinear[0].name.clone(),
            });
        }
        Ok(lo)
    }

    /// Approximate maximum of `g(x, u_lqr(x))` over the ellipsoid surface of
    /// level `c`: sampled directions, then projected ascent from the best ones.
    fn boundary_max(
        &self,
        expr: &crate::plant::ConstraintExpr,
        kind: ConstraintKind,
        xs: &DVector<f64>,
        us: &DVector<f64>,
        c_level: f64,
    ) -> f64 {
        let n = xs.len();
        let m = us.len();
        let sc = c_level.sqrt();
        let point = |w: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
            let d = w * sc;
            let x = xs + &d;
            let mut u = us.clone();
            u.gemv(-1.0, &self.k, &d, 1.0);
            (x, u)
        };
        let value_at = |w: &DVector<f64>| {
            let (x, u) = point(w);
            expr.eval(x.as_slice(), u.as_slice())
        };

        let mut scored: Vec<(f64, usize)> = self
            .boundary
            .iter()
            .enumerate()
            .map(|(i, w)| (value_at(w), i))
            .collect();
        let best = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        if best > 0.0 {
            return best;
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));

        let mut overall = best;
        let mut grad_z = vec![0.0; n + m];
        let l_inv_t = self.l_inv.transpose();
        for &(start_val, idx) in scored.iter().take(REFINE_STARTS) {
            if start_val == f64::NEG_INFINITY && kind == ConstraintKind::Conditional {
                continue;
            }
            let mut d = self.directions[idx].clone();
            let mut val = start_val;
            let mut step = 0.5;
            for _ in 0..REFINE_STEPS {
                let w = &l_inv_t * &d;
                let (x, u) = point(&w);
                expr.gradient(x.as_slice(), u.as_slice(), &mut grad_z);
                // d/dd g = sqrt(c) L^-1 (g_x - K' g_u)
                let gx = DVector::from_column_slice(&grad_z[..n]);
                let gu = DVector::from_column_slice(&grad_z[n..]);
                let mut gd = gx;
                gd.gemv_tr(-1.0, &self.k, &gu, 1.0);
                let mut g = &self.l_inv * gd * sc;
                g.axpy(-g.dot(&d), &d.clone(), 1.0);
                let gnorm = g.norm();
                if gnorm < 1e-14 {
                    break;
                }
                let mut improved = false;
                while step > 1e-8 {
                    let mut trial = &d + &g * (step / gnorm);
                    trial.normalize_mut();
                    let tv = value_at(&(&l_inv_t * &trial));
                    if tv > val {
                        d = trial;
                        val = tv;
                        step = (step * 2.0).min(1.0);
                        improved = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !improved || val > 0.0 {
                    break;
                }
            }
            overall = overall.max(val);
            if overall > 0.0 {
                break;
            }
        }
        overall
    }
}
