//! Discrete-time linear plant, steady-state map and the constraint set `Z`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite_matrix, ensure_finite_vector, solve_dare};

/// Absolute tolerance used when checking `g(x, u) <= 0`.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Default relative margin shrinking `Z` to the steady-state admissible set.
pub const DEFAULT_MARGIN: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct LinearPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    /// Maps a reference `r` to the stacked minimum-norm `(x_ss, u_ss)`.
    ss_map: DMatrix<f64>,
}

impl LinearPlant {
    /// Builds a plant, rejecting inconsistent shapes and unstabilizable `(A, B)`.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must be {n}xm with m > 0, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "C must be px{n} with p > 0, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        ensure_finite_matrix(&a, "A")?;
        ensure_finite_matrix(&b, "B")?;
        ensure_finite_matrix(&c, "C")?;
        let m = b.ncols();
        let p = c.nrows();

        solve_dare(
            &a,
            &b,
            &DMatrix::identity(n, n),
            &DMatrix::identity(m, m),
        )
        .map_err(|e| Error::InvalidArgument(format!("(A, B) is not stabilizable: {e}")))?;

        let mut mm = DMatrix::zeros(n + p, n + m);
        mm.view_mut((0, 0), (n, n))
            .copy_from(&(&a - DMatrix::<f64>::identity(n, n)));
        mm.view_mut((0, n), (n, m)).copy_from(&b);
        mm.view_mut((n, 0), (p, n)).copy_from(&c);
        let pinv = mm
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::InvalidArgument(format!("steady-state map: {e}")))?;
        let ss_map = pinv.view((0, n), (n + m, p)).into_owned();
        Ok(Self { a, b, c, ss_map })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// `A x + B u`
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut next = &self.a * x;
        next.gemv(1.0, &self.b, u, 1.0);
        next
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }

    /// Minimum-norm solution of the steady-state equations for `r`.
    ///
    /// The admissibility flag is evaluated against `cs` shrunk by its margin.
    pub fn steady_state(&self, cs: &ConstraintSet, r: &DVector<f64>) -> Result<SteadyStatePoint> {
        if r.len() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "reference has length {}, plant output is {}",
                r.len(),
                self.p()
            )));
        }
        ensure_finite_vector(r, "reference")?;
        let n = self.n();
        let m = self.m();
        let z = &self.ss_map * r;
        let x_ss = z.rows(0, n).into_owned();
        let u_ss = z.rows(n, m).into_owned();
        let dyn_res = (&self.a - DMatrix::<f64>::identity(n, n)) * &x_ss + &self.b * &u_ss;
        let out_res = &self.c * &x_ss - r;
        let residual = (dyn_res.norm_squared() + out_res.norm_squared()).sqrt();
        let scale = 1.0 + (z.norm_squared() + r.norm_squared()).sqrt();
        if residual > 1e-9 * scale {
            return Err(Error::InfeasibleReference { residual });
        }
        let strictly_admissible = cs.steady_state_admissible(&x_ss, &u_ss);
        Ok(SteadyStatePoint {
            x_ss,
            u_ss,
            r: r.clone(),
            strictly_admissible,
        })
    }
}

/// A forced equilibrium `(x_ss, u_ss)` producing output `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStatePoint {
    pub x_ss: DVector<f64>,
    pub u_ss: DVector<f64>,
    pub r: DVector<f64>,
    /// `(x_ss, u_ss)` lies strictly inside `Z` shrunk by the margin.
    pub strictly_admissible: bool,
}

/// The input set `U` with an exact Euclidean projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputSet {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Euclidean ball centred at the origin.
    Ball { radius: f64 },
}

impl InputSet {
    pub fn symmetric_box(m: usize, bound: f64) -> Self {
        InputSet::Box {
            lower: vec![-bound; m],
            upper: vec![bound; m],
        }
    }

    pub fn project(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = u.clone();
        self.project_in_place(out.as_mut_slice());
        out
    }

    pub fn project_in_place(&self, u: &mut [f64]) {
        match self {
            InputSet::Box { lower, upper } => {
                for ((ui, lo), hi) in u.iter_mut().zip(lower).zip(upper) {
                    *ui = ui.clamp(*lo, *hi);
                }
            }
            InputSet::Ball { radius } => {
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > *radius {
                    let s = radius / norm;
                    u.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
    }

    /// Largest amount by which `u` leaves the set (<= 0 inside).
    pub fn excess(&self, u: &[f64]) -> f64 {
        match self {
            InputSet::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(ui, (lo, hi))| (lo - ui).max(ui - hi))
                .fold(f64::NEG_INFINITY, f64::max),
            InputSet::Ball { radius } => u.iter().map(|v| v * v).sum::<f64>().sqrt() - radius,
        }
    }

    fn shrunk_excess(&self, u: &[f64], margin: f64) -> f64 {
        match self {
            InputSet::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(ui, (lo, hi))| (lo * (1.0 - margin) - ui).max(ui - hi * (1.0 - margin)))
                .fold(f64::NEG_INFINITY, f64::max),
            InputSet::Ball { radius } => {
                u.iter().map(|v| v * v).sum::<f64>().sqrt() - radius * (1.0 - margin)
            }
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            InputSet::Box { lower, .. } => Some(lower.len()),
            InputSet::Ball { .. } => None,
        }
    }
}

/// Scalar constraint function `g(x, u) <= 0` over the stacked pair `z = (x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintExpr {
    /// `a' z - b`
    Linear { a: Vec<f64>, b: f64 },
    /// `sum w_ij z_i z_j + q' z + c`
    Quadratic {
        terms: Vec<(usize, usize, f64)>,
        linear: Vec<f64>,
        constant: f64,
    },
    /// `body(z)` whenever `guard(z) <= 0`; inactive otherwise.
    Conditional {
        guard: Box<ConstraintExpr>,
        body: Box<ConstraintExpr>,
    },
}

#[inline]
fn z_at(x: &[f64], u: &[f64], i: usize) -> f64 {
    if i < x.len() {
        x[i]
    } else {
        u[i - x.len()]
    }
}

impl ConstraintExpr {
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            ConstraintExpr::Linear { a, b } => {
                let n = x.len();
                let mut s = -b;
                for (ai, xi) in a[..n].iter().zip(x) {
                    s += ai * xi;
                }
                for (ai, ui) in a[n..].iter().zip(u) {
                    s += ai * ui;
                }
                s
            }
            ConstraintExpr::Quadratic {
                terms,
                linear,
                constant,
            } => {
                let mut s = *constant;
                for &(i, j, w) in terms {
                    s += w * z_at(x, u, i) * z_at(x, u, j);
                }
                for (i, q) in linear.iter().enumerate() {
                    if *q != 0.0 {
                        s += q * z_at(x, u, i);
                    }
                }
                s
            }
            ConstraintExpr::Conditional { guard, body } => {
                if guard.eval(x, u) <= 0.0 {
                    body.eval(x, u)
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Gradient with respect to `z = (x, u)`, written into `out` (length n + m).
    pub fn gradient(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        self.accumulate_gradient(x, u, out);
    }

    fn accumulate_gradient(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        match self {
            ConstraintExpr::Linear { a, .. } => {
                for (g, ai) in out.iter_mut().zip(a) {
                    *g += ai;
                }
            }
            ConstraintExpr::Quadratic { terms, linear, .. } => {
                for &(i, j, w) in terms {
                    out[i] += w * z_at(x, u, j);
                    out[j] += w * z_at(x, u, i);
                }
                for (g, q) in out.iter_mut().zip(linear) {
                    *g += q;
                }
            }
            ConstraintExpr::Conditional { guard, body } => {
                if guard.eval(x, u) <= 0.0 {
                    body.accumulate_gradient(x, u, out);
                }
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            ConstraintExpr::Linear { a, b } => {
                if a.len() != dim || !b.is_finite() || a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "linear constraint needs {dim} finite coefficients"
                    )));
                }
            }
            ConstraintExpr::Quadratic {
                terms,
                linear,
                constant,
            } => {
                if linear.len() != dim
                    || !constant.is_finite()
                    || terms.iter().any(|&(i, j, w)| i >= dim || j >= dim || !w.is_finite())
                {
                    return Err(Error::InvalidArgument(format!(
                        "quadratic constraint malformed for dimension {dim}"
                    )));
                }
            }
            ConstraintExpr::Conditional { guard, body } => {
                guard.validate(dim)?;
                body.validate(dim)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Linear,
    Nonlinear,
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub expr: ConstraintExpr,
}

impl Constraint {
    pub fn new(name: impl Into<String>, expr: ConstraintExpr) -> Self {
        Self {
            name: name.into(),
            expr,
        }
    }

    /// Convenience constructor for `a_x' x + a_u' u <= b`.
    pub fn linear(name: impl Into<String>, a_x: &[f64], a_u: &[f64], b: f64) -> Self {
        let mut a = a_x.to_vec();
        a.extend_from_slice(a_u);
        Self::new(name, ConstraintExpr::Linear { a, b })
    }

    pub fn kind(&self) -> ConstraintKind {
        match self.expr {
            ConstraintExpr::Linear { .. } => ConstraintKind::Linear,
            ConstraintExpr::Quadratic { .. } => ConstraintKind::Nonlinear,
            ConstraintExpr::Conditional { .. } => ConstraintKind::Conditional,
        }
    }

    /// `(a, b)` with `g(z) = a' z - b`, when the constraint is linear.
    pub fn linear_form(&self) -> Option<(&[f64], f64)> {
        match &self.expr {
            ConstraintExpr::Linear { a, b } => Some((a.as_slice(), *b)),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        self.expr.eval(x, u)
    }
}

/// A reported constraint violation: the name and the positive value of `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub name: String,
    pub value: f64,
}

pub const INPUT_SET_NAME: &str = "input-set";

/// `Z`: the input set plus scalar state/input constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub n: usize,
    pub m: usize,
    pub input_set: InputSet,
    pub constraints: Vec<Constraint>,
    /// Relative shrink factor defining the steady-state admissible subset.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

impl ConstraintSet {
    pub fn new(
        n: usize,
        m: usize,
        input_set: InputSet,
        constraints: Vec<Constraint>,
    ) -> Result<Self> {
        let cs = Self {
            n,
            m,
            input_set,
            constraints,
            margin: DEFAULT_MARGIN,
        };
        cs.validate()?;
        Ok(cs)
    }

    pub fn with_margin(mut self, margin: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&margin) {
            return Err(Error::InvalidArgument(format!(
                "margin must lie in [0, 1), got {margin}"
            )));
        }
        self.margin = margin;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.input_set {
            InputSet::Box { lower, upper } => {
                if lower.len() != self.m || upper.len() != self.m {
                    return Err(Error::DimensionMismatch(format!(
                        "input box must have {} entries",
                        self.m
                    )));
                }
                if lower.iter().zip(upper).any(|(lo, hi)| !(*lo < 0.0 && *hi > 0.0)) {
                    return Err(Error::InvalidArgument(
                        "input box must strictly contain the origin".to_string(),
                    ));
                }
                if lower.iter().chain(upper).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("input box must be bounded".to_string()));
                }
            }
            InputSet::Ball { radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidArgument(
                        "input ball radius must be positive".to_string(),
                    ));
                }
            }
        }
        debug_assert!(self.input_set.dim().is_none_or(|d| d == self.m));
        for c in &self.constraints {
            c.expr
                .validate(self.n + self.m)
                .map_err(|e| Error::InvalidArgument(format!("constraint `{}`: {e}", c.name)))?;
        }
        Ok(())
    }

    pub fn project_input(&self, u: &DVector<f64>) -> DVector<f64> {
        self.input_set.project(u)
    }

    /// Every constraint with `g(x, u)` above the feasibility tolerance.
    pub fn check(&self, x: &DVector<f64>, u: &DVector<f64>) -> Vec<Violation> {
        self.check_slices(x.as_slice(), u.as_slice())
    }

    pub fn check_slices(&self, x: &[f64], u: &[f64]) -> Vec<Violation> {
        let mut out = Vec::new();
        let excess = self.input_set.excess(u);
        if excess > FEASIBILITY_TOL {
            out.push(Violation {
                name: INPUT_SET_NAME.to_string(),
                value: excess,
            });
        }
        for c in &self.constraints {
            let g = c.eval(x, u);
            if g > FEASIBILITY_TOL {
                out.push(Violation {
                    name: c.name.clone(),
                    value: g,
                });
            }
        }
        out
    }

    /// Index of the first violated state constraint, skipping the input set.
    pub fn first_violation(&self, x: &[f64], u: &[f64]) -> Option<usize> {
        self.constraints
            .iter()
            .position(|c| c.eval(x, u) > FEASIBILITY_TOL)
    }

    pub fn is_admissible(&self, x: &[f64], u: &[f64]) -> bool {
        self.input_set.excess(u) <= FEASIBILITY_TOL && self.first_violation(x, u).is_none()
    }

    /// Strict membership in `Z` shrunk by `margin` (boxes toward the origin).
    pub fn steady_state_admissible(&self, x: &DVector<f64>, u: &DVector<f64>) -> bool {
        let (x, u) = (x.as_slice(), u.as_slice());
        if self.input_set.shrunk_excess(u, self.margin) >= 0.0 {
            return false;
        }
        self.constraints.iter().all(|c| {
            let g = c.eval(x, u);
            match c.linear_form() {
                Some((_, b)) => g < 0.0 && g <= -self.margin * b.abs(),
                None => g < 0.0,
            }
        })
    }

    pub fn constraint(&self, name: &str) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.name == name)
    }

    /// True when every state constraint is linear (required by the cMPC baseline).
    pub fn is_polyhedral(&self) -> bool {
        self.constraints
            .iter()
            .all(|c| c.kind() == ConstraintKind::Linear)
    }
}

/// Box of references whose steady states are strictly admissible.
#[derive(Debug, Clone)]
pub struct ReferenceBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl ReferenceBox {
    /// Verifies that every vertex of the box has a strictly admissible steady state.
    pub fn new(
        plant: &LinearPlant,
        cs: &ConstraintSet,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let p = plant.p();
        if lower.len() != p || upper.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "reference box bounds must have length {p}"
            )));
        }
        if lower.iter().zip(upper.iter()).any(|(lo, hi)| lo > hi) {
            return Err(Error::InvalidArgument(
                "reference box lower bound exceeds upper bound".to_string(),
            ));
        }
        for mask in 0..(1usize << p) {
            let vertex = DVector::from_iterator(
                p,
                (0..p).map(|i| if mask & (1 << i) != 0 { upper[i] } else { lower[i] }),
            );
            let ss = plant.steady_state(cs, &vertex)?;
            if !ss.strictly_admissible {
                return Err(Error::InvalidArgument(format!(
                    "reference vertex {:?} is not strictly admissible",
                    vertex.as_slice()
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        v.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(vi, (lo, hi))| *lo <= *vi && *vi <= *hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.lower.len(),
            self.lower
                .iter()
                .zip(self.upper.iter())
                .map(|(lo, hi)| if hi > lo { rng.random_range(*lo..=*hi) } else { *lo }),
        )
    }
}

/// Inscribed polyhedral approximation of the cone
/// `x1^2 + x3^2 <= tan^2(theta) (x2 + 1)^2` (state indices 0, 1, 2).
///
/// Facet `j` is `cos(phi_j) x1 + sin(phi_j) x3 <= tan(theta) cos(pi / F) (x2 + 1)`.
pub fn cone_polytope(
    half_angle_deg: f64,
    facet_count: usize,
    n: usize,
    m: usize,
) -> Result<Vec<Constraint>> {
    if !(half_angle_deg > 0.0 && half_angle_deg < 90.0) {
        return Err(Error::InvalidArgument(format!(
            "cone half angle must lie in (0, 90) degrees, got {half_angle_deg}"
        )));
    }
    if facet_count < 3 {
        return Err(Error::InvalidArgument(format!(
            "cone polytope needs at least 3 facets, got {facet_count}"
        )));
    }
    if n < 3 {
        return Err(Error::DimensionMismatch(
            "cone polytope needs at least three states".to_string(),
        ));
    }
    let apothem = half_angle_deg.to_radians().tan() * (std::f64::consts::PI / facet_count as f64).cos();
    Ok((0..facet_count)
        .map(|j| {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / facet_count as f64;
            let mut a = vec![0.0; n + m];
            a[0] = phi.cos();
            a[2] = phi.sin();
            a[1] = -apothem;
            Constraint::new(format!("cone-facet-{j}"), ConstraintExpr::Linear { a, b: apothem })
        })
        .collect())
}
