//! Dense kernels shared by the plant, the controllers and the governor:
//! zero-order-hold discretization, Riccati and Lyapunov solvers, spectral radius.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Discrete-time transition pair `x+ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrixPair {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Stabilizing DARE solution and the associated LQR gain.
///
/// The feedback convention is `u = -K (x - x_ss) + u_ss`, so the closed loop
/// matrix is `A - B K`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
}

impl RiccatiSolution {
    pub fn closed_loop(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a - b * &self.k
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DareOptions {
    pub max_sweeps: usize,
    /// Relative stopping threshold on `||P_{j+1} - P_j||_F`.
    pub tolerance: f64,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 10_000,
            tolerance: 1e-12,
        }
    }
}

pub(crate) fn ensure_finite_matrix(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} has non-finite entries")))
    }
}

pub(crate) fn ensure_finite_vector(v: &DVector<f64>, name: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} has non-finite entries")))
    }
}

fn ensure_square(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{name} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// Checks symmetry (relative 1e-10) and positive definiteness via Cholesky.
pub fn ensure_spd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    ensure_square(m, name)?;
    ensure_finite_matrix(m, name)?;
    let scale = 1.0 + m.amax();
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
    }
    if Cholesky::new(m.clone()).is_none() {
        return Err(Error::InvalidArgument(format!(
            "{name} is not positive definite"
        )));
    }
    Ok(())
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Exact zero-order-hold discretization through the exponential of the
/// augmented matrix `[[Ac, Bc], [0, 0]] * Ts`.
pub fn discretize_zoh(ac: &DMatrix<f64>, bc: &DMatrix<f64>, ts: f64) -> Result<StateMatrixPair> {
    ensure_square(ac, "Ac")?;
    ensure_finite_matrix(ac, "Ac")?;
    ensure_finite_matrix(bc, "Bc")?;
    if !(ts.is_finite() && ts > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling period must be positive, got {ts}"
        )));
    }
    let n = ac.nrows();
    let m = bc.ncols();
    if bc.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "Bc has {} rows, Ac is {n}x{n}",
            bc.nrows()
        )));
    }
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * ts));
    let e = aug.exp();
    Ok(StateMatrixPair {
        a: e.view((0, 0), (n, n)).into_owned(),
        b: e.view((0, n), (n, m)).into_owned(),
    })
}

/// Right-hand side of the DARE fixed-point map, `Q + A'PA - A'PB (R + B'PB)^-1 B'PA`,
/// together with the gain `(R + B'PB)^-1 B'PA`.
fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let pa = p * a;
    let pb = p * b;
    let s = r + b.transpose() * &pb;
    let bt_pa = b.transpose() * &pa;
    let chol = Cholesky::new(s).ok_or_else(|| {
        Error::InvalidArgument("R + B'PB lost positive definiteness".to_string())
    })?;
    let k = chol.solve(&bt_pa);
    let mut next = q + a.transpose() * &pa - bt_pa.transpose() * &k;
    symmetrize(&mut next);
    Ok((next, k))
}

/// Frobenius norm of the DARE residual at `p`.
pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    match riccati_map(a, b, q, r, p) {
        Ok((next, _)) => (next - p).norm(),
        Err(_) => f64::INFINITY,
    }
}

/// Solves the discrete algebraic Riccati equation by fixed-point recursion
/// seeded at `P0 = Q`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<RiccatiSolution> {
    solve_dare_with(a, b, q, r, DareOptions::default())
}

pub fn solve_dare_with(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    opts: DareOptions,
) -> Result<RiccatiSolution> {
    ensure_square(a, "A")?;
    ensure_finite_matrix(a, "A")?;
    ensure_finite_matrix(b, "B")?;
    let n = a.nrows();
    let m = b.ncols();
    if b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!(
            "DARE expects A {n}x{n}, B {n}x{m}, Q {n}x{n}, R {m}x{m}"
        )));
    }
    ensure_spd(q, "Q")?;
    ensure_spd(r, "R")?;

    let mut p = q.clone();
    let mut last_step = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        let (next, _) = riccati_map(a, b, q, r, &p)?;
        last_step = (&next - &p).norm();
        let scale = 1.0 + p.norm();
        p = next;
        if !last_step.is_finite() {
            break;
        }
        if last_step <= opts.tolerance * scale {
            let (_, k) = riccati_map(a, b, q, r, &p)?;
            let acl = a - b * &k;
            let rho = spectral_radius(&acl)?;
            if rho >= 1.0 {
                return Err(Error::Unstable {
                    spectral_radius: rho,
                });
            }
            return Ok(RiccatiSolution {
                p,
                k,
                iterations: sweep,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "DARE fixed-point recursion",
        iterations: opts.max_sweeps,
        residual: last_step,
    })
}

/// Solves `Acl' P Acl - P = -I` for a Schur-stable `Acl`.
pub fn solve_discrete_lyapunov(acl: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(acl, "Acl")?;
    ensure_finite_matrix(acl, "Acl")?;
    let rho = spectral_radius(acl)?;
    if rho >= 1.0 {
        return Err(Error::Unstable {
            spectral_radius: rho,
        });
    }
    let n = acl.nrows();
    let mut p = if n <= 16 {
        lyapunov_kronecker(acl)?
    } else {
        lyapunov_doubling(acl)
    };
    symmetrize(&mut p);
    Ok(p)
}

/// vec(P) = (I - Acl' (x) Acl')^-1 vec(I)
fn lyapunov_kronecker(acl: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = acl.nrows();
    let at = acl.transpose();
    let kron = at.kronecker(&at);
    let system = DMatrix::<f64>::identity(n * n, n * n) - kron;
    let rhs = DVector::from_iterator(
        n * n,
        (0..n * n).map(|idx| if idx % n == idx / n { 1.0 } else { 0.0 }),
    );
    let lu = system.lu();
    let mut sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidArgument("singular Lyapunov operator".to_string()))?;
    // one step of iterative refinement
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    let resid = lyapunov_residual_matrix(acl, &p);
    if let Some(corr) = lu.solve(&DVector::from_column_slice(
        (-resid).as_slice(),
    )) {
        sol += corr;
    }
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

fn lyapunov_doubling(acl: &DMatrix<f64>) -> DMatrix<f64> {
    let n = acl.nrows();
    let mut p = DMatrix::<f64>::identity(n, n);
    let mut ak = acl.clone();
    for _ in 0..64 {
        let incr = ak.transpose() * &p * &ak;
        let done = incr.norm() <= 1e-16 * p.norm();
        p += incr;
        ak = &ak * &ak;
        if done {
            break;
        }
    }
    p
}

/// `Acl' P Acl - P + I`
pub fn lyapunov_residual_matrix(acl: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = acl.nrows();
    acl.transpose() * p * acl - p + DMatrix::<f64>::identity(n, n)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    ensure_square(m, "matrix")?;
    ensure_finite_matrix(m, "matrix")?;
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Largest eigenvalue of a symmetric matrix (used as the gradient Lipschitz constant).
pub fn max_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().iter().copied().fold(f64::MIN, f64::max)
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().iter().copied().fold(f64::MAX, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn taylor_exp(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = m.nrows();
        let mut sum = DMatrix::<f64>::identity(n, n);
        let mut term = DMatrix::<f64>::identity(n, n);
        for k in 1..terms {
            term = &term * m / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn zoh_of_zero_dynamics_integrates_linearly() {
        let ac = DMatrix::zeros(3, 3);
        let bc = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let d = discretize_zoh(&ac, &bc, 0.5).unwrap();
        assert_relative_eq!(d.a, DMatrix::identity(3, 3), epsilon = 1e-15);
        assert_relative_eq!(d.b, &bc * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn zoh_scalar_closed_form() {
        let d = discretize_zoh(
            &DMatrix::from_element(1, 1, -1.0),
            &DMatrix::from_element(1, 1, 1.0),
            0.5,
        )
        .unwrap();
        assert_relative_eq!(d.a[(0, 0)], (-0.5f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(d.b[(0, 0)], 1.0 - (-0.5f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn zoh_rejects_bad_input() {
        let mut ac = DMatrix::zeros(2, 2);
        let bc = DMatrix::zeros(2, 1);
        assert!(matches!(
            discretize_zoh(&ac, &bc, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        ac[(0, 1)] = f64::NAN;
        assert!(matches!(
            discretize_zoh(&ac, &bc, 0.5),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn zoh_semigroup() {
        let ac = DMatrix::from_row_slice(2, 2, &[0.1, 1.0, -2.0, -0.3]);
        let bc = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let a1 = discretize_zoh(&ac, &bc, 0.3).unwrap().a;
        let a2 = discretize_zoh(&ac, &bc, 0.45).unwrap().a;
        let a12 = discretize_zoh(&ac, &bc, 0.75).unwrap().a;
        assert!((a12 - &a2 * &a1).amax() <= 1e-12);
        // Taylor oracle on the augmented matrix
        let mut aug = DMatrix::zeros(3, 3);
        aug.view_mut((0, 0), (2, 2)).copy_from(&(&ac * 0.75));
        aug.view_mut((0, 2), (2, 1)).copy_from(&(&bc * 0.75));
        let e = taylor_exp(&aug, 30);
        assert!((e.view((0, 0), (2, 2)) - discretize_zoh(&ac, &bc, 0.75).unwrap().a).amax() < 1e-13);
    }

    #[test]
    fn dare_scalar_cases() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let sol = solve_dare(&DMatrix::zeros(1, 1), &one, &one, &one).unwrap();
        assert_relative_eq!(sol.p[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(sol.k[(0, 0)], 0.0, epsilon = 1e-14);

        let sol = solve_dare(
            &DMatrix::from_element(1, 1, 0.5),
            &DMatrix::zeros(1, 1),
            &one,
            &one,
        )
        .unwrap();
        assert_relative_eq!(sol.p[(0, 0)], 4.0 / 3.0, epsilon = 1e-11);
        assert_eq!(sol.k[(0, 0)], 0.0);
    }

    #[test]
    fn dare_unstabilizable_is_rejected() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let res = solve_dare(
            &DMatrix::from_element(1, 1, 1.5),
            &DMatrix::zeros(1, 1),
            &one,
            &one,
        );
        assert!(matches!(res, Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn dare_rejects_indefinite_weights() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let neg = DMatrix::from_element(1, 1, -1.0);
        assert!(matches!(
            solve_dare(&one, &one, &neg, &one),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            solve_dare(&one, &one, &one, &neg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn dare_residual_and_stability_on_oscillator() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.1, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 0.5);
        let sol = solve_dare(&a, &b, &q, &r).unwrap();
        assert!(dare_residual(&a, &b, &q, &r, &sol.p) <= 1e-8 * (1.0 + sol.p.norm()));
        assert!(spectral_radius(&sol.closed_loop(&a, &b)).unwrap() < 1.0);
    }

    #[test]
    fn lyapunov_trivial_cases() {
        let p = solve_discrete_lyapunov(&DMatrix::zeros(3, 3)).unwrap();
        assert_relative_eq!(p, DMatrix::identity(3, 3), epsilon = 1e-14);
        let p = solve_discrete_lyapunov(&DMatrix::from_element(1, 1, 0.5)).unwrap();
        assert_relative_eq!(p[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
        assert!(matches!(
            solve_discrete_lyapunov(&DMatrix::from_element(1, 1, 1.0)),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn lyapunov_doubling_agrees_with_kronecker() {
        let acl = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, -0.1, 0.7, 0.3, 0.0, 0.1, -0.4]);
        let direct = lyapunov_kronecker(&acl).unwrap();
        let doubled = lyapunov_doubling(&acl);
        assert!((direct - doubled).amax() < 1e-12);
    }

    #[test]
    fn spectral_radius_simple() {
        assert_relative_eq!(spectral_radius(&DMatrix::identity(4, 4)).unwrap(), 1.0, epsilon = 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, -0.9]));
        assert_relative_eq!(spectral_radius(&d).unwrap(), 0.9, epsilon = 1e-12);
        // rotation: complex pair of modulus 0.8
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.8, 0.8, 0.0]);
        assert_relative_eq!(spectral_radius(&rot).unwrap(), 0.8, epsilon = 1e-12);
    }
}
