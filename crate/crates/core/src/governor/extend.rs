use nalgebra::{DMatrix, DVector};

use crate::plant::{ConstraintSet, LinearPlant, SteadyStatePoint};

/// MPC inputs padded with the saturated LQR law, rolled out over `N_RG` steps.
#[derive(Debug, Clone)]
pub struct ExtendedSequence {
    pub steady: SteadyStatePoint,
    /// `u_j` for `j = 0..N_RG`
    pub inputs: Vec<DVector<f64>>,
    /// `x_j` for `j = 0..N_RG`, starting at the measured state.
    pub states: Vec<DVector<f64>>,
    /// Number of leading inputs that came from the MPC solution.
    pub mpc_len: usize,
}

impl ExtendedSequence {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn mpc_tail(&self) -> &[DVector<f64>] {
        &self.inputs[..self.mpc_len]
    }
}

/// Saturated LQR law `Proj_U(-K (x - x_ss) + u_ss)`.
pub fn saturated_lqr(
    cs: &ConstraintSet,
    k: &DMatrix<f64>,
    x: &DVector<f64>,
    ss: &SteadyStatePoint,
) -> DVector<f64> {
    let mut u = ss.u_ss.clone();
    u.gemv(-1.0, k, &(x - &ss.x_ss), 1.0);
    cs.input_set.project_in_place(u.as_mut_slice());
    u
}

/// Builds the extended sequence from `x` with the given MPC inputs.
///
/// Inputs beyond `mpc_inputs.len()` follow the saturated LQR law; an empty
/// `mpc_inputs` gives the pure saturated-LQR prediction.
pub fn extend_sequence(
    plant: &LinearPlant,
    mpc_inputs: &[DVector<f64>],
    x: &DVector<f64>,
    ss: &SteadyStatePoint,
    k: &DMatrix<f64>,
    n_rg: usize,
    cs: &ConstraintSet,
) -> ExtendedSequence {
    let mpc_len = mpc_inputs.len().min(n_rg);
    let mut states = Vec::with_capacity(n_rg);
    let mut inputs = Vec::with_capacity(n_rg);
    let mut xj = x.clone();
    for j in 0..n_rg {
        let uj = if j < mpc_len {
            mpc_inputs[j].clone()
        } else {
            saturated_lqr(cs, k, &xj, ss)
        };
        let next = plant.step(&xj, &uj);
        states.push(xj);
        inputs.push(uj);
        xj = next;
    }
    ExtendedSequence {
        steady: ss.clone(),
        inputs,
        states,
        mpc_len,
    }
}
