//! Clohessy-Wiltshire rendezvous benchmark: dynamics, constraints, reference
//! schedule, initial-condition grids and the named scenario presets.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::governor::{ReferenceSchedule, RgConfig, Strategy, DEFAULT_BOUNDARY_SAMPLES};
use crate::linalg::discretize_zoh;
use crate::mpc::MpcConfig;
use crate::plant::{
    cone_polytope, Constraint, ConstraintExpr, ConstraintSet, InputSet, LinearPlant, ReferenceBox,
};

pub const EARTH_MU: f64 = 3.986004418e14;
pub const EARTH_RADIUS: f64 = 6.371e6;

pub const INPUT_BOUND: f64 = 0.1;
pub const SPEED_BOUND: f64 = 3.0;
pub const CONE_HALF_ANGLE_DEG: f64 = 15.0;
pub const TERMINAL_ZONE_X2: f64 = 2.0;
pub const TERMINAL_SPEED: f64 = 0.1;
/// How far behind the docking plane `x2 = 0` the chaser may drift (1 mm).
pub const DOCKING_TOLERANCE: f64 = 1e-3;

pub const MAX_SPEED: &str = "max-speed";
pub const APPROACH_SIDE: &str = "approach-side";
pub const LOS_CONE: &str = "los-cone";
pub const TERMINAL_SPEED_NAME: &str = "terminal-speed";

pub const DEFAULT_PRESET: &str = "cwh-500km-default";
pub const POLYTOPIC_PRESET: &str = "cwh-cmpc-polytopic";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwhParams {
    pub mu: f64,
    pub r0: f64,
    pub ts: f64,
}

impl Default for CwhParams {
    fn default() -> Self {
        Self {
            mu: EARTH_MU,
            r0: EARTH_RADIUS + 500e3,
            ts: 0.5,
        }
    }
}

impl CwhParams {
    /// Mean motion `sqrt(mu / r0^3)`.
    pub fn mean_motion(&self) -> f64 {
        (self.mu / self.r0.powi(3)).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if [self.mu, self.r0, self.ts].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "CWH parameters must be positive: {self:?}"
            )))
        }
    }
}

/// Continuous-time `(Ac, Bc, Cc)` with state `(x1, x2, x3, x4, x5, x6)`,
/// positions first.
pub fn cwh_continuous(params: &CwhParams) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = params.mean_motion();
    let mut ac = DMatrix::zeros(6, 6);
    for i in 0..3 {
        ac[(i, i + 3)] = 1.0;
    }
    ac[(3, 0)] = 3.0 * n * n;
    ac[(3, 4)] = 2.0 * n;
    ac[(4, 3)] = -2.0 * n;
    ac[(5, 2)] = -n * n;
    let mut bc = DMatrix::zeros(6, 3);
    let mut cc = DMatrix::zeros(3, 6);
    for i in 0..3 {
        bc[(i + 3, i)] = 1.0;
        cc[(i, i)] = 1.0;
    }
    (ac, bc, cc)
}

/// Zero-order-hold discretization of the CWH model.
pub fn cwh_plant(params: &CwhParams) -> Result<LinearPlant> {
    params.validate()?;
    let (ac, bc, cc) = cwh_continuous(params);
    let pair = discretize_zoh(&ac, &bc, params.ts)?;
    LinearPlant::new(pair.a, pair.b, cc)
}

fn speed_bounds() -> Vec<Constraint> {
    let mut out = Vec::with_capacity(6);
    for i in 3..6 {
        for sign in [1.0, -1.0] {
            let mut a = [0.0; 6];
            a[i] = sign;
            out.push(Constraint::linear(MAX_SPEED, &a, &[0.0; 3], SPEED_BOUND));
        }
    }
    out
}

/// `x2 >= lower`
fn approach_side(lower: f64) -> Constraint {
    Constraint::linear(APPROACH_SIDE, &[0.0, -1.0, 0.0, 0.0, 0.0, 0.0], &[0.0; 3], -lower)
}

/// `x1^2 + x3^2 - tan^2(theta) (x2 + 1)^2 <= 0`
pub fn los_cone(half_angle_deg: f64) -> Constraint {
    let t2 = half_angle_deg.to_radians().tan().powi(2);
    let mut linear = vec![0.0; 9];
    linear[1] = -2.0 * t2;
    Constraint::new(
        LOS_CONE,
        ConstraintExpr::Quadratic {
            terms: vec![(0, 0, 1.0), (2, 2, 1.0), (1, 1, -t2)],
            linear,
            constant: -t2,
        },
    )
}

/// If `x2 <= 2` then `x4^2 + x5^2 + x6^2 <= 0.1^2`.
pub fn terminal_speed() -> Constraint {
    let mut guard = vec![0.0; 9];
    guard[1] = 1.0;
    Constraint::new(
        TERMINAL_SPEED_NAME,
        ConstraintExpr::Conditional {
            guard: Box::new(ConstraintExpr::Linear {
                a: guard,
                b: TERMINAL_ZONE_X2,
            }),
            body: Box::new(ConstraintExpr::Quadratic {
                terms: vec![(3, 3, 1.0), (4, 4, 1.0), (5, 5, 1.0)],
                linear: vec![0.0; 9],
                constant: -TERMINAL_SPEED * TERMINAL_SPEED,
            }),
        },
    )
}

/// Input saturation, speed bounds, `x2 >= -DOCKING_TOLERANCE`, line-of-sight
/// cone and the conditional terminal speed limit.
pub fn spacecraft_constraints() -> ConstraintSet {
    let mut constraints = speed_bounds();
    constraints.push(approach_side(-DOCKING_TOLERANCE));
    constraints.push(los_cone(CONE_HALF_ANGLE_DEG));
    constraints.push(terminal_speed());
    ConstraintSet::new(6, 3, InputSet::symmetric_box(3, INPUT_BOUND), constraints)
        .expect("spacecraft constraint set is well formed")
}

/// Polyhedral variant: cone replaced by `facets` inscribed half-spaces, the
/// conditional speed limit replaced by `x2 >= x2_min`.
pub fn polytopic_constraints(facets: usize, x2_min: f64) -> Result<ConstraintSet> {
    let mut constraints = speed_bounds();
    constraints.push(approach_side(x2_min));
    constraints.extend(cone_polytope(CONE_HALF_ANGLE_DEG, facets, 6, 3)?);
    ConstraintSet::new(6, 3, InputSet::symmetric_box(3, INPUT_BOUND), constraints)
}

/// How the lateral components move while far from the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LateralStep {
    /// Fixed per-axis stride `kappa |dv_fix|`, signed toward `r`.
    #[default]
    Fixed,
    /// Along the straight line to `r`, with the along-track stride of the fixed rule.
    Aligned,
}

/// Two-regime reference schedule: fixed strides while `v2` is far from the
/// target, then geometric contraction toward `r` with an exact landing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwhSchedule {
    pub kappa: f64,
    /// `dv_fix = r - offset`
    pub offset: [f64; 3],
    /// The fixed-stride regime applies while `v2 >= switch_x2`.
    pub switch_x2: f64,
    /// Snap to `r` once `|v - r| <= landing_radius`.
    pub landing_radius: f64,
    #[serde(default)]
    pub lateral: LateralStep,
}

impl Default for CwhSchedule {
    fn default() -> Self {
        Self {
            kappa: 0.1,
            offset: [3.67, 20.0, 3.67],
            switch_x2: 20.0,
            landing_radius: 0.05,
            lateral: LateralStep::Fixed,
        }
    }
}

impl CwhSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa <= 1.0) || !(self.landing_radius >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid reference schedule: {self:?}"
            )));
        }
        Ok(())
    }
}

impl ReferenceSchedule for CwhSchedule {
    fn next(&self, v_prev: &DVector<f64>, v0: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        if (v_prev - r).norm() <= self.landing_radius {
            return r.clone();
        }
        let step: DVector<f64> = if v_prev[1] >= self.switch_x2 {
            let fix = DVector::from_fn(3, |i, _| (r[i] - self.offset[i]).abs());
            match self.lateral {
                LateralStep::Fixed => DVector::from_fn(3, |i, _| signum0(r[i] - v0[i]) * fix[i]),
                LateralStep::Aligned => {
                    let d = r - v_prev;
                    let along = d[1].abs();
                    if along > 0.0 {
                        d * (fix[1] / along)
                    } else {
                        DVector::from_fn(3, |i, _| signum0(r[i] - v0[i]) * fix[i])
                    }
                }
            }
        } else {
            r - v_prev
        };
        let mut v = v_prev + step * self.kappa;
        // never move past r along any axis
        for i in 0..v.len() {
            let to_go = r[i] - v_prev[i];
            let moved = v[i] - v_prev[i];
            if moved * to_go <= 0.0 {
                v[i] = v_prev[i];
            } else if moved.abs() >= to_go.abs() {
                v[i] = r[i];
            }
        }
        if (&v - r).norm() <= self.landing_radius {
            return r.clone();
        }
        v
    }
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Initial conditions at rest on concentric circles in the `x1`-`x3` plane at
/// along-track distance `x2`.
///
/// Radii are spaced linearly from 0 to `tan(max_half_angle) sqrt(x2^2 + 1)` and
/// each circle receives a share of points proportional to its radius.
pub fn ic_grid(x2: f64, count: usize, max_half_angle_deg: f64) -> Result<Vec<DVector<f64>>> {
    if count == 0 || !(x2 > 0.0) || !(max_half_angle_deg > 0.0 && max_half_angle_deg < 90.0) {
        return Err(Error::InvalidArgument(format!(
            "ic_grid needs count >= 1, x2 > 0 and an angle in (0, 90): got {count}, {x2}, {max_half_angle_deg}"
        )));
    }
    let point = |x1: f64, x3: f64| DVector::from_vec(vec![x1, x2, x3, 0.0, 0.0, 0.0]);
    let mut out = vec![point(0.0, 0.0)];
    if count == 1 {
        return Ok(out);
    }
    let rest = count - 1;
    // about six points per unit ring index
    let rings = (((rest as f64) / 3.0).sqrt().round() as usize).clamp(1, rest);
    let weight_sum = (rings * (rings + 1) / 2) as f64;
    let mut shares: Vec<(usize, f64)> = (1..=rings)
        .map(|i| {
            let exact = rest as f64 * i as f64 / weight_sum;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = shares.iter().map(|s| s.0).sum();
    let mut order: Vec<usize> = (0..rings).collect();
    order.sort_by(|a, b| shares[*b].1.total_cmp(&shares[*a].1).then(b.cmp(a)));
    for &i in order.iter().take(rest - assigned) {
        shares[i].0 += 1;
    }
    let r_max = max_half_angle_deg.to_radians().tan() * (x2 * x2 + 1.0).sqrt();
    for (i, (points, _)) in shares.iter().enumerate() {
        let radius = r_max * (i + 1) as f64 / rings as f64;
        for j in 0..*points {
            let phi = 2.0 * PI * j as f64 / *points as f64;
            out.push(point(radius * phi.cos(), radius * phi.sin()));
        }
    }
    Ok(out)
}

/// Everything needed to run one of the rendezvous experiments.
#[derive(Debug, Clone)]
pub struct CwhScenario {
    pub name: String,
    pub params: CwhParams,
    pub plant: LinearPlant,
    pub constraints: ConstraintSet,
    pub target: DVector<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub n_mpc: usize,
    pub rg: RgConfig,
    pub schedule: CwhSchedule,
    pub reference_box: ReferenceBox,
}

impl CwhScenario {
    pub fn mpc_config(&self) -> Result<MpcConfig> {
        MpcConfig::new(&self.plant, self.q.clone(), self.r.clone(), self.n_mpc)
    }

    pub fn mpc_config_with_horizon(&self, horizon: usize) -> Result<MpcConfig> {
        MpcConfig::new(&self.plant, self.q.clone(), self.r.clone(), horizon)
    }
}

pub fn default_weights() -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 1.0, 100.0, 10.0, 1.0, 10.0])),
        DMatrix::identity(3, 3),
    )
}

fn scenario(
    name: &str,
    constraints: ConstraintSet,
    target: DVector<f64>,
    box_lower: [f64; 3],
    box_upper: [f64; 3],
) -> Result<CwhScenario> {
    let params = CwhParams::default();
    let plant = cwh_plant(&params)?;
    let (q, r) = default_weights();
    let schedule = CwhSchedule {
        lateral: LateralStep::Aligned,
        ..CwhSchedule::default()
    };
    let rg = RgConfig {
        n_rg: 120,
        kappa0: schedule.kappa,
        n_a: 5,
        strategy: Strategy::Custom(Arc::new(schedule.clone())),
        boundary_samples: DEFAULT_BOUNDARY_SAMPLES,
    };
    let reference_box = ReferenceBox::new(
        &plant,
        &constraints,
        DVector::from_column_slice(&box_lower),
        DVector::from_column_slice(&box_upper),
    )?;
    Ok(CwhScenario {
        name: name.to_string(),
        params,
        plant,
        constraints,
        target,
        q,
        r,
        n_mpc: 20,
        rg,
        schedule,
        reference_box,
    })
}

/// Full nonlinear constraint set, target at the origin.
pub fn cwh_500km_default() -> Result<CwhScenario> {
    scenario(
        DEFAULT_PRESET,
        spacecraft_constraints(),
        DVector::zeros(3),
        [-2.0, 10.0, -2.0],
        [2.0, 60.0, 2.0],
    )
}

/// 15-facet cone, `x2 >= 3`, target `(0, 4, 0)`.
pub fn cwh_cmpc_polytopic() -> Result<CwhScenario> {
    scenario(
        POLYTOPIC_PRESET,
        polytopic_constraints(15, 3.0)?,
        DVector::from_vec(vec![0.0, 4.0, 0.0]),
        [-2.0, 10.0, -2.0],
        [2.0, 60.0, 2.0],
    )
}

pub fn preset(name: &str) -> Result<CwhScenario> {
    match name {
        DEFAULT_PRESET => cwh_500km_default(),
        POLYTOPIC_PRESET => cwh_cmpc_polytopic(),
        other => Err(Error::InvalidArgument(format!(
            "unknown scenario preset `{other}` (known: {DEFAULT_PRESET}, {POLYTOPIC_PRESET})"
        ))),
    }
}

pub fn preset_names() -> &'static [&'static str] {
    &[DEFAULT_PRESET, POLYTOPIC_PRESET]
}
