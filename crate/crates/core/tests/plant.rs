mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use rgmpc_core::plant::{cone_polytope, ConstraintSet, InputSet, LinearPlant};
use rgmpc_core::spacecraft::{
    cwh_500km_default, cwh_plant, spacecraft_constraints, CwhParams, LOS_CONE, TERMINAL_SPEED_NAME,
};
use rgmpc_core::Error;

use common::{naive_step, random_matrix, random_vector, rng};

fn names(cs: &ConstraintSet, x: &[f64], u: &[f64]) -> Vec<String> {
    cs.check_slices(x, u).into_iter().map(|v| v.name).collect()
}

#[test]
fn steady_state_of_zero_reference() {
    let plant = cwh_plant(&CwhParams::default()).unwrap();
    let ss = plant.steady_state(&spacecraft_constraints(), &DVector::zeros(3)).unwrap();
    assert_eq!(ss.x_ss.amax(), 0.0);
    assert_eq!(ss.u_ss.amax(), 0.0);
}

#[test]
fn cwh_forced_equilibria() {
    let params = CwhParams::default();
    let n = params.mean_motion();
    let scenario = cwh_500km_default().unwrap();
    let mut r = rng(3);
    for _ in 0..100 {
        let v = scenario.reference_box.sample(&mut r);
        let ss = scenario.plant.steady_state(&scenario.constraints, &v).unwrap();
        let x_expected = DVector::from_vec(vec![v[0], v[1], v[2], 0.0, 0.0, 0.0]);
        let u_expected = DVector::from_vec(vec![-3.0 * n * n * v[0], 0.0, n * n * v[2]]);
        assert!((&ss.x_ss - x_expected).amax() <= 1e-10);
        assert!((&ss.u_ss - u_expected).amax() <= 1e-10);
        // fixed point of the dynamics
        assert!((scenario.plant.step(&ss.x_ss, &ss.u_ss) - &ss.x_ss).amax() <= 1e-10);
    }
}

#[test]
fn steady_state_matches_dense_solve() {
    let mut r = rng(5);
    let cs = ConstraintSet::new(3, 1, InputSet::symmetric_box(1, 100.0), vec![]).unwrap();
    let mut checked = 0;
    while checked < 50 {
        let a = random_matrix(&mut r, 3, 3, 0.5);
        let b = random_matrix(&mut r, 3, 1, 1.0);
        let c = random_matrix(&mut r, 1, 3, 1.0);
        // square system [A - I, B; C, 0] [x; u] = [0; r]
        let mut m = DMatrix::zeros(4, 4);
        m.view_mut((0, 0), (3, 3)).copy_from(&(&a - DMatrix::<f64>::identity(3, 3)));
        m.view_mut((0, 3), (3, 1)).copy_from(&b);
        m.view_mut((3, 0), (1, 3)).copy_from(&c);
        let sv = m.singular_values();
        if sv.min() < 1e-2 * sv.max() {
            continue;
        }
        let Ok(plant) = LinearPlant::new(a.clone(), b.clone(), c.clone()) else { continue };
        let refv = DVector::from_element(1, r.random_range(-5.0..5.0));
        let mut rhs = DVector::zeros(4);
        rhs[3] = refv[0];
        let oracle = m.lu().solve(&rhs).unwrap();
        let ss = plant.steady_state(&cs, &refv).unwrap();
        let dyn_res = (&a - DMatrix::<f64>::identity(3, 3)) * &ss.x_ss + &b * &ss.u_ss;
        assert!(dyn_res.norm() <= 1e-10);
        assert!((&c * &ss.x_ss - &refv).norm() <= 1e-10);
        assert!((ss.x_ss - oracle.rows(0, 3)).amax() <= 1e-9);
        assert!((ss.u_ss[0] - oracle[3]).abs() <= 1e-9);
        checked += 1;
    }
}

#[test]
fn steady_state_rejects_unreachable_reference() {
    // integrator chain: a constant nonzero velocity output has no equilibrium
    let plant = LinearPlant::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.125, 0.5]),
        DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
    )
    .unwrap();
    let cs = ConstraintSet::new(2, 1, InputSet::symmetric_box(1, 1.0), vec![]).unwrap();
    assert!(matches!(
        plant.steady_state(&cs, &DVector::from_element(1, 0.3)),
        Err(Error::InfeasibleReference { .. })
    ));
}

#[test]
fn step_examples() {
    let plant = cwh_plant(&CwhParams::default()).unwrap();
    assert_eq!(plant.step(&DVector::zeros(6), &DVector::zeros(3)), DVector::zeros(6));
    let mut r = rng(7);
    for _ in 0..100 {
        let x = random_vector(&mut r, 6, 100.0);
        let u = random_vector(&mut r, 3, 0.1);
        let got = plant.step(&x, &u);
        let oracle = naive_step(plant.a(), plant.b(), x.as_slice(), u.as_slice());
        for (g, o) in got.iter().zip(&oracle) {
            assert!((g - o).abs() <= 1e-12 * (1.0 + o.abs()));
        }
    }
}

#[test]
fn projection_examples() {
    let b = InputSet::symmetric_box(3, 0.1);
    let inside = DVector::from_vec(vec![0.05, -0.02, 0.1]);
    assert_eq!(b.project(&inside), inside);
    assert_eq!(
        b.project(&DVector::from_vec(vec![0.3, -0.05, -0.2])).as_slice(),
        &[0.1, -0.05, -0.1]
    );
    let p = InputSet::Ball { radius: 1.0 }.project(&DVector::from_vec(vec![3.0, 4.0]));
    assert_relative_eq!(p[0], 0.6, epsilon = 1e-15);
    assert_relative_eq!(p[1], 0.8, epsilon = 1e-15);
}

#[test]
fn spacecraft_constraint_examples() {
    let cs = spacecraft_constraints();
    assert!(names(&cs, &[0.0; 6], &[0.0; 3]).is_empty());

    let v = 0.2 / 3f64.sqrt();
    let report = names(&cs, &[0.0, 1.5, 0.0, v, v, v], &[0.0; 3]);
    assert_eq!(report, vec![TERMINAL_SPEED_NAME.to_string()]);

    let report = cs.check_slices(&[5.0, 10.0, 0.0, 0.0, 0.0, 0.0], &[0.0; 3]);
    let cone = report.iter().find(|v| v.name == LOS_CONE).expect("cone flagged");
    let t = 15f64.to_radians().tan();
    let oracle = 25.0 - t * t * 121.0;
    assert_relative_eq!(cone.value, oracle, epsilon = 1e-12);
    assert!((cone.value - 16.3).abs() < 0.05);
}

#[test]
fn cone_polytope_examples() {
    let facets = cone_polytope(15.0, 15, 6, 3).unwrap();
    for x2 in [0.0, 3.0, 100.0] {
        let x = [0.0, x2, 0.0, 0.0, 0.0, 0.0];
        assert!(facets.iter().all(|f| f.eval(&x, &[0.0; 3]) <= 0.0));
    }
    let square = cone_polytope(45.0, 4, 6, 3).unwrap();
    let rad = std::f64::consts::FRAC_PI_4.cos();
    for (j, f) in square.iter().enumerate() {
        let phi = std::f64::consts::FRAC_PI_2 * j as f64;
        let x = [rad * phi.cos(), 0.0, rad * phi.sin(), 0.0, 0.0, 0.0];
        assert!(f.eval(&x, &[0.0; 3]).abs() < 1e-15);
    }
    assert!(matches!(cone_polytope(90.0, 15, 6, 3), Err(Error::InvalidArgument(_))));
    assert!(matches!(cone_polytope(-1.0, 15, 6, 3), Err(Error::InvalidArgument(_))));
}

#[test]
fn cone_polytope_is_inside_the_cone() {
    let facets = cone_polytope(15.0, 15, 6, 3).unwrap();
    let t = 15f64.to_radians().tan();
    let mut r = rng(13);
    let mut accepted = 0;
    while accepted < 10_000 {
        let x2: f64 = r.random_range(-1.0..200.0);
        let w = t * (x2 + 1.0).abs() * 1.2 + 1e-3;
        let x = [r.random_range(-w..w), x2, r.random_range(-w..w), 0.0, 0.0, 0.0];
        if facets.iter().any(|f| f.eval(&x, &[0.0; 3]) > 0.0) {
            continue;
        }
        accepted += 1;
        let g = x[0] * x[0] + x[2] * x[2] - t * t * (x2 + 1.0) * (x2 + 1.0);
        assert!(g <= 1e-12, "polytope point {x:?} outside the cone ({g})");
    }
}

fn input_sets() -> impl Strategy<Value = InputSet> {
    prop_oneof![
        prop::collection::vec((0.01f64..5.0, 0.01f64..5.0), 3).prop_map(|b| InputSet::Box {
            lower: b.iter().map(|p| -p.0).collect(),
            upper: b.iter().map(|p| p.1).collect(),
        }),
        (0.01f64..5.0).prop_map(|radius| InputSet::Ball { radius }),
    ]
}

fn vec3() -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-10.0f64..10.0, 3).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn projection_is_nonexpansive(set in input_sets(), a in vec3(), b in vec3()) {
        let d = (set.project(&a) - set.project(&b)).norm();
        prop_assert!(d <= (a - b).norm() * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn projection_is_idempotent(set in input_sets(), a in vec3()) {
        let once = set.project(&a);
        let twice = set.project(&once);
        match set {
            InputSet::Box { .. } => prop_assert_eq!(once, twice),
            InputSet::Ball { .. } => prop_assert!((once - twice).amax() <= 1e-12),
        }
    }
}
