mod common;

use nalgebra::DVector;

use rgmpc_harness::config::InitialSpec;
use rgmpc_harness::sim::Termination;
use rgmpc_harness::{compute_metrics, run_campaign, simulate_config, CampaignOptions, VariantKind, VariantSpec};

use common::{all_variants, record_with_inputs, toy_config};

fn naive_step(a: &[Vec<f64>], b: &[Vec<f64>], x: &[f64], u: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += a[i][j] * xj;
            }
            for (j, uj) in u.iter().enumerate() {
                acc += b[i][j] * uj;
            }
            acc
        })
        .collect()
}

#[test]
fn input_cost_examples() {
    let spec = Default::default();
    let zero = record_with_inputs(vec![DVector::zeros(1); 20], 0.5);
    assert_eq!(compute_metrics(&zero, &spec).u_cost, 0.0);
    // |u| = 0.1 for 10 s
    let u = DVector::from_vec(vec![0.06, 0.08]);
    let constant = record_with_inputs(vec![u; 20], 0.5);
    assert!((compute_metrics(&constant, &spec).u_cost - 0.1).abs() <= 1e-15);
}

#[test]
fn metric_examples() {
    let spec = Default::default();
    let mut rec = record_with_inputs(vec![DVector::zeros(1); 4], 0.5);
    rec.s = vec![0.2, 0.7, 1.0, 1.0];
    rec.states = [3.0, 0.05, 1.0, 0.0].iter().map(|p| DVector::from_vec(vec![*p, 0.0])).collect();
    let m = compute_metrics(&rec, &spec);
    assert_eq!(m.t_ref, Some(1.0));
    // the excursion at step 2 resets the convergence time
    assert_eq!(m.t_conv, Some(1.5));
    assert!(m.success);
    assert_eq!(m.steps, 4);
    assert!((m.t_comp_mean - 1e-3).abs() < 1e-18);

    rec.termination = Termination::OcpInfeasible;
    assert!(!compute_metrics(&rec, &spec).success);
    rec.initialized = false;
    let m = compute_metrics(&rec, &spec);
    assert!(!m.success && m.t_conv.is_none());
}

#[test]
fn starting_at_the_target_converges_immediately() {
    for variant in all_variants() {
        let cfg = toy_config(InitialSpec::State(vec![2.0, 0.0]), vec![variant.clone()]).resolve().unwrap();
        let rec = simulate_config(&cfg, &variant, 0).unwrap();
        let m = compute_metrics(&rec, &cfg.convergence);
        assert_eq!(m.termination, Termination::Converged, "{}", variant.label());
        assert_eq!(m.t_conv, Some(0.0), "{}", variant.label());
        assert_eq!(m.t_ref, Some(0.0), "{}", variant.label());
        assert_eq!(m.steps, cfg.convergence.settle_steps);
        assert!(m.u_cost <= 1e-12);
    }
}

#[test]
fn recorded_states_follow_the_plant() {
    let cfg = toy_config(InitialSpec::States(vec![vec![-4.0, 0.0], vec![1.0, 0.5]]), all_variants())
        .resolve()
        .unwrap();
    let inline = common::toy_inline();
    for ic in 0..cfg.initial_states.len() {
        for variant in &cfg.variants {
            let rec = simulate_config(&cfg, variant, ic).unwrap();
            assert_eq!(rec.states[0], cfg.initial_states[ic]);
            let mut next_states = rec.states[1..].to_vec();
            next_states.push(rec.final_state.clone());
            for ((x, u), next) in rec.states.iter().zip(&rec.inputs).zip(&next_states) {
                let oracle = naive_step(&inline.a, &inline.b, x.as_slice(), u.as_slice());
                for (o, n) in oracle.iter().zip(next.iter()) {
                    assert!((o - n).abs() <= 1e-12 * (1.0 + o.abs()));
                }
            }
            assert_eq!(rec.inputs.len(), rec.len());
            assert_eq!(rec.references.len(), rec.len());
            assert_eq!(rec.t_comp.len(), rec.len());
        }
    }
}

#[test]
fn governed_runs_reach_the_target_without_violations() {
    let cfg = toy_config(
        InitialSpec::States(vec![vec![-4.0, 0.0], vec![4.5, -0.5]]),
        vec![VariantSpec::new(VariantKind::Rgmpc), VariantSpec::new(VariantKind::SlqrRg)],
    )
    .resolve()
    .unwrap();
    let result = run_campaign(&cfg, CampaignOptions::default()).unwrap();
    assert_eq!(result.rows.len(), 4);
    for row in &result.rows {
        let m = &row.metrics;
        assert!(m.success, "{row:?}");
        assert_eq!(m.termination, Termination::Converged);
        assert_eq!(m.violation_count, 0);
        assert!(m.t_ref.unwrap() <= m.t_conv.unwrap() + 1e-12 || m.t_conv.is_some());
    }
}

#[test]
fn campaigns_are_deterministic() {
    let cfg = toy_config(InitialSpec::Random { count: 6 }, all_variants()).resolve().unwrap();
    let serial = run_campaign(
        &cfg,
        CampaignOptions {
            threads: 1,
            keep_records: true,
        },
    )
    .unwrap();
    let parallel = run_campaign(
        &cfg,
        CampaignOptions {
            threads: 3,
            keep_records: true,
        },
    )
    .unwrap();
    assert_eq!(serial.rows.len(), 6 * 4);
    for (a, b) in serial.rows.iter().zip(&parallel.rows) {
        assert_eq!((a.ic_id, &a.variant), (b.ic_id, &b.variant));
        assert_eq!(a.metrics.without_timing(), b.metrics.without_timing());
    }
    for (a, b) in serial.records.iter().zip(&parallel.records) {
        assert_eq!(a.states, b.states);
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.references, b.references);
    }

    // replaying one run gives bit-identical trajectories
    let rec = simulate_config(&cfg, &cfg.variants[0], 3).unwrap();
    let again = simulate_config(&cfg, &cfg.variants[0], 3).unwrap();
    assert_eq!(rec.states, again.states);
    assert_eq!(rec.inputs, again.inputs);
}

#[test]
fn summary_counts_match_rows() {
    let cfg = toy_config(InitialSpec::Random { count: 5 }, all_variants()).resolve().unwrap();
    let result = run_campaign(&cfg, CampaignOptions::default()).unwrap();
    for v in &cfg.variants {
        let label = v.label();
        let success = result.summary(&label, "success").unwrap();
        assert_eq!(success.count, 5);
        let expected = result.rows_for(&label).filter(|r| r.metrics.success).count() as f64 / 5.0;
        assert!((success.mean - expected).abs() < 1e-15);
        assert_eq!(result.success_count(&label), (expected * 5.0).round() as usize);
        let cost = result.summary(&label, "u_cost").unwrap();
        let mean = result.rows_for(&label).map(|r| r.metrics.u_cost).sum::<f64>() / 5.0;
        assert!((cost.mean - mean).abs() <= 1e-12 * (1.0 + mean));
        assert!(cost.min <= cost.q1 && cost.q1 <= cost.median && cost.median <= cost.q3 && cost.q3 <= cost.max);
    }
}
