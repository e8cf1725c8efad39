mod common;

use nalgebra::DVector;
use proptest::prelude::*;

use rgmpc_harness::config::InitialSpec;
use rgmpc_harness::output::{
    fmt_num, read_campaign, read_header, read_trajectory, trajectory_header, write_campaign, write_trajectory,
    CAMPAIGN_HEADER,
};
use rgmpc_harness::plot::plot_data;
use rgmpc_harness::sim::{simulate, Termination};
use rgmpc_harness::{compute_metrics, run_campaign, simulate_config, CampaignOptions, ScenarioConfig, VariantKind, VariantSpec};

use common::{all_variants, record_with_inputs, toy_config};

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn number_format_examples() {
    assert_eq!(fmt_num(0.0), "0");
    assert_eq!(fmt_num(1.0), "1");
    assert_eq!(fmt_num(-2.5), "-2.5");
    assert_eq!(fmt_num(0.1), "0.1");
    assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
    assert_eq!(fmt_num(123456.7890123456), "123456.789012");
    assert_eq!(fmt_num(1e-7), "1e-07");
    assert_eq!(fmt_num(-1.234567890123456e20), "-1.23456789012e+20");
    assert_eq!(fmt_num(f64::NAN), "nan");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(5_000))]

    #[test]
    fn twelve_significant_digits(mantissa in -1.0f64..1.0, exp in -30i32..30) {
        let x = mantissa * 10f64.powi(exp);
        let text = fmt_num(x);
        let back: f64 = text.parse().unwrap();
        prop_assert!(rel_close(back, x, 5e-12) || x == 0.0, "{x} -> {text}");
        let digits = text
            .split(['e', 'E'])
            .next()
            .unwrap()
            .chars()
            .filter(char::is_ascii_digit)
            .collect::<String>();
        prop_assert!(digits.trim_start_matches('0').len() <= 12, "{text}");
    }
}

#[test]
fn trajectory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(InitialSpec::State(vec![-3.0, 0.2]), all_variants()).resolve().unwrap();
    for variant in &cfg.variants {
        let rec = simulate_config(&cfg, variant, 0).unwrap();
        let path = dir.path().join(format!("{}.csv", variant.label()));
        write_trajectory(&rec, &path).unwrap();
        let table = read_trajectory(&path).unwrap();
        assert_eq!((table.n, table.m, table.p), (2, 1, 1));
        assert_eq!(table.rows.len(), rec.len());
        for (k, row) in table.rows.iter().enumerate() {
            assert_eq!(row.step, k);
            assert!(rel_close(row.t, k as f64 * 0.5, 1e-12));
            for (a, b) in row.x.iter().zip(rec.states[k].iter()) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
            for (a, b) in row.u.iter().zip(rec.inputs[k].iter()) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
            assert!((row.v[0] - rec.references[k][0]).abs() <= 1e-9);
            assert!((row.s - rec.s[k]).abs() <= 1e-9);
            assert_eq!(row.branch, rec.branch[k]);
        }
    }
}

#[test]
fn cwh_trajectory_header() {
    let h = trajectory_header(6, 3, 3).join(",");
    assert_eq!(h, "step,t,x1,x2,x3,x4,x5,x6,u1,u2,u3,v1,v2,v3,kappa,s,branch,t_comp");
}

#[test]
fn single_step_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::preset(
        "cwh-500km-default",
        InitialSpec::State(vec![10.0, 100.0, 20.0, 0.0, 0.0, 0.0]),
        vec![VariantSpec::new(VariantKind::Rgmpc)],
    );
    cfg.max_steps = 1;
    let cfg = cfg.resolve().unwrap();
    let rec = simulate_config(&cfg, &cfg.variants[0], 0).unwrap();
    assert_eq!(rec.termination, Termination::HorizonCap);
    let path = dir.path().join("one.csv");
    write_trajectory(&rec, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), 18);
    assert_eq!(lines[1].split(',').count(), 18);
    assert!(lines[1].starts_with("0,0,10,100,20,0,0,0,"));
}

#[test]
fn campaign_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(InitialSpec::Random { count: 4 }, all_variants()).resolve().unwrap();
    let result = run_campaign(&cfg, CampaignOptions::default()).unwrap();
    let path = dir.path().join("campaign.csv");
    write_campaign(&result.rows, &path).unwrap();
    assert_eq!(read_header(&path).unwrap(), CAMPAIGN_HEADER);
    let back = read_campaign(&path).unwrap();
    assert_eq!(back.len(), 4 * 4);
    for (a, b) in back.iter().zip(&result.rows) {
        assert_eq!((a.ic_id, &a.variant), (b.ic_id, &b.variant));
        let (ma, mb) = (&a.metrics, &b.metrics);
        assert_eq!(
            (ma.success, ma.initialized, ma.termination, ma.steps, ma.violation_count),
            (mb.success, mb.initialized, mb.termination, mb.steps, mb.violation_count)
        );
        assert!(rel_close(ma.u_cost, mb.u_cost, 1e-9) || mb.u_cost == 0.0);
        assert_eq!(ma.t_conv.is_some(), mb.t_conv.is_some());
        if let (Some(x), Some(y)) = (ma.t_conv, mb.t_conv) {
            assert!((x - y).abs() <= 1e-9);
        }
        assert!(rel_close(ma.t_comp_max, mb.t_comp_max, 1e-9));
    }
    // one row per (ic, variant)
    let mut keys: Vec<(usize, String)> = back.iter().map(|r| (r.ic_id, r.variant.clone())).collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), back.len());
}

#[test]
fn empty_campaign_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    write_campaign(&[], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.trim_end(), CAMPAIGN_HEADER.join(","));
    assert!(read_campaign(&path).unwrap().is_empty());
}

#[test]
fn metrics_agree_with_the_written_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(InitialSpec::States(vec![vec![-4.0, 0.0], vec![3.0, 0.5]]), all_variants())
        .resolve()
        .unwrap();
    for ic in 0..2 {
        for variant in &cfg.variants {
            let rec = simulate(&cfg.scenario, variant, &cfg.initial_states[ic], ic, 200, cfg.convergence, &cfg.cmpc)
                .unwrap();
            let metrics = compute_metrics(&rec, &cfg.convergence);
            let path = dir.path().join("t.csv");
            write_trajectory(&rec, &path).unwrap();
            let table = read_trajectory(&path).unwrap();
            let u_cost: f64 = table.rows.iter().map(|r| r.u.iter().map(|u| u * u).sum::<f64>() * 0.5).sum();
            assert!((u_cost - metrics.u_cost).abs() <= 1e-9 * (1.0 + u_cost));
            let t_ref = table.rows.iter().find(|r| r.s >= 1.0).map(|r| r.t);
            assert_eq!(t_ref, metrics.t_ref);
            assert_eq!(table.rows.len(), metrics.steps);
            let max = table.rows.iter().map(|r| r.t_comp).fold(0.0, f64::max);
            assert!(rel_close(max, metrics.t_comp_max, 1e-9));
            assert_eq!(metrics.violation_count, rec.violations.len());
        }
    }
}

#[test]
fn plot_tables_from_cwh_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::preset(
        "cwh-500km-default",
        InitialSpec::State(vec![10.0, 100.0, 20.0, 0.0, 0.0, 0.0]),
        vec![VariantSpec::new(VariantKind::Rgmpc)],
    );
    cfg.max_steps = 30;
    let cfg = cfg.resolve().unwrap();
    let rec = simulate_config(&cfg, &cfg.variants[0], 0).unwrap();
    let path = dir.path().join("trajectory.csv");
    write_trajectory(&rec, &path).unwrap();
    let out = dir.path().join("fig");
    std::fs::create_dir(&out).unwrap();
    let written = plot_data(&path, &out).unwrap();
    assert!(written.len() >= 4);
    for file in &written {
        assert!(read_header(file).unwrap().len() >= 2);
    }

    let campaign = dir.path().join("campaign.csv");
    let rows = vec![rgmpc_harness::CampaignRow {
        ic_id: 0,
        variant: "rgmpc".to_string(),
        metrics: compute_metrics(&rec, &cfg.convergence),
    }];
    write_campaign(&rows, &campaign).unwrap();
    let written = plot_data(&campaign, &out).unwrap();
    assert_eq!(written.len(), 1);

    // toy trajectories are not rendezvous records
    let toy = record_with_inputs(vec![DVector::zeros(1); 3], 0.5);
    let toy_path = dir.path().join("toy.csv");
    write_trajectory(&toy, &toy_path).unwrap();
    assert!(plot_data(&toy_path, &out).is_err());
}
