#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use rgmpc_core::plant::{Constraint, InputSet};
use rgmpc_harness::config::{BoxSpec, InitialSpec, InlineScenario, ScenarioSource, SCHEMA_VERSION};
use rgmpc_harness::sim::{SimulationRecord, Termination};
use rgmpc_harness::{ScenarioConfig, VariantKind, VariantSpec};

/// Double integrator, `Ts = 0.5`, `|u| <= 1`, `|x2| <= 0.5`, target `y = 2`.
pub fn toy_inline() -> InlineScenario {
    InlineScenario {
        name: "double-integrator".to_string(),
        ts: 0.5,
        a: vec![vec![1.0, 0.5], vec![0.0, 1.0]],
        b: vec![vec![0.125], vec![0.5]],
        c: vec![vec![1.0, 0.0]],
        input_set: InputSet::symmetric_box(1, 1.0),
        constraints: vec![
            Constraint::linear("speed-max", &[0.0, 1.0], &[0.0], 0.5),
            Constraint::linear("speed-min", &[0.0, -1.0], &[0.0], 0.5),
        ],
        target: vec![2.0],
        reference_box: Some(BoxSpec {
            lower: vec![-5.0],
            upper: vec![5.0],
        }),
    }
}

pub fn toy_config(initial: InitialSpec, variants: Vec<VariantSpec>) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::preset("unused", initial, variants);
    cfg.scenario = ScenarioSource::Inline(Box::new(toy_inline()));
    cfg.schema_version = SCHEMA_VERSION;
    cfg
}

pub fn all_variants() -> Vec<VariantSpec> {
    vec![
        VariantSpec::new(VariantKind::Rgmpc),
        VariantSpec::new(VariantKind::SlqrRg),
        VariantSpec::new(VariantKind::Umpc),
        VariantSpec::cmpc(10),
    ]
}

/// A record with the given inputs and otherwise inert content.
pub fn record_with_inputs(inputs: Vec<DVector<f64>>, ts: f64) -> SimulationRecord {
    let len = inputs.len();
    let m = inputs.first().map_or(1, |u| u.len());
    SimulationRecord {
        variant: "rgmpc".to_string(),
        kind: VariantKind::Rgmpc,
        ic_id: 0,
        ts,
        states: vec![DVector::zeros(2); len],
        inputs,
        references: vec![DVector::zeros(1); len],
        kappa: vec![0.0; len],
        s: vec![1.0; len],
        branch: vec!["advance".to_string(); len],
        t_comp: vec![1e-3; len],
        final_state: DVector::zeros(2),
        target_state: DVector::zeros(2),
        output_map: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        input_dim: m,
        termination: Termination::Converged,
        initialized: true,
        violations: Vec::new(),
        message: None,
    }
}
