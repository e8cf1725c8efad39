use serde::{Deserialize, Serialize};

use crate::config::ConvergenceSpec;
use crate::sim::{ConvergenceBall, SimulationRecord, Termination};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub success: bool,
    pub initialized: bool,
    pub termination: Termination,
    pub steps: usize,
    /// First time after which the state never leaves the convergence ball.
    pub t_conv: Option<f64>,
    /// First time the governed reference equals `r` (`s = 1`).
    pub t_ref: Option<f64>,
    /// `sum_k ||u_k||^2 Ts`
    pub u_cost: f64,
    pub t_comp_mean: f64,
    pub t_comp_median: f64,
    pub t_comp_max: f64,
    pub violation_count: usize,
}

impl Metrics {
    /// Timing columns zeroed, for comparisons that must be machine independent.
    pub fn without_timing(&self) -> Self {
        Self {
            t_comp_mean: 0.0,
            t_comp_median: 0.0,
            t_comp_max: 0.0,
            ..self.clone()
        }
    }
}

/// Linear-interpolation quantile of sorted data, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn compute_metrics(rec: &SimulationRecord, spec: &ConvergenceSpec) -> Metrics {
    let steps = rec.len();
    let u_cost: f64 = rec.inputs.iter().map(|u| u.norm_squared() * rec.ts).sum();

    let t_conv = if rec.initialized {
        // walk back from the final state while it stays inside the ball
        let ball = ConvergenceBall::new(&rec.output_map, rec.target_state.clone(), *spec);
        let points: Vec<_> = rec.trajectory().collect();
        let mut first_inside = None;
        for (k, x) in points.iter().enumerate().rev() {
            if ball.contains(x) {
                first_inside = Some(k);
            } else {
                break;
            }
        }
        first_inside.map(|k| k as f64 * rec.ts)
    } else {
        None
    };
    let t_ref = rec.s.iter().position(|s| *s >= 1.0).map(|k| k as f64 * rec.ts);

    let mut times = rec.t_comp.clone();
    times.sort_by(f64::total_cmp);
    let (mean, median, max) = if times.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        (
            times.iter().sum::<f64>() / times.len() as f64,
            quantile_sorted(&times, 0.5),
            *times.last().unwrap(),
        )
    };
    Metrics {
        success: rec.initialized && rec.violations.is_empty() && rec.termination != Termination::OcpInfeasible,
        initialized: rec.initialized,
        termination: rec.termination,
        steps,
        t_conv,
        t_ref,
        u_cost,
        t_comp_mean: mean,
        t_comp_median: median,
        t_comp_max: max,
        violation_count: rec.violations.len(),
    }
}
