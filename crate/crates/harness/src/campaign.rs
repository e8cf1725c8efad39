//! Batches of (initial condition, variant) simulations and their statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ResolvedConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{compute_metrics, quantile_sorted, Metrics};
use crate::sim::{simulate_config, SimulationRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub ic_id: usize,
    pub variant: String,
    pub metrics: Metrics,
}

/// Five-number summary plus mean of one metric over one variant's rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub variant: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(variant: &str, metric: &str, values: &[f64]) -> Self {
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        sorted.sort_by(f64::total_cmp);
        let count = sorted.len();
        let mean = if count == 0 {
            f64::NAN
        } else {
            sorted.iter().sum::<f64>() / count as f64
        };
        Self {
            variant: variant.to_string(),
            metric: metric.to_string(),
            count,
            mean,
            median: quantile_sorted(&sorted, 0.5),
            q1: quantile_sorted(&sorted, 0.25),
            q3: quantile_sorted(&sorted, 0.75),
            min: sorted.first().copied().unwrap_or(f64::NAN),
            max: sorted.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CampaignResult {
    /// Ordered by `ic_id`, then by the config's variant order.
    pub rows: Vec<CampaignRow>,
    pub summaries: Vec<Summary>,
    /// Full trajectories, when requested.
    pub records: Vec<SimulationRecord>,
}

impl CampaignResult {
    pub fn rows_for<'a>(&'a self, variant: &'a str) -> impl Iterator<Item = &'a CampaignRow> + 'a {
        self.rows.iter().filter(move |r| r.variant == variant)
    }

    pub fn summary(&self, variant: &str, metric: &str) -> Option<&Summary> {
        self.summaries
            .iter()
            .find(|s| s.variant == variant && s.metric == metric)
    }

    pub fn success_count(&self, variant: &str) -> usize {
        self.rows_for(variant).filter(|r| r.metrics.success).count()
    }
}

pub const SUMMARY_METRICS: [&str; 6] = ["success", "t_conv", "u_cost", "t_comp_mean", "t_comp_max", "violation_count"];

fn metric_value(m: &Metrics, metric: &str) -> Option<f64> {
    match metric {
        "success" => Some(if m.success { 1.0 } else { 0.0 }),
        "t_conv" => m.t_conv,
        "u_cost" => Some(m.u_cost),
        "t_comp_mean" => Some(m.t_comp_mean),
        "t_comp_max" => Some(m.t_comp_max),
        "violation_count" => Some(m.violation_count as f64),
        _ => None,
    }
}

/// Per-variant statistics; `t_conv` only over runs that converged.
pub fn summarize(rows: &[CampaignRow], variants: &[String]) -> Vec<Summary> {
    let mut out = Vec::new();
    for variant in variants {
        for metric in SUMMARY_METRICS {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| &r.variant == variant)
                .filter_map(|r| metric_value(&r.metrics, metric))
                .collect();
            out.push(Summary::of(variant, metric, &values));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CampaignOptions {
    /// Worker threads; 0 or 1 runs serially.
    pub threads: usize,
    pub keep_records: bool,
}

/// Runs every (initial condition, variant) pair. Individual failures become
/// rows; only harness errors (a scenario whose target has no steady state)
/// abort the campaign.
pub fn run_campaign(cfg: &ResolvedConfig, opts: CampaignOptions) -> Result<CampaignResult> {
    let jobs: Vec<(usize, usize)> = (0..cfg.initial_states.len())
        .flat_map(|ic| (0..cfg.variants.len()).map(move |v| (ic, v)))
        .collect();
    let run = |&(ic, v): &(usize, usize)| -> Result<(CampaignRow, Option<SimulationRecord>)> {
        let variant = &cfg.variants[v];
        let rec = simulate_config(cfg, variant, ic)?;
        let row = CampaignRow {
            ic_id: ic,
            variant: variant.label(),
            metrics: compute_metrics(&rec, &cfg.convergence),
        };
        Ok((row, opts.keep_records.then_some(rec)))
    };
    let results: Vec<Result<(CampaignRow, Option<SimulationRecord>)>> = if opts.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| HarnessError::Config(format!("cannot start {} workers: {e}", opts.threads)))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    } else {
        jobs.iter().map(run).collect()
    };

    let mut rows = Vec::with_capacity(jobs.len());
    let mut records = Vec::new();
    for r in results {
        let (row, rec) = r?;
        rows.push(row);
        records.extend(rec);
    }
    let labels: Vec<String> = cfg.variants.iter().map(|v| v.label()).collect();
    let summaries = summarize(&rows, &labels);
    Ok(CampaignResult {
        rows,
        summaries,
        records,
    })
}
