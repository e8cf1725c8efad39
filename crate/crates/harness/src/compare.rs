use std::path::Path;

use crate::campaign::{run_campaign, CampaignOptions, CampaignResult, SUMMARY_METRICS};
use crate::config::ResolvedConfig;
use crate::error::{HarnessError, Result};
use crate::output::{emit_campaign, fmt_num};

/// A named campaign taking part in a comparison.
pub struct Entry<'a> {
    pub name: String,
    pub config: &'a ResolvedConfig,
}

/// Runs each campaign into `out/<name>/` and writes `comparison.csv` with the
/// mean and median of every metric side by side, one row per variant and
/// metric.
pub fn compare(entries: &[Entry<'_>], out: &Path, opts: CampaignOptions) -> Result<Vec<CampaignResult>> {
    let mut results = Vec::with_capacity(entries.len());
    for e in entries {
        let dir = out.join(&e.name);
        std::fs::create_dir_all(&dir).map_err(|err| HarnessError::io(&dir, err))?;
        let result = run_campaign(e.config, opts)?;
        emit_campaign(&result, &e.config.initial_states, &dir)?;
        results.push(result);
    }

    let mut variants: Vec<String> = Vec::new();
    for e in entries {
        for v in &e.config.variants {
            if !variants.contains(&v.label()) {
                variants.push(v.label());
            }
        }
    }
    let mut header = vec!["variant".to_string(), "metric".to_string()];
    for e in entries {
        header.push(format!("{}_mean", e.name));
        header.push(format!("{}_median", e.name));
    }
    let path = out.join("comparison.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::csv(&path, e))?;
    w.write_record(&header).map_err(|e| HarnessError::csv(&path, e))?;
    for variant in &variants {
        for metric in SUMMARY_METRICS {
            let mut row = vec![variant.clone(), metric.to_string()];
            for result in &results {
                match result.summary(variant, metric) {
                    Some(s) => {
                        row.push(fmt_num(s.mean));
                        row.push(fmt_num(s.median));
                    }
                    None => row.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&row).map_err(|e| HarnessError::csv(&path, e))?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    Ok(results)
}
