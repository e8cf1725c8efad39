//! Per-figure CSV tables derived from trajectory and campaign files.

use std::path::{Path, PathBuf};

use rgmpc_core::spacecraft::{CONE_HALF_ANGLE_DEG, SPEED_BOUND, TERMINAL_SPEED, TERMINAL_ZONE_X2};

use crate::campaign::{summarize, CampaignRow};
use crate::error::{HarnessError, Result};
use crate::output::{fmt_num, read_campaign, read_header, read_trajectory, write_summaries, CAMPAIGN_HEADER};

fn write_table(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    w.write_record(header).map_err(|e| HarnessError::csv(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Emits the figure tables for `record` into `out` and returns the files
/// written. Trajectory files of the 6-state rendezvous model give the
/// trajectory, reference timeline, projection, cone and speed tables; campaign
/// files give the box-plot statistics.
pub fn plot_data(record: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let header = read_header(record)?;
    if header == CAMPAIGN_HEADER {
        let rows = read_campaign(record)?;
        return campaign_figures(&rows, out);
    }
    let table = read_trajectory(record)?;
    if table.n != 6 || table.p != 3 {
        return Err(HarnessError::Config(format!(
            "{}: figure tables need the 6-state, 3-output rendezvous model",
            record.display()
        )));
    }
    let mut written = Vec::new();
    let mut emit = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
        let path = out.join(name);
        write_table(&path, header, rows)?;
        written.push(path);
        Ok(())
    };

    emit(
        "fig1_trajectory.csv",
        &["t", "x1", "x2", "x3", "v1", "v2", "v3"],
        table
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![fmt_num(r.t)];
                row.extend(r.x[..3].iter().chain(&r.v).map(|v| fmt_num(*v)));
                row
            })
            .collect(),
    )?;

    let mut prev: Option<&[f64]> = None;
    let timeline = table
        .rows
        .iter()
        .map(|r| {
            let changed = prev.is_some_and(|p| p != r.v.as_slice());
            prev = Some(&r.v);
            vec![
                r.step.to_string(),
                fmt_num(r.t),
                fmt_num(r.kappa),
                fmt_num(r.s),
                r.branch.clone(),
                (changed as u8).to_string(),
            ]
        })
        .collect();
    emit(
        "fig2_reference_timeline.csv",
        &["step", "t", "kappa", "s", "branch", "reference_changed"],
        timeline,
    )?;

    emit(
        "fig3_projections.csv",
        &["t", "x1", "x2", "x3"],
        table
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![fmt_num(r.t)];
                row.extend(r.x[..3].iter().map(|v| fmt_num(*v)));
                row
            })
            .collect(),
    )?;

    let x2_max = table.rows.iter().map(|r| r.x[1]).fold(0.0, f64::max).max(1.0);
    let tan = CONE_HALF_ANGLE_DEG.to_radians().tan();
    let samples = 200;
    emit(
        "fig3_cone_boundary.csv",
        &["x2", "half_width"],
        (0..=samples)
            .map(|i| {
                let x2 = x2_max * i as f64 / samples as f64;
                vec![fmt_num(x2), fmt_num(tan * (x2 + 1.0))]
            })
            .collect(),
    )?;

    emit(
        "fig4_speed.csv",
        &["t", "x2", "speed", "speed_bound", "in_terminal_zone"],
        table
            .rows
            .iter()
            .map(|r| {
                let speed = r.x[3..6].iter().map(|v| v * v).sum::<f64>().sqrt();
                let terminal = r.x[1] <= TERMINAL_ZONE_X2;
                let bound = if terminal {
                    TERMINAL_SPEED
                } else {
                    SPEED_BOUND * 3f64.sqrt()
                };
                vec![
                    fmt_num(r.t),
                    fmt_num(r.x[1]),
                    fmt_num(speed),
                    fmt_num(bound),
                    (terminal as u8).to_string(),
                ]
            })
            .collect(),
    )?;
    Ok(written)
}

fn campaign_figures(rows: &[CampaignRow], out: &Path) -> Result<Vec<PathBuf>> {
    let mut variants: Vec<String> = Vec::new();
    for r in rows {
        if !variants.contains(&r.variant) {
            variants.push(r.variant.clone());
        }
    }
    let path = out.join("fig5_statistics.csv");
    write_summaries(&summarize(rows, &variants), &path)?;
    Ok(vec![path])
}
