//! CSV writers and readers for trajectories, campaigns and summaries.

use std::fs::File;
use std::path::Path;

use nalgebra::DVector;

use crate::campaign::{CampaignResult, CampaignRow, Summary};
use crate::error::{HarnessError, Result};
use crate::metrics::Metrics;
use crate::sim::{SimulationRecord, Termination};

/// `%.12g`: twelve significant digits, trailing zeros trimmed.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn opt_num(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_all(path: &Path, header: Vec<String>, rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(&header).map_err(|e| HarnessError::csv(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn trajectory_header(n: usize, m: usize, p: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "t".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=m).map(|i| format!("u{i}")));
    h.extend((1..=p).map(|i| format!("v{i}")));
    h.extend(["kappa", "s", "branch", "t_comp"].map(String::from));
    h
}

pub fn write_trajectory(rec: &SimulationRecord, path: &Path) -> Result<()> {
    let n = rec.target_state.len();
    let (m, p) = (rec.input_dim, rec.output_map.nrows());
    let rows = (0..rec.len()).map(|k| {
        let mut row = vec![k.to_string(), fmt_num(k as f64 * rec.ts)];
        row.extend(rec.states[k].iter().map(|v| fmt_num(*v)));
        row.extend(rec.inputs[k].iter().map(|v| fmt_num(*v)));
        row.extend(rec.references[k].iter().map(|v| fmt_num(*v)));
        row.push(fmt_num(rec.kappa[k]));
        row.push(fmt_num(rec.s[k]));
        row.push(rec.branch[k].clone());
        row.push(fmt_num(rec.t_comp[k]));
        row
    });
    write_all(path, trajectory_header(n, m, p), rows)
}

pub fn write_violations(rec: &SimulationRecord, path: &Path) -> Result<()> {
    let header = ["step", "t", "constraint", "value"].map(String::from).to_vec();
    let rows = rec.violations.iter().map(|v| {
        vec![
            v.step.to_string(),
            fmt_num(v.step as f64 * rec.ts),
            v.constraint.clone(),
            fmt_num(v.value),
        ]
    });
    write_all(path, header, rows)
}

pub const CAMPAIGN_HEADER: [&str; 13] = [
    "ic_id",
    "variant",
    "success",
    "initialized",
    "termination",
    "steps",
    "t_conv",
    "t_ref",
    "u_cost",
    "t_comp_mean",
    "t_comp_median",
    "t_comp_max",
    "violation_count",
];

fn campaign_record(row: &CampaignRow) -> Vec<String> {
    let m = &row.metrics;
    vec![
        row.ic_id.to_string(),
        row.variant.clone(),
        m.success.to_string(),
        m.initialized.to_string(),
        m.termination.as_str().to_string(),
        m.steps.to_string(),
        opt_num(m.t_conv),
        opt_num(m.t_ref),
        fmt_num(m.u_cost),
        fmt_num(m.t_comp_mean),
        fmt_num(m.t_comp_median),
        fmt_num(m.t_comp_max),
        m.violation_count.to_string(),
    ]
}

pub fn write_campaign(rows: &[CampaignRow], path: &Path) -> Result<()> {
    write_all(path, CAMPAIGN_HEADER.map(String::from).to_vec(), rows.iter().map(campaign_record))
}

pub const SUMMARY_HEADER: [&str; 9] = ["variant", "metric", "count", "mean", "median", "q1", "q3", "min", "max"];

pub fn write_summaries(summaries: &[Summary], path: &Path) -> Result<()> {
    let rows = summaries.iter().map(|s| {
        vec![
            s.variant.clone(),
            s.metric.clone(),
            s.count.to_string(),
            fmt_num(s.mean),
            fmt_num(s.median),
            fmt_num(s.q1),
            fmt_num(s.q3),
            fmt_num(s.min),
            fmt_num(s.max),
        ]
    });
    write_all(path, SUMMARY_HEADER.map(String::from).to_vec(), rows)
}

pub fn write_initial_conditions(states: &[DVector<f64>], path: &Path) -> Result<()> {
    let n = states.first().map_or(0, |x| x.len());
    let mut header = vec!["ic_id".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    let rows = states.iter().enumerate().map(|(i, x)| {
        let mut row = vec![i.to_string()];
        row.extend(x.iter().map(|v| fmt_num(*v)));
        row
    });
    write_all(path, header, rows)
}

/// Writes `campaign.csv`, `summary.csv` and `initial_conditions.csv` into `dir`.
pub fn emit_campaign(result: &CampaignResult, initial: &[DVector<f64>], dir: &Path) -> Result<()> {
    write_campaign(&result.rows, &dir.join("campaign.csv"))?;
    write_summaries(&result.summaries, &dir.join("summary.csv"))?;
    write_initial_conditions(initial, &dir.join("initial_conditions.csv"))
}

/// One parsed trajectory row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub kappa: f64,
    pub s: f64,
    pub branch: String,
    pub t_comp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub rows: Vec<TrajectoryRow>,
}

fn parse_f64(path: &Path, field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        HarnessError::Config(format!("{}: line {line}: `{field}` is not a number", path.display()))
    })
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

pub fn read_header(path: &Path) -> Result<Vec<String>> {
    let mut r = reader(path)?;
    let h = r.headers().map_err(|e| HarnessError::csv(path, e))?;
    Ok(h.iter().map(String::from).collect())
}

fn count_prefixed(header: &[String], prefix: char) -> usize {
    header
        .iter()
        .filter(|h| h.starts_with(prefix) && h[1..].parse::<usize>().is_ok())
        .count()
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryTable> {
    let mut r = reader(path)?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| HarnessError::csv(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let (n, m, p) = (
        count_prefixed(&header, 'x'),
        count_prefixed(&header, 'u'),
        count_prefixed(&header, 'v'),
    );
    if header != trajectory_header(n, m, p) {
        return Err(HarnessError::Config(format!(
            "{}: not a trajectory file (header {:?})",
            path.display(),
            header
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::csv(path, e))?;
        let line = i + 2;
        let num = |j: usize| parse_f64(path, &rec[j], line);
        let vec_of = |from: usize, len: usize| (from..from + len).map(num).collect::<Result<Vec<_>>>();
        let base = 2 + n + m + p;
        rows.push(TrajectoryRow {
            step: num(0)? as usize,
            t: num(1)?,
            x: vec_of(2, n)?,
            u: vec_of(2 + n, m)?,
            v: vec_of(2 + n + m, p)?,
            kappa: num(base)?,
            s: num(base + 1)?,
            branch: rec[base + 2].to_string(),
            t_comp: num(base + 3)?,
        });
    }
    Ok(TrajectoryTable { n, m, p, rows })
}

pub fn read_campaign(path: &Path) -> Result<Vec<CampaignRow>> {
    let mut r = reader(path)?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| HarnessError::csv(path, e))?
        .iter()
        .map(String::from)
        .collect();
    if header != CAMPAIGN_HEADER {
        return Err(HarnessError::Config(format!("{}: not a campaign file", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::csv(path, e))?;
        let line = i + 2;
        let bad = |what: &str| HarnessError::Config(format!("{}: line {line}: bad {what}", path.display()));
        let num = |j: usize| parse_f64(path, &rec[j], line);
        let opt = |j: usize| -> Result<Option<f64>> {
            if rec[j].is_empty() {
                Ok(None)
            } else {
                num(j).map(Some)
            }
        };
        let flag = |j: usize| rec[j].parse::<bool>().map_err(|_| bad(CAMPAIGN_HEADER[j]));
        let int = |j: usize| rec[j].parse::<usize>().map_err(|_| bad(CAMPAIGN_HEADER[j]));
        rows.push(CampaignRow {
            ic_id: int(0)?,
            variant: rec[1].to_string(),
            metrics: Metrics {
                success: flag(2)?,
                initialized: flag(3)?,
                termination: Termination::parse(&rec[4]).ok_or_else(|| bad("termination"))?,
                steps: int(5)?,
                t_conv: opt(6)?,
                t_ref: opt(7)?,
                u_cost: num(8)?,
                t_comp_mean: num(9)?,
                t_comp_median: num(10)?,
                t_comp_max: num(11)?,
                violation_count: int(12)?,
            },
        });
    }
    Ok(rows)
}
