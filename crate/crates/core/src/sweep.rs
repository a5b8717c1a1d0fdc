//! Load sweeps over the model and the simulator, their CSV form and the
//! model-vs-simulation check.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::model::{capacity, evaluate, ModelReport};
use crate::scenario::Scenario;
use crate::sim::{self, batch_ci95, SimReport};

pub const CSV_HEADER: [&str; 6] = [
    "lambda_fps",
    "per_model",
    "per_sim_mean",
    "per_sim_ci95",
    "capacity_fps",
    "validity",
];

/// Decimal rendering with nine significant digits.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 {
            "0".to_string()
        } else {
            v.to_string()
        };
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Ok,
    OverCapacity,
    NoAttempts,
    Error,
}

impl Validity {
    fn rank(self) -> u8 {
        match self {
            Validity::Ok => 0,
            Validity::OverCapacity => 1,
            Validity::NoAttempts => 2,
            Validity::Error => 3,
        }
    }

    /// The more severe of the two flags.
    pub fn worst(self, other: Validity) -> Validity {
        if other.rank() > self.rank() {
            other
        } else {
            self
        }
    }
}

impl fmt::Display for Validity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Validity::Ok => "ok",
            Validity::OverCapacity => "over_capacity",
            Validity::NoAttempts => "no_attempts",
            Validity::Error => "error",
        })
    }
}

impl FromStr for Validity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(Validity::Ok),
            "over_capacity" => Ok(Validity::OverCapacity),
            "no_attempts" => Ok(Validity::NoAttempts),
            "error" => Ok(Validity::Error),
            other => Err(Error::config(format!("unknown validity flag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda_fps: f64,
    pub per_model: Option<f64>,
    pub per_sim_mean: Option<f64>,
    pub per_sim_ci95: Option<f64>,
    pub capacity_fps: f64,
    pub validity: Validity,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(format_sig).unwrap_or_default()
}

fn parse_num(field: &str, line: usize) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::config(format!("line {line}: bad number {field:?}")))
}

fn parse_opt(field: &str, line: usize) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_num(field, line).map(Some)
    }
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                format_sig(r.lambda_fps),
                opt(r.per_model),
                opt(r.per_sim_mean),
                opt(r.per_sim_ci95),
                format_sig(r.capacity_fps),
                r.validity.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(csv_err)?;
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::config(format!(
                "unexpected CSV header {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let line = i + 2;
            if rec.len() != CSV_HEADER.len() {
                return Err(Error::config(format!(
                    "line {line}: expected {} fields",
                    CSV_HEADER.len()
                )));
            }
            rows.push(SweepRow {
                lambda_fps: parse_num(&rec[0], line)?,
                per_model: parse_opt(&rec[1], line)?,
                per_sim_mean: parse_opt(&rec[2], line)?,
                per_sim_ci95: parse_opt(&rec[3], line)?,
                capacity_fps: parse_num(&rec[4], line)?,
                validity: rec[5].parse()?,
            });
        }
        Ok(SweepResult { rows })
    }

    /// Joins model and simulation columns of two sweeps over the same grid.
    pub fn merge(model: &SweepResult, sim: &SweepResult) -> Result<SweepResult> {
        if model.rows.len() != sim.rows.len() {
            return Err(Error::Internal("sweeps cover different grids".into()));
        }
        let rows = model
            .rows
            .iter()
            .zip(&sim.rows)
            .map(|(m, s)| SweepRow {
                lambda_fps: m.lambda_fps,
                per_model: m.per_model,
                per_sim_mean: s.per_sim_mean,
                per_sim_ci95: s.per_sim_ci95,
                capacity_fps: m.capacity_fps,
                validity: m.validity.worst(s.validity),
            })
            .collect();
        Ok(SweepResult { rows })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::config(format!("csv: {e}"))
}

/// Model outcome for one load, or the error that aborted that row.
pub type ModelPoint = std::result::Result<ModelReport, Error>;

/// Evaluates the model at every grid point with a caller-supplied
/// evaluator. Failed points become `error` rows.
pub fn model_sweep_with<E>(
    network: &NetworkConfig,
    grid: &[f64],
    evaluator: E,
) -> (SweepResult, Vec<ModelPoint>)
where
    E: Fn(&NetworkConfig) -> Result<ModelReport> + Sync,
{
    let cap = capacity(network);
    let points: Vec<ModelPoint> = grid
        .par_iter()
        .map(|&l| evaluator(&network.with_load(l)))
        .collect();
    let rows = grid
        .iter()
        .zip(&points)
        .map(|(&l, p)| SweepRow {
            lambda_fps: l,
            per_model: p.as_ref().ok().map(|r| r.per),
            per_sim_mean: None,
            per_sim_ci95: None,
            capacity_fps: cap,
            validity: match p {
                Ok(_) if l > cap => Validity::OverCapacity,
                Ok(_) => Validity::Ok,
                Err(_) => Validity::Error,
            },
        })
        .collect();
    (SweepResult { rows }, points)
}

pub fn model_sweep(network: &NetworkConfig, grid: &[f64]) -> (SweepResult, Vec<ModelPoint>) {
    model_sweep_with(network, grid, evaluate)
}

/// Mean over seeds and CI over the pooled batch means of all seeds.
pub fn aggregate_runs(reports: &[SimReport]) -> (f64, f64) {
    let mean = reports.iter().map(|r| r.per_estimate).sum::<f64>() / reports.len().max(1) as f64;
    let batches: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.batch_per.iter().copied())
        .collect();
    (mean, batch_ci95(&batches))
}

/// Runs every seed at every grid point; rows keep grid order.
pub fn sim_sweep(scenario: &Scenario, seeds: &[u64]) -> SweepResult {
    let cap = capacity(&scenario.network);
    let jobs: Vec<(usize, u64)> = (0..scenario.grid.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let runs: Vec<Result<SimReport>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            scenario
                .sim_config(scenario.grid[i], seed)
                .and_then(|c| sim::run(&c))
        })
        .collect();
    let rows = scenario
        .grid
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let mine = &runs[i * seeds.len()..(i + 1) * seeds.len()];
            let flag = if l > cap {
                Validity::OverCapacity
            } else {
                Validity::Ok
            };
            match mine
                .iter()
                .map(|r| r.as_ref().ok().cloned())
                .collect::<Option<Vec<_>>>()
            {
                None => SweepRow {
                    lambda_fps: l,
                    per_model: None,
                    per_sim_mean: None,
                    per_sim_ci95: None,
                    capacity_fps: cap,
                    validity: Validity::Error,
                },
                Some(reports) => {
                    let (mean, ci) = aggregate_runs(&reports);
                    let none = reports.iter().all(|r| r.no_attempts);
                    SweepRow {
                        lambda_fps: l,
                        per_model: None,
                        per_sim_mean: Some(mean),
                        per_sim_ci95: Some(ci),
                        capacity_fps: cap,
                        validity: if none {
                            Validity::NoAttempts.worst(flag)
                        } else {
                            flag
                        },
                    }
                }
            }
        })
        .collect();
    SweepResult { rows }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCheck {
    pub lambda_fps: f64,
    pub gap: f64,
    pub allowed: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<PointCheck>,
    /// Points at or below capacity that could not be compared.
    pub unusable: Vec<f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.unusable.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    /// Check with the largest gap relative to what is allowed.
    pub fn worst(&self) -> Option<&PointCheck> {
        self.checks
            .iter()
            .max_by(|a, b| (a.gap / a.allowed).total_cmp(&(b.gap / b.allowed)))
    }
}

/// `|model - sim| <= max(tolerance, 2 ci95)` at every load up to capacity.
/// Rows without simulated attempts are skipped.
pub fn validate(result: &SweepResult, tolerance: f64) -> ValidationReport {
    let mut checks = Vec::new();
    let mut unusable = Vec::new();
    for r in result
        .rows
        .iter()
        .filter(|r| r.lambda_fps <= r.capacity_fps)
    {
        match (r.per_model, r.per_sim_mean, r.per_sim_ci95, r.validity) {
            (_, _, _, Validity::NoAttempts) => {}
            (Some(m), Some(s), Some(ci), v) if v != Validity::Error => {
                let allowed = tolerance.max(2.0 * ci);
                let gap = (m - s).abs();
                checks.push(PointCheck {
                    lambda_fps: r.lambda_fps,
                    gap,
                    allowed,
                    pass: gap <= allowed,
                });
            }
            _ => unusable.push(r.lambda_fps),
        }
    }
    ValidationReport { checks, unusable }
}
