//! Scenario files and CSV tables.
//!
//! Floats are written with `{:.16e}`, which round-trips every finite `f64`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::analysis::{ConsistencySequences, PersistencyProfile};
use crate::error::Error;
use crate::estimator::EstimatorConfig;
use crate::forgetting::ForgettingPolicy;
use crate::linalg::{Mat, SpdMat, SymMat};
use crate::sim::{
    arx_regressor, CheckpointStats, NoiseModel, PlantSpec, Scenario, Segment, Trace, TraceRecord,
};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("malformed scenario: {0}")]
    Json(serde_json::Error),
    #[error("{0}")]
    Invalid(Error),
    #[error("csv: {0}")]
    Csv(csv::Error),
    #[error("{0}")]
    Io(std::io::Error),
    #[error("line {line}: {msg}")]
    Format { line: u64, msg: String },
}

macro_rules! from_variant {
    ($($t:ty => $v:ident),*) => {$(
        impl From<$t> for IoError {
            fn from(e: $t) -> Self {
                IoError::$v(e)
            }
        }
    )*};
}

from_variant!(serde_json::Error => Json, Error => Invalid, csv::Error => Csv, std::io::Error => Io);

impl IoError {
    /// True for syntax or schema problems in user-supplied text.
    pub fn is_parse(&self) -> bool {
        matches!(self, IoError::Json(_) | IoError::Format { .. })
            || matches!(self, IoError::Csv(e) if !matches!(e.kind(), csv::ErrorKind::Io(_)))
    }
}

pub type IoResult<T> = std::result::Result<T, IoError>;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentFile {
    pub start: usize,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantFile {
    pub segments: Vec<SegmentFile>,
    pub na: usize,
    pub nb: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseFile {
    pub variance: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFile {
    pub seed: u64,
}

/// Exactly one of `P0_diag` and `P0_full` must be present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorFile {
    pub theta0: Vec<f64>,
    #[serde(rename = "P0_diag", default, skip_serializing_if = "Option::is_none")]
    pub p0_diag: Option<Vec<f64>>,
    #[serde(rename = "P0_full", default, skip_serializing_if = "Option::is_none")]
    pub p0_full: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub plant: PlantFile,
    pub noise: NoiseFile,
    pub input: InputFile,
    pub horizon: usize,
    pub policy: ForgettingPolicy,
    pub estimator: EstimatorFile,
}

impl ScenarioFile {
    pub fn into_scenario(self) -> IoResult<Scenario> {
        let est = self.estimator;
        let p0 = match (est.p0_diag, est.p0_full) {
            (Some(d), None) => SpdMat::from_diag(&d)?,
            (None, Some(rows)) => SpdMat::new(SymMat::new(Mat::from_rows(&rows)?)?)?,
            _ => {
                return Err(
                    Error::invalid("estimator needs exactly one of P0_diag and P0_full").into(),
                )
            }
        };
        let scenario = Scenario {
            plant: PlantSpec {
                segments: self
                    .plant
                    .segments
                    .into_iter()
                    .map(|s| Segment {
                        start: s.start,
                        theta: s.theta,
                    })
                    .collect(),
                na: self.plant.na,
                nb: self.plant.nb,
            },
            noise: NoiseModel {
                variance: self.noise.variance,
                seed: self.noise.seed,
            },
            input_seed: self.input.seed,
            horizon: self.horizon,
            policy: self.policy,
            estimator: EstimatorConfig::new(est.theta0, p0, 1)?,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        let p0 = s.estimator.p0.as_mat();
        let n = p0.rows();
        let rows: Vec<Vec<f64>> = (0..n).map(|r| p0.row(r).to_vec()).collect();
        let diagonal = (0..n).all(|r| (0..n).all(|c| r == c || p0[(r, c)] == 0.0));
        Self {
            plant: PlantFile {
                segments: s
                    .plant
                    .segments
                    .iter()
                    .map(|g| SegmentFile {
                        start: g.start,
                        theta: g.theta.clone(),
                    })
                    .collect(),
                na: s.plant.na,
                nb: s.plant.nb,
            },
            noise: NoiseFile {
                variance: s.noise.variance,
                seed: s.noise.seed,
            },
            input: InputFile { seed: s.input_seed },
            horizon: s.horizon,
            policy: s.policy.clone(),
            estimator: EstimatorFile {
                theta0: s.estimator.theta0.clone(),
                p0_diag: diagonal.then(|| (0..n).map(|i| p0[(i, i)]).collect()),
                p0_full: (!diagonal).then_some(rows),
            },
        }
    }
}

pub fn parse_scenario(text: &str) -> IoResult<Scenario> {
    serde_json::from_str::<ScenarioFile>(text)?.into_scenario()
}

pub fn scenario_to_json(s: &Scenario) -> String {
    serde_json::to_string_pretty(&ScenarioFile::from(s)).expect("scenario serializes")
}

fn header_pos(r: &csv::StringRecord) -> u64 {
    r.position().map_or(0, |p| p.line())
}

fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> IoResult<T> {
    let raw = rec.get(idx).ok_or_else(|| IoError::Format {
        line: header_pos(rec),
        msg: format!("missing column {name}"),
    })?;
    raw.trim().parse().map_err(|_| IoError::Format {
        line: header_pos(rec),
        msg: format!("cannot parse {name} value {raw:?}"),
    })
}

fn trace_header(n: usize) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    h.extend((1..=n).map(|i| format!("theta_{i}")));
    h.extend(
        ["beta", "rho", "residual_norm", "error_norm", "y", "u"]
            .iter()
            .map(|s| s.to_string()),
    );
    h
}

/// Writes a trace with columns `k, theta_1..theta_n, beta, rho, residual_norm, error_norm, y, u`.
pub fn write_trace<W: Write>(trace: &Trace, w: W) -> IoResult<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trace_header(trace.params()))?;
    for r in &trace.records {
        let mut row = vec![r.k.to_string()];
        row.extend(r.theta.iter().map(|&v| fmt_f64(v)));
        row.extend(
            [r.beta, r.rho, r.residual_norm, r.error_norm, r.y, r.u]
                .iter()
                .map(|&v| fmt_f64(v)),
        );
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn theta_columns(header: &csv::StringRecord) -> usize {
    header.iter().filter(|h| h.starts_with("theta_")).count()
}

pub fn read_trace<R: Read>(r: R) -> IoResult<Trace> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let n = theta_columns(&header);
    let expected = trace_header(n);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(IoError::Format {
            line: 1,
            msg: format!("expected trace header {}", expected.join(",")),
        });
    }
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize, name: &str| parse_field::<f64>(&rec, i, name);
        let theta = (0..n)
            .map(|i| f(1 + i, &expected[1 + i]))
            .collect::<IoResult<Vec<_>>>()?;
        records.push(TraceRecord {
            k: parse_field(&rec, 0, "k")?,
            theta,
            beta: f(n + 1, "beta")?,
            rho: f(n + 2, "rho")?,
            residual_norm: f(n + 3, "residual_norm")?,
            error_norm: f(n + 4, "error_norm")?,
            y: f(n + 5, "y")?,
            u: f(n + 6, "u")?,
        });
    }
    Ok(Trace { records })
}

/// Regressor matrices and forgetting rates for offline analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorRecord {
    pub phis: Vec<Mat>,
    pub betas: Vec<f64>,
}

impl RegressorRecord {
    /// Rebuilds ARX regressors from the `y` and `u` columns of a trace,
    /// taking the first `na` parameters as output lags.
    pub fn from_trace(trace: &Trace, na: usize) -> Result<Self, Error> {
        let n = trace.params();
        if na > n {
            return Err(Error::invalid(format!(
                "output lag count {na} exceeds the parameter count {n}"
            )));
        }
        if n == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let ys: Vec<f64> = trace.records.iter().map(|r| r.y).collect();
        let us: Vec<f64> = trace.records.iter().map(|r| r.u).collect();
        let phis = (0..trace.len())
            .map(|k| arx_regressor(&ys, &us, k, na, n - na))
            .collect();
        Ok(Self {
            phis,
            betas: trace.betas(),
        })
    }
}

/// Writes `k, beta, phi_1..phi_n`, one line per regressor row.
pub fn write_regressor_record<W: Write>(rec: &RegressorRecord, w: W) -> IoResult<()> {
    let n = rec.phis.first().map_or(0, Mat::cols);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["k".to_string(), "beta".to_string()];
    header.extend((1..=n).map(|i| format!("phi_{i}")));
    out.write_record(&header)?;
    for (k, (phi, beta)) in rec.phis.iter().zip(&rec.betas).enumerate() {
        for r in 0..phi.rows() {
            let mut row = vec![k.to_string(), fmt_f64(*beta)];
            row.extend(phi.row(r).iter().map(|&v| fmt_f64(v)));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads `k, beta, phi_1..phi_n`; consecutive lines sharing `k` stack into
/// one multi-output regressor. Steps must run 0, 1, 2, … without gaps.
pub fn read_regressor_record<R: Read>(r: R) -> IoResult<RegressorRecord> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let n = header.len().saturating_sub(2);
    let ok = header.get(0) == Some("k")
        && header.get(1) == Some("beta")
        && n > 0
        && (0..n).all(|i| header.get(2 + i) == Some(format!("phi_{}", i + 1).as_str()));
    if !ok {
        return Err(IoError::Format {
            line: 1,
            msg: "expected header k,beta,phi_1..phi_n".into(),
        });
    }
    let mut phis = Vec::new();
    let mut betas = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut current: Option<(usize, f64)> = None;
    let flush = |rows: &mut Vec<Vec<f64>>, phis: &mut Vec<Mat>| -> IoResult<()> {
        phis.push(Mat::from_rows(rows)?);
        rows.clear();
        Ok(())
    };
    for rec in rdr.records() {
        let rec = rec?;
        let k: usize = parse_field(&rec, 0, "k")?;
        let beta: f64 = parse_field(&rec, 1, "beta")?;
        let row = (0..n)
            .map(|i| parse_field(&rec, 2 + i, "phi"))
            .collect::<IoResult<Vec<f64>>>()?;
        match current {
            Some((ck, cb)) if ck == k => {
                if cb != beta {
                    return Err(IoError::Format {
                        line: header_pos(&rec),
                        msg: format!("conflicting beta values for step {k}"),
                    });
                }
            }
            prev => {
                let expected = prev.map_or(0, |(ck, _)| ck + 1);
                if k != expected {
                    return Err(IoError::Format {
                        line: header_pos(&rec),
                        msg: format!("expected step {expected}, found {k}"),
                    });
                }
                if prev.is_some() {
                    flush(&mut rows, &mut phis)?;
                }
                betas.push(beta);
                current = Some((k, beta));
            }
        }
        rows.push(row);
    }
    if current.is_some() {
        flush(&mut rows, &mut phis)?;
    }
    Ok(RegressorRecord { phis, betas })
}

/// Reads either a trace (regressors rebuilt with `na` output lags, default
/// half the parameters) or a regressor record, chosen by the header.
pub fn read_analysis_input(text: &str, na: Option<usize>) -> IoResult<RegressorRecord> {
    let first = text.lines().next().unwrap_or("");
    if first.split(',').nth(1).map(str::trim) == Some("beta") {
        read_regressor_record(text.as_bytes())
    } else {
        let trace = read_trace(text.as_bytes())?;
        let na = na.unwrap_or(trace.params() / 2);
        Ok(RegressorRecord::from_trace(&trace, na)?)
    }
}

/// Writes `j, s_l, s_u, q_l, q_u, upper, lower` for `j = 0..=j_max`.
pub fn write_consistency_table<W: Write>(seq: &ConsistencySequences, w: W) -> IoResult<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["j", "s_l", "s_u", "q_l", "q_u", "upper", "lower"])?;
    for j in 0..=seq.j_max() {
        let mut row = vec![j.to_string()];
        row.extend(
            [
                seq.s_l(j),
                seq.s_u(j),
                seq.q_l(j),
                seq.q_u(j),
                seq.upper_ratio(j),
                seq.lower_ratio(j),
            ]
            .iter()
            .map(|&v| fmt_f64(v)),
        );
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `window, alpha, beta_ub, persistent`; an absent profile is written
/// as a single non-persistent row for `n_max`.
pub fn write_profile<W: Write>(
    profile: Option<&PersistencyProfile>,
    n_max: usize,
    w: W,
) -> IoResult<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["window", "alpha", "beta_ub", "persistent"])?;
    match profile {
        Some(p) => out.write_record([
            p.window.to_string(),
            fmt_f64(p.alpha),
            fmt_f64(p.beta_ub),
            "true".into(),
        ])?,
        None => out.write_record([n_max.to_string(), "".into(), "".into(), "false".into()])?,
    }
    out.flush()?;
    Ok(())
}

/// Writes `k, lambda_min, lambda_max, se_min, se_max, bound_lower, bound_upper`;
/// missing bounds are left empty.
pub fn write_montecarlo_table<W: Write>(
    stats: &[CheckpointStats],
    bounds: &[Option<(f64, f64)>],
    w: W,
) -> IoResult<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "k",
        "lambda_min",
        "lambda_max",
        "se_min",
        "se_max",
        "bound_lower",
        "bound_upper",
    ])?;
    for (i, s) in stats.iter().enumerate() {
        let (lo, hi) = match bounds.get(i).copied().flatten() {
            Some((lo, hi)) => (fmt_f64(lo), fmt_f64(hi)),
            None => (String::new(), String::new()),
        };
        out.write_record([
            s.k.to_string(),
            fmt_f64(s.lambda_min),
            fmt_f64(s.lambda_max),
            fmt_f64(s.se_min),
            fmt_f64(s.se_max),
            lo,
            hi,
        ])?;
    }
    out.flush()?;
    Ok(())
}
