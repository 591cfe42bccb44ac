//! File schemas and windowing.
//!
//! Everything written here re-reads losslessly: floats are serialized with
//! Rust's shortest round-trip formatting and JSON uses exact float parsing.
//! All artifacts are pure functions of (inputs, seed), so regenerating a
//! dataset or rerunning a training command is byte-identical.

use crate::error::{Error, Result};
use crate::evaluation::{ForecastEnsemble, ReliabilityCurve};
use crate::neural::{Checkpoint, Drift};
use crate::stable::{LatentPath, StableSpec};
use crate::training::{Observations, TrainTrace};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;

const SECONDS_PER_DAY: f64 = 86_400.0;

/// A real-valued time series read from CSV: header `timestamp,<name>...`,
/// timestamps either ISO-8601 (RFC 3339) or plain numbers, strictly
/// increasing, no missing cells, at least two rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    /// Raw numeric timestamps as parsed (epoch seconds for ISO input).
    pub times: Vec<f64>,
    /// True when the timestamp column carried ISO-8601 datetimes.
    pub iso_times: bool,
    pub names: Vec<String>,
    /// `values[row][dim]`.
    pub values: Vec<Vec<f64>>,
}

impl Series {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Median spacing between consecutive timestamps.
    pub fn median_spacing(&self) -> f64 {
        let mut gaps: Vec<f64> = self.times.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        crate::stats::quantile_sorted(&gaps, 0.5)
    }
}

fn parse_timestamp(s: &str) -> Result<(f64, bool)> {
    if let Ok(v) = s.parse::<f64>() {
        if !v.is_finite() {
            return Err(Error::data(format!("non-finite timestamp {s}")));
        }
        return Ok((v, false));
    }
    match chrono::DateTime::parse_from_rfc3339(s) {
        Ok(dt) => Ok((dt.timestamp_millis() as f64 / 1000.0, true)),
        Err(e) => Err(Error::data(format!("unparseable timestamp {s:?}: {e}"))),
    }
}

pub fn read_series(path: &Path) -> Result<Series> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::data("series CSV needs a timestamp column and at least one value column"));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut iso_times = false;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::data(format!("row {} has {} cells, expected {}", row_idx + 1, record.len(), headers.len())));
        }
        let (t, iso) = parse_timestamp(record.get(0).unwrap().trim())?;
        iso_times |= iso;
        let mut row = Vec::with_capacity(names.len());
        for cell in record.iter().skip(1) {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::data(format!("missing cell in row {}", row_idx + 1)));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::data(format!("bad numeric cell {cell:?} in row {}", row_idx + 1)))?;
            if !v.is_finite() {
                return Err(Error::data(format!("non-finite value in row {}", row_idx + 1)));
            }
            row.push(v);
        }
        times.push(t);
        values.push(row);
    }
    if times.len() < 2 {
        return Err(Error::data("series needs at least 2 rows"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::data("timestamps must be strictly increasing"));
    }
    Ok(Series { times, iso_times, names, values })
}

pub fn write_series(path: &Path, series: &Series) -> Result<()> {
    let mut out = String::new();
    out.push_str("timestamp");
    for name in &series.names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (t, row) in series.times.iter().zip(&series.values) {
        out.push_str(&format!("{t}"));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Latent path CSV `t, dim_0, ...` plus the jump-event sidecar
/// `t, dim, size`.
pub fn write_path(path: &Path, latent: &LatentPath) -> Result<()> {
    let mut out = String::from("t");
    for i in 0..latent.dim {
        out.push_str(&format!(",dim_{i}"));
    }
    out.push('\n');
    for (node, t) in latent.times.iter().enumerate() {
        out.push_str(&format!("{t}"));
        for v in latent.state(node) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_jump_log(path: &Path, latent: &LatentPath) -> Result<()> {
    let mut out = String::from("t,dim,size\n");
    for (step, events) in latent.jump_log.iter().enumerate() {
        let t = latent.times[step + 1];
        for (dim, size) in events {
            out.push_str(&format!("{t},{dim},{size}\n"));
        }
    }
    write_atomic(path, out.as_bytes())
}

/// Ensemble CSV `t, sample_id, dim_0...`, one row per (member, time).
pub fn write_ensemble(path: &Path, ens: &ForecastEnsemble) -> Result<()> {
    let mut out = String::from("t,sample_id");
    for i in 0..ens.dim() {
        out.push_str(&format!(",dim_{i}"));
    }
    out.push('\n');
    for (m, member) in ens.samples.iter().enumerate() {
        for (h, t) in ens.times.iter().enumerate() {
            out.push_str(&format!("{t},{m}"));
            for v in &member[h] {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_ensemble(path: &Path, observed: Vec<Vec<f64>>, times: Vec<f64>) -> Result<ForecastEnsemble> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let d = headers.len() - 2;
    let mut members: Vec<Vec<Vec<f64>>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let m: usize = record
            .get(1)
            .unwrap()
            .parse()
            .map_err(|_| Error::data("bad sample_id"))?;
        let mut row = Vec::with_capacity(d);
        for cell in record.iter().skip(2) {
            row.push(cell.parse::<f64>().map_err(|_| Error::data("bad ensemble cell"))?);
        }
        if members.len() <= m {
            members.resize(m + 1, Vec::new());
        }
        members[m].push(row);
    }
    let ens = ForecastEnsemble { times, samples: members, observed };
    ens.validate()?;
    Ok(ens)
}

/// One metric value row; `threshold` is empty for unthresholded metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub window_id: usize,
    pub metric: String,
    pub threshold: Option<f64>,
    pub value: Option<f64>,
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut out = String::from("window_id,metric,threshold,value\n");
    for r in rows {
        let thr = r.threshold.map_or(String::new(), |t| format!("{t}"));
        let val = r.value.map_or("NA".to_owned(), |v| format!("{v}"));
        out.push_str(&format!("{},{},{},{}\n", r.window_id, r.metric, thr, val));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let threshold = match record.get(2).unwrap() {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| Error::data("bad threshold"))?),
        };
        let value = match record.get(3).unwrap() {
            "NA" => None,
            s => Some(s.parse::<f64>().map_err(|_| Error::data("bad metric value"))?),
        };
        rows.push(MetricRow {
            window_id: record.get(0).unwrap().parse().map_err(|_| Error::data("bad window id"))?,
            metric: record.get(1).unwrap().to_owned(),
            threshold,
            value,
        });
    }
    Ok(rows)
}

/// Reliability CSV `level, coverage`.
pub fn write_reliability(path: &Path, curve: &ReliabilityCurve) -> Result<()> {
    let mut out = String::from("level,coverage\n");
    for (l, c) in curve.levels.iter().zip(&curve.coverage) {
        out.push_str(&format!("{l},{c}\n"));
    }
    write_atomic(path, out.as_bytes())
}

/// Training trace CSV `iter, elbo, loglik, kl, grad_norm`.
pub fn write_trace(path: &Path, trace: &TrainTrace) -> Result<()> {
    let mut out = String::from("iter,elbo,loglik,kl,grad_norm\n");
    for r in &trace.rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.iter, r.elbo, r.loglik, r.kl, r.grad_norm));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_trace(path: &Path) -> Result<TrainTrace> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let get = |i: usize| -> Result<f64> {
            record.get(i).unwrap().parse().map_err(|_| Error::data("bad trace cell"))
        };
        rows.push(crate::training::TraceRow {
            iter: record.get(0).unwrap().parse().map_err(|_| Error::data("bad iter"))?,
            elbo: get(1)?,
            loglik: get(2)?,
            kl: get(3)?,
            grad_norm: get(4)?,
        });
    }
    Ok(TrainTrace { rows })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(ck)?.as_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

/// Rolling-window split by row index: train slice `[start, start+train)`,
/// horizon slice `[start+train, start+train+horizon)`, advancing by `stride`
/// (default: the horizon length, giving disjoint evaluation horizons).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub id: usize,
    pub train_start: usize,
    pub train_len: usize,
    pub horizon_len: usize,
}

impl Window {
    pub fn train_range(&self) -> std::ops::Range<usize> {
        self.train_start..self.train_start + self.train_len
    }

    pub fn horizon_range(&self) -> std::ops::Range<usize> {
        let h0 = self.train_start + self.train_len;
        h0..h0 + self.horizon_len
    }
}

#[derive(Clone, Debug, Default)]
pub struct RollingWindows {
    pub windows: Vec<Window>,
    /// Set when no window fits, with the reason.
    pub empty_reason: Option<String>,
}

pub fn rolling_windows(
    n_rows: usize,
    train_rows: usize,
    horizon_rows: usize,
    stride_rows: usize,
) -> Result<RollingWindows> {
    if train_rows == 0 || horizon_rows == 0 || stride_rows == 0 {
        return Err(Error::config("window spans and stride must be positive"));
    }
    if n_rows < train_rows + horizon_rows {
        return Ok(RollingWindows {
            windows: Vec::new(),
            empty_reason: Some(format!(
                "series has {n_rows} rows; one window needs {}",
                train_rows + horizon_rows
            )),
        });
    }
    let count = (n_rows - train_rows - horizon_rows) / stride_rows + 1;
    let windows = (0..count)
        .map(|id| Window {
            id,
            train_start: id * stride_rows,
            train_len: train_rows,
            horizon_len: horizon_rows,
        })
        .collect();
    Ok(RollingWindows { windows, empty_reason: None })
}

/// Span unit for window specs: calendar days (converted through the median
/// row spacing) or raw row counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanUnit {
    Days,
    Rows,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub train_span: f64,
    pub horizon_span: f64,
    /// Defaults to the horizon span (disjoint evaluation horizons).
    pub stride: Option<f64>,
    pub units: SpanUnit,
}

impl WindowSpec {
    /// Resolves spans to row counts. In day units the rows-per-day factor
    /// comes from the median timestamp spacing; rows are treated as equally
    /// spaced in index time.
    pub fn to_rows(&self, series: &Series) -> Result<(usize, usize, usize)> {
        if !(self.train_span > 0.0 && self.horizon_span > 0.0) {
            return Err(Error::config("window spans must be positive"));
        }
        let factor = match self.units {
            SpanUnit::Rows => 1.0,
            SpanUnit::Days => {
                let spacing = series.median_spacing();
                let day = if series.iso_times { SECONDS_PER_DAY } else { 1.0 };
                day / spacing
            }
        };
        let to_rows = |span: f64| -> Result<usize> {
            let rows = (span * factor).round() as usize;
            if rows == 0 {
                return Err(Error::config(format!("span {span} resolves to zero rows")));
            }
            Ok(rows)
        };
        let train = to_rows(self.train_span)?;
        let horizon = to_rows(self.horizon_span)?;
        let stride = match self.stride {
            Some(s) => to_rows(s)?,
            None => horizon,
        };
        Ok((train, horizon, stride))
    }
}

/// One window's training observations plus held-out truth, in internal
/// time: the train slice is shifted to `[0, T]` and the horizon carries
/// times relative to the window boundary (the last train row).
#[derive(Clone, Debug)]
pub struct WindowData {
    pub window: Window,
    pub obs: Observations,
    /// Horizon times relative to the boundary, increasing and positive.
    pub eval_times: Vec<f64>,
    /// Held-out truth `truth[h][dim]` aligned with `eval_times`.
    pub truth: Vec<Vec<f64>>,
}

pub fn extract_window(
    series: &Series,
    window: Window,
    sigma_eps: f64,
) -> Result<WindowData> {
    let n = series.len();
    let tr = window.train_range();
    let hr = window.horizon_range();
    if hr.end > n {
        return Err(Error::config("window exceeds series length"));
    }
    let day = if series.iso_times { SECONDS_PER_DAY } else { 1.0 };
    let t0 = series.times[tr.start];
    let t_boundary = series.times[tr.end - 1];
    let obs = Observations {
        times: tr.clone().map(|r| (series.times[r] - t0) / day).collect(),
        values: tr.clone().map(|r| series.values[r].clone()).collect(),
        sigma_eps,
    };
    let eval_times: Vec<f64> = hr.clone().map(|r| (series.times[r] - t_boundary) / day).collect();
    let truth: Vec<Vec<f64>> = hr.clone().map(|r| series.values[r].clone()).collect();
    Ok(WindowData { window, obs, eval_times, truth })
}

/// Manifest of a generated synthetic dataset: everything needed to
/// regenerate it bit for bit and to score parameter recovery later.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub spec_template: StableSpec,
    pub sigma_eps: f64,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub truth_file: String,
    pub jumps_file: String,
    pub alpha: f64,
    pub realisation: usize,
    pub seed: u64,
    pub drift: Drift,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub n_steps: usize,
    pub n_obs: usize,
}

pub const MANIFEST_VERSION: u32 = 1;

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(manifest)?.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::config(format!("unsupported manifest version {}", m.version)));
    }
    Ok(m)
}
