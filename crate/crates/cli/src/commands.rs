//! The five subcommands: synthetic data generation, single-window training,
//! rolling-window forecasting, scoring, and cross-run comparison.

use crate::config::{DriftChoice, Mode, ModelChoice, RunConfig};
use levy_tilt_core::error::{Error, Result};
use levy_tilt_core::evaluation::{
    jump_crps_with_threshold, reliability, ForecastEnsemble, JumpCrps,
};
use levy_tilt_core::io::{
    self, DatasetManifest, ManifestEntry, MetricRow, Series, Window, WindowData,
};
use levy_tilt_core::neural::{Checkpoint, Drift};
use levy_tilt_core::rng::{Purpose, Streams};
use levy_tilt_core::stable::{simulate_ground_truth, GroundTruthConfig, StableSpec};
use levy_tilt_core::stats::quantile;
use levy_tilt_core::training::baseline::{
    baseline_boundary_samples, baseline_forecast, baseline_train,
};
use levy_tilt_core::training::{
    forecast, posterior_boundary_samples, train, Architecture, ForecastConfig, Observations,
    TrainConfig, TrainResult, TrainStatus,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Successful command outcome; training health is surfaced so the binary
/// can exit 4 on numerical divergence as the contract requires.
#[derive(Debug, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Diverged,
}

fn arch_from(cfg: &RunConfig) -> Architecture {
    Architecture {
        n_ref: cfg.architecture.n_ref,
        embed_dim: cfg.architecture.embed_dim,
        head_hidden: cfg.architecture.head_hidden.clone(),
        drift_kind: cfg.drift.kind(),
        a_min: cfg.architecture.a_min,
        learn_sigma_eps: cfg.architecture.learn_sigma_eps,
    }
}

fn train_cfg_from(cfg: &RunConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        m_paths: cfg.train.m_paths,
        n_steps: cfg.train.n_steps,
        k_samples: cfg.train.k_samples,
        iterations: cfg.train.iterations,
        learning_rate: cfg.train.learning_rate,
        l2_scale: cfg.train.l2_scale,
        seed,
        alpha_grid: cfg.train.alpha_grid.clone(),
    }
}

fn sigma_eps_of(cfg: &RunConfig) -> f64 {
    cfg.sigma_eps.unwrap_or(0.1)
}

/// Generates R realisations per stability index: ground-truth latent paths
/// via the compound-Poisson simulator, observations with Gaussian noise, and
/// a manifest holding every true parameter and seed.
pub fn cmd_generate(cfg: &RunConfig, force: bool) -> Result<Outcome> {
    cfg.check_mode(Mode::Generate)?;
    let g = &cfg.generate;
    if g.realisations == 0 || g.alpha_grid.is_empty() {
        return Err(Error::config("generate needs realisations >= 1 and a non-empty alpha grid"));
    }
    if g.n_obs < 2 || g.n_steps < g.n_obs {
        return Err(Error::config("generate needs n_steps >= n_obs >= 2"));
    }
    let spec_cfg = cfg.spec.as_ref().ok_or_else(|| Error::config("generate needs a `spec` section"))?;
    let out = &cfg.output_dir;
    let manifest_path = out.join("manifest.json");
    if manifest_path.exists() && !force {
        return Err(Error::config(format!(
            "{} already exists; pass --force to overwrite",
            manifest_path.display()
        )));
    }
    std::fs::create_dir_all(out)?;

    let mut entries = Vec::new();
    for (ai, &alpha) in g.alpha_grid.iter().enumerate() {
        let spec = StableSpec::new(alpha, spec_cfg.tau, spec_cfg.sigma_g)?;
        for r in 0..g.realisations {
            let streams = Streams::new(cfg.seed).round(ai as u64).path(r as u64);
            let mut draw = streams.stream(0, Purpose::Init, 0);
            let drift = draw_drift(&cfg.drift, &mut draw, g.x0.len(), g.theta_range, g.mu_range);
            let path_seed = streams.stream(0, Purpose::Init, 1).next_u64();
            let gt = GroundTruthConfig {
                spec,
                drift: drift.clone(),
                horizon: g.horizon,
                n_steps: g.n_steps,
                x0: g.x0.clone(),
                seed: path_seed,
            };
            let path = simulate_ground_truth(&gt)?;

            // observations at evenly spaced nodes including both ends
            let mut noise = streams.stream(0, Purpose::ObsNoise, 0);
            let mut times = Vec::with_capacity(g.n_obs);
            let mut values = Vec::with_capacity(g.n_obs);
            for k in 0..g.n_obs {
                let node = (k * g.n_steps) / (g.n_obs - 1);
                times.push(path.times[node]);
                let state = path.state(node);
                values.push(
                    (0..path.dim).map(|i| state[i] + g.sigma_eps * noise.normal()).collect(),
                );
            }
            let stem = format!("a{alpha}_r{r:03}");
            let data_file = format!("data_{stem}.csv");
            let truth_file = format!("truth_{stem}.csv");
            let jumps_file = format!("jumps_{stem}.csv");
            let series = Series {
                times,
                iso_times: false,
                names: (0..path.dim).map(|i| format!("dim_{i}")).collect(),
                values,
            };
            io::write_series(&out.join(&data_file), &series)?;
            io::write_path(&out.join(&truth_file), &path)?;
            io::write_jump_log(&out.join(&jumps_file), &path)?;
            entries.push(ManifestEntry {
                file: data_file,
                truth_file,
                jumps_file,
                alpha,
                realisation: r,
                seed: path_seed,
                drift,
                x0: g.x0.clone(),
                horizon: g.horizon,
                n_steps: g.n_steps,
                n_obs: g.n_obs,
            });
        }
    }
    let manifest = DatasetManifest {
        version: io::MANIFEST_VERSION,
        seed: cfg.seed,
        spec_template: StableSpec::new(g.alpha_grid[0], spec_cfg.tau, spec_cfg.sigma_g)?,
        sigma_eps: g.sigma_eps,
        entries,
    };
    io::write_manifest(&manifest_path, &manifest)?;
    Ok(Outcome::Ok)
}

fn draw_drift(
    choice: &DriftChoice,
    rng: &mut levy_tilt_core::rng::CounterRng,
    dim: usize,
    theta_range: (f64, f64),
    mu_range: (f64, f64),
) -> Drift {
    match choice {
        DriftChoice::Ou => Drift::Ou {
            theta: rng.range(theta_range.0, theta_range.1),
            mu: rng.range(mu_range.0, mu_range.1),
        },
        DriftChoice::DoubleWell => Drift::DoubleWell {
            theta1: rng.range(theta_range.0, theta_range.1),
            theta2: rng.range(mu_range.0, mu_range.1),
        },
        DriftChoice::Neural { width } => {
            let kind = levy_tilt_core::neural::DriftKind::Neural { width: *width };
            let shape = kind.mlp_shape(dim).unwrap();
            let mut w = vec![0.0; shape.param_count()];
            shape.init(&mut w, rng, false);
            Drift::Neural { shape, weights: w }
        }
    }
}

/// Per-dimension offsets subtracted from a window's values before training.
fn window_center(cfg: &RunConfig, obs: &Observations) -> Result<Option<Vec<f64>>> {
    if !cfg.center_values {
        return Ok(None);
    }
    if matches!(cfg.drift, DriftChoice::DoubleWell) {
        return Err(Error::config(
            "center_values cannot be combined with the double-well drift \
             (the cubic drift is not translation covariant)",
        ));
    }
    Ok(Some(obs.values[0].clone()))
}

fn center_obs(obs: &mut Observations, center: &[f64]) {
    for row in &mut obs.values {
        for (v, c) in row.iter_mut().zip(center) {
            *v -= c;
        }
    }
}

fn run_training(
    cfg: &RunConfig,
    spec: &StableSpec,
    obs: &Observations,
    seed: u64,
) -> Result<TrainResult> {
    let arch = arch_from(cfg);
    let tc = train_cfg_from(cfg, seed);
    match cfg.model {
        ModelChoice::Tilted => train(obs, spec, &tc, &arch),
        ModelChoice::Gaussian => baseline_train(obs, spec, &tc, &arch),
    }
}

#[derive(Serialize, Deserialize)]
struct TrainMeta {
    dataset: PathBuf,
    model: ModelChoice,
    status: TrainStatus,
    center: Option<Vec<f64>>,
    smoothed_final_elbo: f64,
    alpha_grid_scores: Vec<(f64, f64)>,
}

/// Trains one window (the whole series) and writes checkpoint + trace.
pub fn cmd_train(cfg: &RunConfig) -> Result<Outcome> {
    cfg.check_mode(Mode::Train)?;
    let dataset = cfg.require_dataset()?;
    let spec = cfg.require_spec()?;
    let series = io::read_series(dataset)?;
    // the whole file is one training window; there is no held-out horizon
    let window = Window {
        id: 0,
        train_start: 0,
        train_len: series.len(),
        horizon_len: 0,
    };
    let wd = io::extract_window(&series, window, sigma_eps_of(cfg))?;
    let mut obs = wd.obs;
    let center = window_center(cfg, &obs)?;
    if let Some(c) = &center {
        center_obs(&mut obs, c);
    }
    let result = run_training(cfg, &spec, &obs, cfg.seed)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    io::write_checkpoint(
        &cfg.output_dir.join("checkpoint.json"),
        &Checkpoint::new(&result.params, &result.spec),
    )?;
    io::write_trace(&cfg.output_dir.join("trace.csv"), &result.trace)?;
    let meta = TrainMeta {
        dataset: dataset.to_path_buf(),
        model: cfg.model,
        status: result.status.clone(),
        center,
        smoothed_final_elbo: result.trace.smoothed_final_elbo(),
        alpha_grid_scores: result.grid.clone(),
    };
    std::fs::write(
        cfg.output_dir.join("train_meta.json"),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(match result.status {
        TrainStatus::Completed => Outcome::Ok,
        TrainStatus::Diverged { .. } => Outcome::Diverged,
    })
}

pub const FORECAST_MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct ForecastManifest {
    pub version: u32,
    pub model: ModelChoice,
    pub seed: u64,
    pub dataset_file: String,
    pub windows: Vec<Window>,
    pub statuses: Vec<TrainStatus>,
}

/// Rolling-window protocol: per window, train on the train slice, draw
/// posterior boundary samples, simulate the learned prior over the horizon,
/// and write one ensemble CSV (plus checkpoint and trace) per window.
pub fn cmd_forecast(cfg: &RunConfig) -> Result<Outcome> {
    cfg.check_mode(Mode::Forecast)?;
    let dataset = cfg.require_dataset()?;
    let spec = cfg.require_spec()?;
    let series = io::read_series(dataset)?;
    let wspec = cfg.window.ok_or_else(|| Error::config("forecast needs a `window` section"))?;
    let (train_rows, horizon_rows, stride_rows) = wspec.to_rows(&series)?;
    let rolling = io::rolling_windows(series.len(), train_rows, horizon_rows, stride_rows)?;
    if let Some(reason) = rolling.empty_reason {
        return Err(Error::data(format!("no usable windows: {reason}")));
    }
    std::fs::create_dir_all(&cfg.output_dir)?;

    let mut statuses = Vec::new();
    let mut any_diverged = false;
    for window in &rolling.windows {
        let wd = io::extract_window(&series, *window, sigma_eps_of(cfg))?;
        let status = forecast_one_window(cfg, &spec, &wd)?;
        any_diverged |= matches!(status, TrainStatus::Diverged { .. });
        statuses.push(status);
    }
    let manifest = ForecastManifest {
        version: FORECAST_MANIFEST_VERSION,
        model: cfg.model,
        seed: cfg.seed,
        dataset_file: dataset
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        windows: rolling.windows.clone(),
        statuses,
    };
    std::fs::write(
        cfg.output_dir.join("forecast_manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(if any_diverged { Outcome::Diverged } else { Outcome::Ok })
}

fn forecast_one_window(cfg: &RunConfig, spec: &StableSpec, wd: &WindowData) -> Result<TrainStatus> {
    let id = wd.window.id;
    let mut obs = wd.obs.clone();
    let center = window_center(cfg, &obs)?;
    if let Some(c) = &center {
        center_obs(&mut obs, c);
    }
    // per-window seed: window id folds into the round key
    let seed = Streams::new(cfg.seed).round(id as u64).stream(0, Purpose::Init, 7).next_u64();
    let result = run_training(cfg, spec, &obs, seed)?;

    let horizon = *wd.eval_times.last().unwrap();
    let fc_steps = cfg.forecast.n_steps.unwrap_or_else(|| {
        ((cfg.train.n_steps as f64 * horizon / obs.horizon()).ceil() as usize).max(16)
    });
    let fcfg = ForecastConfig {
        horizon,
        n_steps: fc_steps,
        m_paths: cfg.forecast.m_paths,
        seed: seed ^ 0x5eed_f04e,
    };
    let samples = match cfg.model {
        ModelChoice::Tilted => {
            let boundary = posterior_boundary_samples(
                &result.params,
                &result.spec,
                &obs,
                cfg.train.n_steps,
                cfg.train.k_samples,
                cfg.forecast.boundary_paths,
                seed ^ 0xb0,
            )?;
            forecast(&result.params, &result.spec, &boundary, &wd.eval_times, &fcfg)?
        }
        ModelChoice::Gaussian => {
            let boundary = baseline_boundary_samples(
                &result.params,
                &obs,
                cfg.train.n_steps,
                cfg.forecast.boundary_paths,
                seed ^ 0xb0,
            )?;
            baseline_forecast(&result.params, &boundary, &wd.eval_times, &fcfg)?
        }
    };
    // un-center the ensemble so it lives on the raw data scale
    let mut members = samples.samples;
    if let Some(c) = &center {
        for member in &mut members {
            for state in member.iter_mut() {
                for (v, off) in state.iter_mut().zip(c) {
                    *v += off;
                }
            }
        }
    }
    let ens = ForecastEnsemble {
        times: wd.eval_times.clone(),
        samples: members,
        observed: wd.truth.clone(),
    };
    ens.validate()?;
    io::write_ensemble(&cfg.output_dir.join(format!("ensemble_w{id:04}.csv")), &ens)?;
    io::write_trace(&cfg.output_dir.join(format!("trace_w{id:04}.csv")), &result.trace)?;
    io::write_checkpoint(
        &cfg.output_dir.join(format!("checkpoint_w{id:04}.json")),
        &Checkpoint::new(&result.params, &result.spec),
    )?;
    Ok(result.status)
}

/// Aggregates per-window metric rows into per-(metric, threshold) means,
/// skipping windows with no qualifying increments. Shared by the evaluate
/// summary and the compare join so their numbers match verbatim.
pub fn aggregate_metrics(rows: &[MetricRow]) -> Vec<(String, Option<f64>, f64)> {
    let mut keys: Vec<(String, Option<f64>)> = Vec::new();
    for r in rows {
        let key = (r.metric.clone(), r.threshold);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(metric, threshold)| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.metric == metric && r.threshold == threshold)
                .filter_map(|r| r.value)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
            (metric, threshold, mean)
        })
        .collect()
}

#[derive(Serialize)]
struct EvaluateSummary {
    n_windows: usize,
    pooling: &'static str,
    spacing_assumption: &'static str,
    metrics: Vec<SummaryEntry>,
}

#[derive(Serialize)]
struct SummaryEntry {
    metric: String,
    threshold: Option<f64>,
    value: f64,
}

/// Scores rolling-window forecasts against held-out truth: CRPS, jump CRPS
/// at pooled percentile thresholds, energy score, and reliability.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Outcome> {
    cfg.check_mode(Mode::Evaluate)?;
    let dataset = cfg.require_dataset()?;
    let series = io::read_series(dataset)?;
    let forecast_dir =
        cfg.evaluate.forecast_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let manifest: ForecastManifest = serde_json::from_str(
        &std::fs::read_to_string(forecast_dir.join("forecast_manifest.json"))
            .map_err(|e| Error::config(format!("cannot read forecast manifest: {e}")))?,
    )?;
    if manifest.version != FORECAST_MANIFEST_VERSION {
        return Err(Error::config("unsupported forecast manifest version"));
    }

    // windows must match what the forecast actually used
    let wspec = cfg.window.ok_or_else(|| Error::config("evaluate needs a `window` section"))?;
    let (train_rows, horizon_rows, stride_rows) = wspec.to_rows(&series)?;
    let rolling = io::rolling_windows(series.len(), train_rows, horizon_rows, stride_rows)?;
    if rolling.windows != manifest.windows {
        return Err(Error::data(
            "window misalignment: evaluate's windows differ from the forecast manifest",
        ));
    }

    let mut ensembles = Vec::new();
    for window in &rolling.windows {
        let wd = io::extract_window(&series, *window, sigma_eps_of(cfg))?;
        let path = forecast_dir.join(format!("ensemble_w{:04}.csv", window.id));
        let ens = io::read_ensemble(&path, wd.truth.clone(), wd.eval_times.clone())?;
        if ens.times.len() != wd.eval_times.len() {
            return Err(Error::data(format!(
                "window {} ensemble horizon misaligned with the dataset",
                window.id
            )));
        }
        ensembles.push(ens);
    }

    // pooled increment thresholds across every window (global pooling)
    let pooled: Vec<f64> = ensembles
        .iter()
        .flat_map(|e| e.observed_increment_magnitudes().into_iter().map(|(_, _, m)| m))
        .collect();
    if pooled.is_empty() {
        return Err(Error::data("horizons too short for increments"));
    }

    let mut rows = Vec::new();
    for (w, ens) in rolling.windows.iter().zip(&ensembles) {
        rows.push(MetricRow {
            window_id: w.id,
            metric: "crps".into(),
            threshold: None,
            value: Some(ens.mean_crps()),
        });
        rows.push(MetricRow {
            window_id: w.id,
            metric: "energy".into(),
            threshold: None,
            value: Some(ens.mean_energy_score()),
        });
        for &p in &cfg.evaluate.percentiles {
            let thr = quantile(&pooled, p / 100.0);
            let value = match jump_crps_with_threshold(ens, thr, p == 0.0) {
                JumpCrps::Value { value, .. } => Some(value),
                JumpCrps::NoQualifyingIncrements { .. } => None,
            };
            rows.push(MetricRow {
                window_id: w.id,
                metric: "jump_crps".into(),
                threshold: Some(p),
                value,
            });
        }
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    io::write_metrics(&cfg.output_dir.join("metrics.csv"), &rows)?;

    let refs: Vec<&ForecastEnsemble> = ensembles.iter().collect();
    let curve = reliability(&refs, &cfg.evaluate.levels)?;
    io::write_reliability(&cfg.output_dir.join("reliability.csv"), &curve)?;

    let summary = EvaluateSummary {
        n_windows: rolling.windows.len(),
        pooling: "global",
        spacing_assumption: "rows equally spaced in index time",
        metrics: aggregate_metrics(&rows)
            .into_iter()
            .map(|(metric, threshold, value)| SummaryEntry { metric, threshold, value })
            .collect(),
    };
    std::fs::write(
        cfg.output_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(Outcome::Ok)
}

/// Joins metrics across runs into a ranking table keyed by metric.
pub fn cmd_compare(cfg: &RunConfig) -> Result<Outcome> {
    cfg.check_mode(Mode::Compare)?;
    if cfg.compare.is_empty() {
        return Err(Error::config("compare needs at least one run"));
    }
    let mut per_run: Vec<(String, Vec<(String, Option<f64>, f64)>)> = Vec::new();
    for run in &cfg.compare {
        if !run.metrics.exists() {
            return Err(Error::config(format!("metrics file {} missing", run.metrics.display())));
        }
        let rows = io::read_metrics(&run.metrics)?;
        per_run.push((run.name.clone(), aggregate_metrics(&rows)));
    }
    // union of keys, in first-appearance order
    let mut keys: Vec<(String, Option<f64>)> = Vec::new();
    for (_, aggs) in &per_run {
        for (m, t, _) in aggs {
            let key = (m.clone(), *t);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    let mut out = String::from("metric,threshold,rank,run,value\n");
    for (metric, threshold) in keys {
        let mut scored: Vec<(String, f64)> = per_run
            .iter()
            .filter_map(|(name, aggs)| {
                aggs.iter()
                    .find(|(m, t, _)| *m == metric && *t == threshold)
                    .map(|(_, _, v)| (name.clone(), *v))
            })
            .collect();
        scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        for (rank, (name, value)) in scored.into_iter().enumerate() {
            let thr = threshold.map_or(String::new(), |t| format!("{t}"));
            out.push_str(&format!("{metric},{thr},{},{name},{value}\n", rank + 1));
        }
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("comparison.csv"), out)?;
    Ok(Outcome::Ok)
}

/// Maps an error to the documented exit code: 2 config, 3 data, 4 numerical.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Csv(_) | Error::Io(_) | Error::Json(_) => 3,
        Error::Numerical(_) | Error::SamplerCap { .. } => 4,
    }
}

/// Entry point shared by the binary and the tests.
pub fn run(mode: Mode, config_path: &Path, overrides: CliOverrides) -> Result<Outcome> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = overrides.out {
        cfg.output_dir = out;
    }
    match mode {
        Mode::Generate => cmd_generate(&cfg, overrides.force),
        Mode::Train => cmd_train(&cfg),
        Mode::Forecast => cmd_forecast(&cfg),
        Mode::Evaluate => cmd_evaluate(&cfg),
        Mode::Compare => cmd_compare(&cfg),
    }
}

#[derive(Debug, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub force: bool,
}
