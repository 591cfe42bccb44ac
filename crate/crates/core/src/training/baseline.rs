//! Gaussian-SDE variational baseline.
//!
//! Same drift family as the tilted model, driven by Brownian noise with a
//! learnable constant diffusion scale. The variational posterior adds a
//! time-dependent neural drift correction `u(t)` (the temporal encoder plus
//! a single head), whose path-space KL against the prior is the closed
//! quadratic form `(1/2) int u(t)^2 / sigma_B^2 dt`. Everything is smooth,
//! so pathwise gradients through the reparametrized Brownian increments are
//! exact. Trained with the same rescale + RMSProp protocol as the tilted
//! model.

use crate::error::{Error, Result};
use crate::neural::{drift, ModelKind, ModelParams};
use crate::rng::{Purpose, Streams};
use crate::stable::StableSpec;
use rayon::prelude::*;

use super::elbo::{ElboConfig, ElboOut};
use super::{
    forecast_with_drift, rescale_gradients, rmsprop_step, snap_observation_nodes, Architecture,
    ForecastConfig, ForecastPaths, Observations, OptimizerState, TraceRow, TrainConfig,
    TrainResult, TrainStatus, TrainTrace,
};

const LN_2PI: f64 = 1.837_877_066_409_345_4;

/// Deterministic quadratic KL of the correction: `sum_j dt u_j^2 / (2 s^2)`.
pub fn baseline_kl(params: &ModelParams, n_steps: usize) -> f64 {
    assert_eq!(params.meta.kind, ModelKind::GaussianBaseline);
    let dt = params.meta.horizon / n_steps as f64;
    let s2 = params.sigma_b().powi(2);
    (0..n_steps)
        .map(|j| {
            let (u, _) = params.correction_at(dt * j as f64);
            u.iter().map(|ui| ui * ui).sum::<f64>() * dt / (2.0 * s2)
        })
        .sum()
}

struct PathOut {
    loglik: f64,
    g_u: Vec<f64>,
    g_drift: Vec<f64>,
    g_log_sigma_b: f64,
    g_log_sigma_eps: f64,
}

/// ELBO of the baseline with exact pathwise gradients. The Brownian
/// increments come from per-(path, step, dim) streams, so the value is a
/// smooth deterministic function of the parameters for a fixed seed.
pub fn baseline_elbo_with_grad(
    params: &ModelParams,
    obs: &Observations,
    x0: &[f64],
    cfg: &ElboConfig,
    streams: Streams,
) -> Result<ElboOut> {
    assert_eq!(params.meta.kind, ModelKind::GaussianBaseline);
    let d = params.meta.dim;
    let n = cfg.n_steps;
    let horizon = params.meta.horizon;
    let dt = horizon / n as f64;
    let sqrt_dt = dt.sqrt();
    let obs_nodes = snap_observation_nodes(obs, horizon, n)?;
    let mut obs_at_node: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for (oi, &node) in obs_nodes.iter().enumerate() {
        obs_at_node[node].push(oi);
    }

    let stacks: Vec<_> = (0..n).map(|j| params.correction_at(dt * j as f64)).collect();
    let layout = params.layout();
    let drift_kind = &params.meta.drift_kind;
    let drift_raw = &params.values[layout.drift.clone()];
    let drift_nat = drift_kind.natural(drift_raw, d);
    let sigma_b = params.sigma_b();
    let sigma = params.sigma_eps();
    let learn_sigma_eps = layout.log_sigma_eps.is_some();
    let inv_s2 = 1.0 / (sigma * sigma);

    let results: Vec<Result<PathOut>> = (0..cfg.m_paths)
        .into_par_iter()
        .map(|m| {
            let pstreams = streams.path(m as u64);
            let mut x = x0.to_vec();
            let mut states = vec![0.0; (n + 1) * d];
            states[..d].copy_from_slice(&x);
            let mut xi = vec![0.0; n * d];
            let mut f_buf = vec![0.0; d];
            for j in 0..n {
                drift_nat.eval_into(&x, &mut f_buf);
                let mut noise = pstreams.stream(j as u64, Purpose::Brownian, 0);
                let (u_j, _) = &stacks[j];
                for i in 0..d {
                    let z = noise.normal();
                    xi[j * d + i] = z;
                    x[i] += (f_buf[i] + u_j[i]) * dt + sigma_b * sqrt_dt * z;
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::numerical(format!(
                        "non-finite state at path {m}, step {j}"
                    )));
                }
                states[(j + 1) * d..(j + 2) * d].copy_from_slice(&x);
            }

            let mut loglik = 0.0;
            for (node, obs_list) in obs_at_node.iter().enumerate() {
                for &oi in obs_list {
                    for i in 0..d {
                        let r = obs.values[oi][i] - states[node * d + i];
                        loglik += -0.5 * LN_2PI - sigma.ln() - 0.5 * r * r * inv_s2;
                    }
                }
            }

            let mut adj = vec![0.0; d];
            let mut g_u = vec![0.0; n * d];
            let mut g_drift = vec![0.0; drift_raw.len()];
            let mut g_log_sigma_b = 0.0;
            let mut g_log_sigma_eps = 0.0;
            let mut adj_f = vec![0.0; d];
            for j in (0..n).rev() {
                for &oi in &obs_at_node[j + 1] {
                    for i in 0..d {
                        let r = obs.values[oi][i] - states[(j + 1) * d + i];
                        adj[i] += r * inv_s2;
                        if learn_sigma_eps {
                            g_log_sigma_eps += r * r * inv_s2 - 1.0;
                        }
                    }
                }
                let xj = &states[j * d..(j + 1) * d];
                for i in 0..d {
                    g_u[j * d + i] += adj[i] * dt;
                    // d x_(j+1) / d log sigma_B = sigma_B sqrt(dt) xi
                    g_log_sigma_b += adj[i] * sigma_b * sqrt_dt * xi[j * d + i];
                }
                for i in 0..d {
                    adj_f[i] = adj[i] * dt;
                }
                let adj_x = drift::backward(drift_kind, drift_raw, xj, &adj_f, &mut g_drift);
                for i in 0..d {
                    adj[i] += adj_x[i];
                }
            }
            if learn_sigma_eps {
                for &oi in &obs_at_node[0] {
                    for i in 0..d {
                        let r = obs.values[oi][i] - states[i];
                        g_log_sigma_eps += r * r * inv_s2 - 1.0;
                    }
                }
            }
            Ok(PathOut { loglik, g_u, g_drift, g_log_sigma_b, g_log_sigma_eps })
        })
        .collect();

    let m_f = cfg.m_paths as f64;
    let mut loglik_term = 0.0;
    let mut g_u = vec![0.0; n * d];
    let mut g_drift = vec![0.0; drift_raw.len()];
    let mut g_log_sigma_b = 0.0;
    let mut g_log_sigma_eps = 0.0;
    for out in results {
        let out = out?;
        loglik_term += out.loglik / m_f;
        for (acc, v) in g_u.iter_mut().zip(&out.g_u) {
            *acc += v / m_f;
        }
        for (acc, v) in g_drift.iter_mut().zip(&out.g_drift) {
            *acc += v / m_f;
        }
        g_log_sigma_b += out.g_log_sigma_b / m_f;
        g_log_sigma_eps += out.g_log_sigma_eps / m_f;
    }

    // KL is deterministic in (u, sigma_B); add its gradient once.
    let s_b2 = sigma_b * sigma_b;
    let mut kl_term = 0.0;
    for (j, (u_j, _)) in stacks.iter().enumerate() {
        for i in 0..d {
            let u = u_j[i];
            kl_term += dt * u * u / (2.0 * s_b2);
            g_u[j * d + i] -= dt * u / s_b2;
        }
    }
    g_log_sigma_b += 2.0 * kl_term;

    let mut grad = vec![0.0; params.values.len()];
    for (j, (_, cache)) in stacks.iter().enumerate() {
        params.correction_backward(cache, &g_u[j * d..(j + 1) * d], &mut grad);
    }
    grad[layout.drift.clone()].copy_from_slice(&g_drift);
    grad[layout.log_sigma_b.unwrap()] += g_log_sigma_b;
    if let Some(i) = layout.log_sigma_eps {
        grad[i] += g_log_sigma_eps;
    }
    let l2_penalty = cfg.l2_scale * params.values.iter().map(|v| v * v).sum::<f64>();
    for (g, v) in grad.iter_mut().zip(&params.values) {
        *g -= 2.0 * cfg.l2_scale * v;
    }

    let value = loglik_term - kl_term - l2_penalty;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerical(format!("non-finite baseline ELBO ({value})")));
    }
    Ok(ElboOut { value, loglik_term, kl_term, l2_penalty, grad, total_jumps: 0 })
}

/// Diffusion-scale starting point from the observed quadratic variation.
fn sigma_b_init(obs: &Observations) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for w in 0..obs.times.len() - 1 {
        let dt = obs.times[w + 1] - obs.times[w];
        for i in 0..obs.dim() {
            let dy = obs.values[w + 1][i] - obs.values[w][i];
            sum += dy * dy / dt;
            count += 1;
        }
    }
    (sum / count.max(1) as f64).sqrt().max(1e-4)
}

/// Trains the Gaussian baseline with the shared optimizer protocol. The
/// stable spec is carried through for checkpoint bookkeeping only.
pub fn baseline_train(
    obs: &Observations,
    spec: &StableSpec,
    cfg: &TrainConfig,
    arch: &Architecture,
) -> Result<TrainResult> {
    obs.validate()?;
    cfg.validate()?;
    let dim = obs.dim();
    let horizon = obs.horizon();
    let meta = arch.meta(ModelKind::GaussianBaseline, dim, horizon, obs.sigma_eps);
    let drift0 = arch.drift_init(dim, cfg.seed);
    let mut params = ModelParams::init(meta, &drift0, Some(sigma_b_init(obs)), cfg.seed)?;
    let segments = params.meta.segments();
    let mut opt = OptimizerState::new(params.values.len());
    let x0 = obs.values[0].clone();
    let ecfg = ElboConfig {
        m_paths: cfg.m_paths,
        n_steps: cfg.n_steps,
        k_samples: cfg.k_samples,
        l2_scale: cfg.l2_scale,
        attempt_cap: 0,
    };
    let mut trace = TrainTrace::default();
    for iter in 0..cfg.iterations {
        let streams = Streams::new(cfg.seed).round(iter as u64);
        let out = match baseline_elbo_with_grad(&params, obs, &x0, &ecfg, streams) {
            Ok(out) => out,
            Err(Error::Numerical(reason)) => {
                return Ok(TrainResult {
                    params,
                    spec: *spec,
                    trace,
                    status: TrainStatus::Diverged { iter, reason },
                    grid: Vec::new(),
                })
            }
            Err(e) => return Err(e),
        };
        let grad_norm = out.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        trace.rows.push(TraceRow {
            iter,
            elbo: out.value,
            loglik: out.loglik_term,
            kl: out.kl_term,
            grad_norm,
        });
        let mut step_grad: Vec<f64> = out.grad.iter().map(|g| -g).collect();
        rescale_gradients(&mut step_grad, &segments);
        rmsprop_step(&mut opt, &mut params.values, &step_grad, cfg.learning_rate);
    }
    Ok(TrainResult {
        params,
        spec: *spec,
        trace,
        status: TrainStatus::Completed,
        grid: Vec::new(),
    })
}

/// Posterior boundary samples of the baseline: final states of simulations
/// under the corrected drift `f + u(t)`.
pub fn baseline_boundary_samples(
    params: &ModelParams,
    obs: &Observations,
    n_steps: usize,
    m_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    assert_eq!(params.meta.kind, ModelKind::GaussianBaseline);
    let d = params.meta.dim;
    let horizon = params.meta.horizon;
    let dt = horizon / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let sigma_b = params.sigma_b();
    let corrections: Vec<Vec<f64>> =
        (0..n_steps).map(|j| params.correction_at(dt * j as f64).0).collect();
    let drift_nat = params.drift_natural();
    let x0 = obs.values[0].clone();
    Ok((0..m_paths)
        .into_par_iter()
        .map(|m| {
            let streams = Streams::new(seed).path(m as u64);
            let mut x = x0.clone();
            let mut f = vec![0.0; d];
            for (j, u_j) in corrections.iter().enumerate() {
                drift_nat.eval_into(&x, &mut f);
                let mut noise = streams.stream(j as u64, Purpose::Brownian, 0);
                for i in 0..d {
                    x[i] += (f[i] + u_j[i]) * dt + sigma_b * sqrt_dt * noise.normal();
                }
            }
            x
        })
        .collect())
}

/// Prior forecast of the baseline: corrected drift off, Brownian noise with
/// the learned scale.
pub fn baseline_forecast(
    params: &ModelParams,
    boundary: &[Vec<f64>],
    eval_times: &[f64],
    fc: &ForecastConfig,
) -> Result<ForecastPaths> {
    assert_eq!(params.meta.kind, ModelKind::GaussianBaseline);
    let drift = params.drift_natural();
    forecast_with_drift(&drift, None, Some(params.sigma_b()), boundary, eval_times, fc)
}
