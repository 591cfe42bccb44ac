//! Monte Carlo ELBO of the tilted model, with exact reverse-mode gradients
//! under the stop-gradient contract.
//!
//! Per path the objective contribution is the Gaussian log-likelihood at the
//! snapped observation nodes minus the time-integrated KL jump cost. The
//! forward simulation records, per step, the analytic partials of the KL
//! estimate and of each realized jump with respect to `(A_t, B_t, X_t)`;
//! the backward pass is a plain adjoint recursion over those records ending
//! in one encoder/head backward per time node.
//!
//! Stopped randomness: Poisson jump counts and accepted mixing scales are
//! captured in a [`StoppedRecord`] during the forward pass and enter the
//! gradient as constants. Replaying a record freezes exactly the quantities
//! the gradient treats as constant, which is what makes the ELBO a smooth
//! function of the parameters for finite-difference checking. Jump values
//! remain differentiable through the conditional-Gaussian reparametrization
//! `y = mu_y(r) + sigma_y(r) z`, and the Monte Carlo intensity and KL share
//! one magnitude-sample stream per (path, step, dimension).

use crate::error::{Error, Result};
use crate::kl::g_from_log_and_exp;
use crate::neural::drift;
use crate::neural::{ModelKind, ModelParams};
use crate::rng::{Purpose, Streams};
use crate::sampler::sample_mixing_scale;
use crate::stable::StableSpec;
use crate::tilting::TiltCoeffs;
use rayon::prelude::*;

use super::{snap_observation_nodes, Observations};

const LN_2PI: f64 = 1.837_877_066_409_345_4;

#[derive(Clone, Debug)]
pub struct ElboConfig {
    pub m_paths: usize,
    pub n_steps: usize,
    pub k_samples: usize,
    pub l2_scale: f64,
    pub attempt_cap: u64,
}

/// Value, decomposition, and flat gradient of one ELBO evaluation.
#[derive(Clone, Debug)]
pub struct ElboOut {
    /// `loglik_term - kl_term - l2_penalty`, exactly.
    pub value: f64,
    pub loglik_term: f64,
    pub kl_term: f64,
    pub l2_penalty: f64,
    /// Gradient of `value` (ascent direction) over the flat parameters.
    pub grad: Vec<f64>,
    pub total_jumps: usize,
}

/// The discrete randomness of one evaluation: per (path, step, dimension)
/// the jump count, accepted mixing scales, and standard normals.
#[derive(Clone, Debug, Default)]
pub struct StoppedRecord {
    paths: Vec<PathStopped>,
}

#[derive(Clone, Debug, Default)]
struct PathStopped {
    steps: Vec<StepStopped>,
}

#[derive(Clone, Debug, Default)]
struct StepStopped {
    counts: Vec<u32>,
    scales: Vec<Vec<f64>>,
    normals: Vec<Vec<f64>>,
}

struct StepRec {
    di_da: Vec<f64>,
    di_db: Vec<f64>,
    j_a: Vec<f64>,
    j_b: Vec<f64>,
    j_x: Vec<f64>,
}

struct PathOut {
    loglik: f64,
    kl: f64,
    g_a: Vec<f64>,
    g_b: Vec<f64>,
    g_drift: Vec<f64>,
    g_log_sigma: f64,
    n_jumps: usize,
    stopped: PathStopped,
}

/// Evaluates the ELBO and its gradient. `replay` re-runs a previous
/// evaluation's discrete randomness; fresh draws are taken otherwise and
/// returned for later replay.
pub fn elbo_with_grad(
    params: &ModelParams,
    spec: &StableSpec,
    obs: &Observations,
    x0: &[f64],
    cfg: &ElboConfig,
    streams: Streams,
    replay: Option<&StoppedRecord>,
) -> Result<(ElboOut, StoppedRecord)> {
    assert_eq!(params.meta.kind, ModelKind::Tilted);
    let d = params.meta.dim;
    let n = cfg.n_steps;
    if x0.len() != d {
        return Err(Error::config("x0 dimension mismatch"));
    }
    if let Some(r) = replay {
        if r.paths.len() != cfg.m_paths {
            return Err(Error::config("stopped record path count mismatch"));
        }
    }
    let horizon = params.meta.horizon;
    let dt = horizon / n as f64;
    let obs_nodes = snap_observation_nodes(obs, horizon, n)?;
    let mut obs_at_node: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for (oi, &node) in obs_nodes.iter().enumerate() {
        obs_at_node[node].push(oi);
    }

    // Neural stack once per time node, shared across paths.
    let stacks: Vec<_> = (0..n).map(|j| params.tilt_at(dt * j as f64)).collect();
    let coeffs: Vec<&TiltCoeffs> = stacks.iter().map(|(c, _)| c).collect();

    let layout = params.layout();
    let drift_kind = &params.meta.drift_kind;
    let drift_raw = &params.values[layout.drift.clone()];
    let drift_nat = drift_kind.natural(drift_raw, d);
    let sigma = params.sigma_eps();
    let learn_sigma = layout.log_sigma_eps.is_some();

    let results: Vec<Result<PathOut>> = (0..cfg.m_paths)
        .into_par_iter()
        .map(|m| {
            simulate_path(
                m,
                params,
                spec,
                obs,
                &obs_at_node,
                x0,
                cfg,
                dt,
                &coeffs,
                drift_kind,
                drift_raw,
                &drift_nat,
                sigma,
                learn_sigma,
                streams,
                replay.map(|r| &r.paths[m]),
            )
        })
        .collect();

    // Deterministic reduction in path order.
    let m_f = cfg.m_paths as f64;
    let mut loglik_term = 0.0;
    let mut kl_term = 0.0;
    let mut g_a = vec![0.0; n * d];
    let mut g_b = vec![0.0; n * d];
    let mut g_drift = vec![0.0; drift_raw.len()];
    let mut g_log_sigma = 0.0;
    let mut total_jumps = 0usize;
    let mut record = StoppedRecord { paths: Vec::with_capacity(cfg.m_paths) };
    for out in results {
        let out = out?;
        loglik_term += out.loglik / m_f;
        kl_term += out.kl / m_f;
        for (acc, v) in g_a.iter_mut().zip(&out.g_a) {
            *acc += v / m_f;
        }
        for (acc, v) in g_b.iter_mut().zip(&out.g_b) {
            *acc += v / m_f;
        }
        for (acc, v) in g_drift.iter_mut().zip(&out.g_drift) {
            *acc += v / m_f;
        }
        g_log_sigma += out.g_log_sigma / m_f;
        total_jumps += out.n_jumps;
        record.paths.push(out.stopped);
    }

    // Assemble the flat gradient.
    let mut grad = vec![0.0; params.values.len()];
    for (j, (_, cache)) in stacks.iter().enumerate() {
        params.tilt_backward(cache, &g_a[j * d..(j + 1) * d], &g_b[j * d..(j + 1) * d], &mut grad);
    }
    grad[layout.drift.clone()].copy_from_slice(&g_drift);
    if let Some(i) = layout.log_sigma_eps {
        grad[i] += g_log_sigma;
    }
    let l2_penalty = cfg.l2_scale * params.values.iter().map(|v| v * v).sum::<f64>();
    for (g, v) in grad.iter_mut().zip(&params.values) {
        *g -= 2.0 * cfg.l2_scale * v;
    }

    let value = loglik_term - kl_term - l2_penalty;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerical(format!(
            "non-finite ELBO (value {value}, loglik {loglik_term}, kl {kl_term})"
        )));
    }
    // replay runs hand back the record they consumed
    let record = replay.cloned().unwrap_or(record);
    Ok((ElboOut { value, loglik_term, kl_term, l2_penalty, grad, total_jumps }, record))
}

#[allow(clippy::too_many_arguments)]
fn simulate_path(
    path_idx: usize,
    params: &ModelParams,
    spec: &StableSpec,
    obs: &Observations,
    obs_at_node: &[Vec<usize>],
    x0: &[f64],
    cfg: &ElboConfig,
    dt: f64,
    coeffs: &[&TiltCoeffs],
    drift_kind: &crate::neural::DriftKind,
    drift_raw: &[f64],
    drift_nat: &crate::neural::Drift,
    sigma: f64,
    learn_sigma: bool,
    streams: Streams,
    replay: Option<&PathStopped>,
) -> Result<PathOut> {
    let d = params.meta.dim;
    let n = cfg.n_steps;
    let k = cfg.k_samples;
    let sg2 = spec.sigma_g * spec.sigma_g;
    let c_over_k = spec.one_sided_mass() / k as f64;
    let pstreams = streams.path(path_idx as u64);
    if let Some(r) = replay {
        if r.steps.len() != n {
            return Err(Error::config("stopped record step count mismatch"));
        }
    }

    let mut x = x0.to_vec();
    let mut states = vec![0.0; (n + 1) * d];
    states[..d].copy_from_slice(&x);
    let mut f_buf = vec![0.0; d];
    let mut recs: Vec<StepRec> = Vec::with_capacity(n);
    let mut stopped = PathStopped { steps: Vec::with_capacity(n) };
    let mut kl = 0.0;
    let mut n_jumps_total = 0usize;

    for j in 0..n {
        let co = coeffs[j];
        let mut rec = StepRec {
            di_da: vec![0.0; d],
            di_db: vec![0.0; d],
            j_a: vec![0.0; d],
            j_b: vec![0.0; d],
            j_x: vec![0.0; d],
        };
        let mut step_stop = StepStopped {
            counts: vec![0; d],
            scales: vec![Vec::new(); d],
            normals: vec![Vec::new(); d],
        };
        let mut jump_sum = vec![0.0; d];
        for i in 0..d {
            let a = co.a(i);
            let b = co.b(i);
            let xi = x[i];
            // Shared magnitude stream: intensity and KL reuse these samples.
            let mut mag = pstreams.stream(j as u64, Purpose::KlMagnitude, i);
            let mut h_sum = 0.0;
            let mut g_sum = 0.0;
            let mut da = 0.0;
            let mut db = 0.0;
            for _ in 0..k {
                let y = spec.sample_jump_magnitude(mag.u01());
                let y2 = y * y;
                let two_xy = 2.0 * xi * y;
                let lp = a * (two_xy + y2) + b * y;
                let lm = a * (y2 - two_xy) - b * y;
                let ep = lp.exp();
                let em = lm.exp();
                h_sum += ep + em;
                g_sum += g_from_log_and_exp(lp, ep) + g_from_log_and_exp(lm, em);
                let gpp = lp * ep;
                let gpm = lm * em;
                da += gpp * (two_xy + y2) + gpm * (y2 - two_xy);
                db += (gpp - gpm) * y;
            }
            let lambda_i = dt * c_over_k * h_sum;
            kl += dt * c_over_k * g_sum;
            rec.di_da[i] = c_over_k * da;
            rec.di_db[i] = c_over_k * db;

            if !(lambda_i <= crate::sampler::MAX_STEP_INTENSITY) {
                return Err(Error::numerical(format!(
                    "intensity blow-up at path {path_idx}, step {j}, dim {i}: \
                     lambda = {lambda_i}"
                )));
            }
            let count = match replay {
                Some(r) => r.steps[j].counts[i],
                None => {
                    let c = pstreams.stream(j as u64, Purpose::JumpCount, i).poisson(lambda_i);
                    u32::try_from(c).map_err(|_| {
                        Error::numerical(format!(
                            "jump count overflow at path {path_idx}, step {j}"
                        ))
                    })?
                }
            };
            let mut proposal = pstreams.stream(j as u64, Purpose::Proposal, i);
            let mut accept = pstreams.stream(j as u64, Purpose::AcceptU, i);
            let mut normal = pstreams.stream(j as u64, Purpose::JumpNormal, i);
            for jj in 0..count as usize {
                let (r, z) = match replay {
                    Some(rec) => (rec.steps[j].scales[i][jj], rec.steps[j].normals[i][jj]),
                    None => {
                        let r = sample_mixing_scale(
                            co,
                            i,
                            xi,
                            spec,
                            &mut proposal,
                            &mut accept,
                            cfg.attempt_cap,
                        )?
                        .r;
                        (r, normal.normal())
                    }
                };
                // y = mu + sd z with K1 = 2 A x + B, K2 = A - 1/(2 r^2 sG^2)
                let k1 = 2.0 * a * xi + b;
                let k2 = a - 1.0 / (2.0 * r * r * sg2);
                let mu = -k1 / (2.0 * k2);
                let var = -1.0 / (2.0 * k2);
                let sd = var.sqrt();
                let y = mu + sd * z;
                let dy_dk1 = -1.0 / (2.0 * k2);
                let dy_dk2 = k1 / (2.0 * k2 * k2) + z * sd * var;
                rec.j_a[i] += dy_dk1 * 2.0 * xi + dy_dk2;
                rec.j_b[i] += dy_dk1;
                rec.j_x[i] += dy_dk1 * 2.0 * a;
                jump_sum[i] += y;
                if replay.is_none() {
                    step_stop.scales[i].push(r);
                    step_stop.normals[i].push(z);
                }
            }
            step_stop.counts[i] = count;
            n_jumps_total += count as usize;
        }
        drift_nat.eval_into(&x, &mut f_buf);
        for i in 0..d {
            x[i] += f_buf[i] * dt + jump_sum[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "non-finite state at path {path_idx}, step {j}"
            )));
        }
        states[(j + 1) * d..(j + 2) * d].copy_from_slice(&x);
        recs.push(rec);
        stopped.steps.push(step_stop);
    }

    // Log-likelihood at the snapped observation nodes.
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut loglik = 0.0;
    for (node, obs_list) in obs_at_node.iter().enumerate() {
        for &oi in obs_list {
            for i in 0..d {
                let r = obs.values[oi][i] - states[node * d + i];
                loglik += -0.5 * LN_2PI - sigma.ln() - 0.5 * r * r * inv_s2;
            }
        }
    }

    // Adjoint recursion over the step records.
    let mut adj = vec![0.0; d];
    let mut g_a = vec![0.0; n * d];
    let mut g_b = vec![0.0; n * d];
    let mut g_drift = vec![0.0; drift_raw.len()];
    let mut g_log_sigma = 0.0;
    let mut adj_f = vec![0.0; d];
    for j in (0..n).rev() {
        for &oi in &obs_at_node[j + 1] {
            for i in 0..d {
                let r = obs.values[oi][i] - states[(j + 1) * d + i];
                adj[i] += r * inv_s2;
                if learn_sigma {
                    g_log_sigma += r * r * inv_s2 - 1.0;
                }
            }
        }
        let rec = &recs[j];
        let xj = &states[j * d..(j + 1) * d];
        for i in 0..d {
            g_a[j * d + i] += adj[i] * rec.j_a[i] - dt * rec.di_da[i];
            g_b[j * d + i] += adj[i] * rec.j_b[i] - dt * rec.di_db[i];
        }
        for i in 0..d {
            adj_f[i] = adj[i] * dt;
        }
        let adj_x_drift = drift::backward(drift_kind, drift_raw, xj, &adj_f, &mut g_drift);
        for i in 0..d {
            // dI/dx = 2 A dI/dB since x and B enter only through K1
            let di_dx = 2.0 * coeffs[j].a(i) * rec.di_db[i];
            adj[i] = adj[i] * (1.0 + rec.j_x[i]) + adj_x_drift[i] - dt * di_dx;
        }
    }
    // Observations at node 0 contribute likelihood but no gradient: X_0 is
    // the fixed initial state.
    if learn_sigma {
        for &oi in &obs_at_node[0] {
            for i in 0..d {
                let r = obs.values[oi][i] - states[i];
                g_log_sigma += r * r * inv_s2 - 1.0;
            }
        }
    }

    Ok(PathOut {
        loglik,
        kl,
        g_a,
        g_b,
        g_drift,
        g_log_sigma,
        n_jumps: n_jumps_total,
        stopped,
    })
}
