//! Temporary calibration harness (deleted before finalizing).

use levy_tilt_core::kl::{estimate_kl_step, kl_quadrature, kl_series};
use levy_tilt_core::neural::Drift;
use levy_tilt_core::rng::Streams;
use levy_tilt_core::sampler::simulate_tilted_path;
use levy_tilt_core::stable::{simulate_ground_truth, GroundTruthConfig, StableSpec};
use levy_tilt_core::stats;
use levy_tilt_core::tilting::TiltCoeffs;

#[test]
#[ignore]
fn c4_prior_consistency_probe() {
    for (alpha, tau, n_steps, k, t_end) in [
        (1.9f64, 0.02, 25usize, 200usize, 1.0f64),
        (1.9, 0.03, 25, 200, 1.0),
        (1.8, 0.02, 25, 200, 1.0),
    ] {
        // tail-matched Gaussian scale: E|sigma_G xi|^alpha = 1
        let e_abs_xi = 2f64.powf(alpha / 2.0)
            * statrs::function::gamma::gamma((alpha + 1.0) / 2.0)
            / std::f64::consts::PI.sqrt();
        let sigma_g = e_abs_xi.powf(-1.0 / alpha);
        println!("tail-matched sigma_G = {sigma_g:.5}");
        let spec = StableSpec::new(alpha, tau, sigma_g).unwrap();
        let n_paths = 10_000usize;
        let t0 = std::time::Instant::now();
        let grid: Vec<f64> = (0..=n_steps).map(|j| t_end * j as f64 / n_steps as f64).collect();
        let coeffs = vec![TiltCoeffs::scalar(-0.001, 0.0).unwrap(); n_steps];
        let drift = Drift::zero();
        let tilted: Vec<f64> = (0..n_paths)
            .map(|m| {
                let streams = Streams::new(101).path(m as u64);
                simulate_tilted_path(&coeffs, &drift, &spec, &grid, &[0.0], k, &streams, 1_000_000)
                    .unwrap()
                    .final_state()[0]
            })
            .collect();
        let t_tilted = t0.elapsed().as_secs_f64();
        let truth: Vec<f64> = (0..10 * n_paths)
            .map(|m| {
                let cfg = GroundTruthConfig {
                    spec,
                    drift: Drift::zero(),
                    horizon: t_end,
                    n_steps,
                    x0: vec![0.0],
                    seed: 5_000_000 + m as u64,
                };
                simulate_ground_truth(&cfg).unwrap().final_state()[0]
            })
            .collect();
        let ks = stats::ks_two_sample(&tilted, &truth);
        println!(
            "alpha={alpha} tau={tau} N={n_steps} K={k} T={t_end}: KS = {ks:.4} (tilted sim {t_tilted:.1}s)"
        );
    }
}

#[test]
#[ignore]
fn c6_study_probe() {
    use levy_tilt_core::evaluation::{crps, jump_crps, param_recovery, ForecastEnsemble};
    use levy_tilt_core::neural::DriftKind;
    use levy_tilt_core::rng::Purpose;
    use levy_tilt_core::training::baseline::{baseline_boundary_samples, baseline_forecast, baseline_train};
    use levy_tilt_core::training::{
        forecast, posterior_boundary_samples, train, Architecture, ForecastConfig, Observations,
        TrainConfig,
    };

    let alpha = 1.2f64;
    let e_abs_xi = 2f64.powf(alpha / 2.0)
        * statrs::function::gamma::gamma((alpha + 1.0) / 2.0)
        / std::f64::consts::PI.sqrt();
    let sigma_g = e_abs_xi.powf(-1.0 / alpha);
    let spec = StableSpec::new(alpha, 0.01, sigma_g).unwrap();
    let sigma_eps = 0.10;
    let (theta_true, mu_true) = (1.8, 0.3);
    let t_train = 1.0;
    let t_total = 1.25;
    let n_gt = 1250usize;

    let gt = GroundTruthConfig {
        spec,
        drift: Drift::Ou { theta: theta_true, mu: mu_true },
        horizon: t_total,
        n_steps: n_gt,
        x0: vec![0.2],
        seed: 777,
    };
    let path = simulate_ground_truth(&gt).unwrap();
    let mut noise = Streams::new(778).stream(0, Purpose::ObsNoise, 0);
    // 64 train obs on [0, 1], 32 horizon obs on (1, 1.25]
    let mut times = Vec::new();
    let mut values = Vec::new();
    for kk in 0..64 {
        let node = kk * 1000 / 63;
        times.push(path.times[node]);
        values.push(vec![path.state(node)[0] + sigma_eps * noise.normal()]);
    }
    let obs = Observations { times, values, sigma_eps };
    let eval_nodes: Vec<usize> = (1..=32).map(|h| 1000 + h * 250 / 32).collect();
    let eval_times: Vec<f64> = eval_nodes.iter().map(|&n| path.times[n] - 1.0).collect();
    let truth: Vec<Vec<f64>> = eval_nodes.iter().map(|&n| vec![path.state(n)[0]]).collect();

    let arch = Architecture::desk(DriftKind::Ou);
    let cfg = TrainConfig {
        m_paths: 64,
        n_steps: 250,
        k_samples: 250,
        iterations: 600,
        learning_rate: 3e-3,
        l2_scale: 1e-4,
        seed: 900,
        alpha_grid: None,
    };
    let t0 = std::time::Instant::now();
    let tilted = train(&obs, &spec, &cfg, &arch).unwrap();
    println!(
        "tilted train: {:?} in {:.0}s, elbo {:.2} -> {:.2}",
        tilted.status,
        t0.elapsed().as_secs_f64(),
        tilted.trace.smoothed_initial_elbo(),
        tilted.trace.smoothed_final_elbo()
    );
    {
        let mut a_min_seen = f64::INFINITY;
        let mut a_max_seen = f64::NEG_INFINITY;
        let mut b_max_seen = 0.0f64;
        let mut q_max = 0.0f64;
        for j in 0..250 {
            let (c, _) = tilted.params.tilt_at(j as f64 / 250.0);
            a_min_seen = a_min_seen.min(c.a(0));
            a_max_seen = a_max_seen.max(c.a(0));
            b_max_seen = b_max_seen.max(c.b(0).abs());
            q_max = q_max.max(c.b(0) * c.b(0) / (4.0 * c.a(0).abs()));
        }
        println!(
            "tilted coeffs at death: A in [{a_min_seen:.4}, {a_max_seen:.4}], |B| max {b_max_seen:.4}, Q(x=0) max {q_max:.2}"
        );
        let last = &tilted.trace.rows[tilted.trace.rows.len().saturating_sub(5)..];
        for r in last {
            println!("  iter {}: elbo {:.1} loglik {:.1} kl {:.3}", r.iter, r.elbo, r.loglik, r.kl);
        }
    }
    let t0 = std::time::Instant::now();
    let gaussian = baseline_train(&obs, &spec, &cfg, &arch).unwrap();
    println!(
        "gaussian train: {:?} in {:.0}s, elbo {:.2} -> {:.2}, sigma_b {:.3}",
        gaussian.status,
        t0.elapsed().as_secs_f64(),
        gaussian.trace.smoothed_initial_elbo(),
        gaussian.trace.smoothed_final_elbo(),
        gaussian.params.sigma_b()
    );

    let fc = ForecastConfig { horizon: 0.25, n_steps: 250, m_paths: 256, seed: 901 };
    let tb = posterior_boundary_samples(&tilted.params, &spec, &obs, 250, 250, 64, 902).unwrap();
    let tf = forecast(&tilted.params, &spec, &tb, &eval_times, &fc).unwrap();
    let gb = baseline_boundary_samples(&gaussian.params, &obs, 250, 64, 902).unwrap();
    let gf = baseline_forecast(&gaussian.params, &gb, &eval_times, &fc).unwrap();

    let score = |samples: Vec<Vec<Vec<f64>>>| -> (f64, f64) {
        let ens = ForecastEnsemble { times: eval_times.clone(), samples, observed: truth.clone() };
        let c = ens.mean_crps();
        let j = match jump_crps(&ens, 97.5).unwrap() {
            levy_tilt_core::evaluation::JumpCrps::Value { value, .. } => value,
            _ => f64::NAN,
        };
        (c, j)
    };
    let (tc, tj) = score(tf.samples);
    let (gc, gj) = score(gf.samples);
    let t_rec = param_recovery(&tilted.params.drift_natural(), &gt.drift).unwrap();
    let g_rec = param_recovery(&gaussian.params.drift_natural(), &gt.drift).unwrap();
    println!("CRPS: tilted {tc:.4} vs gaussian {gc:.4}");
    println!("jumpCRPS@97.5: tilted {tj:.4} vs gaussian {gj:.4}");
    println!("theta err: tilted {:.3} vs gaussian {:.3}", t_rec[0].1, g_rec[0].1);
    println!("mu err: tilted {:.3} vs gaussian {:.3}", t_rec[1].1, g_rec[1].1);
    let _ = crps(&[0.0], 0.0);
}

#[test]
#[ignore]
fn c3_triple_agreement_probe() {
    let sets = [
        (1.3f64, -0.8f64, 0.3f64, 0.2f64),
        (1.5, -1.0, 0.5, 0.3),
        (0.9, -0.5, -0.4, 0.0),
        (1.7, -1.5, 0.8, -0.5),
        (1.1, -0.7, 0.0, 0.6),
        (1.4, -2.0, -0.9, 0.1),
        (0.7, -0.4, 0.3, -0.2),
        (1.6, -1.2, -0.3, 0.4),
        (1.2, -0.9, 0.7, 0.25),
        (1.8, -1.8, -0.6, -0.35),
    ];
    for (alpha, a, b, x) in sets {
        let spec = StableSpec::new(alpha, 1.0, 1.0).unwrap();
        let coeffs = TiltCoeffs::scalar(a, b).unwrap();
        let t0 = std::time::Instant::now();
        let mc = estimate_kl_step(&coeffs, &[x], &spec, 1_000_000, None, &Streams::new(33), 0);
        let quad = kl_quadrature(&coeffs, 0, x, &spec).unwrap();
        let ser = kl_series(&coeffs, 0, x, &spec, 40).unwrap();
        let r1 = (mc.value - quad).abs() / quad;
        let r2 = (ser.value - quad).abs() / quad;
        let r3 = (mc.value - ser.value).abs() / ser.value;
        println!(
            "alpha={alpha} A={a} B={b} x={x}: mc={:.6} quad={quad:.6} series={:.6} \
             rels=({r1:.4},{r2:.6},{r3:.4}) conv={} [{:.2}s]",
            mc.value,
            ser.value,
            ser.converged,
            t0.elapsed().as_secs_f64()
        );
    }
}
