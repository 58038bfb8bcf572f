mod common;

use commontrends::series::ObservationSeries;
use commontrends::ssm::{loglik, simulate};
use commontrends::structural::{
    assemble, decompose, fit, partial_residual, FitOptions, StructuralParams,
    StructuralSpec,
};
use common::{pearson, simulate_structural};

fn params(trend: f64, seasonal: f64, cycle: f64, obs: f64) -> StructuralParams {
    StructuralParams {
        trend_var: trend,
        seasonal_var: seasonal,
        cycle_var: cycle,
        obs_var: obs,
        rho: 0.9,
        lambda: 2.0 * std::f64::consts::PI / 48.0,
    }
}

fn with_gaps(obs: &ObservationSeries, every: usize) -> ObservationSeries {
    let mut v = obs.values().to_vec();
    for t in (5..v.len()).step_by(every) {
        v[t] = f64::NAN;
    }
    ObservationSeries::new(v).unwrap()
}

#[test]
fn components_add_up_to_observations() {
    let spec = StructuralSpec::default();
    let p = params(0.01, 0.001, 0.05, 0.5);
    let (obs, _) = simulate_structural(&spec, &p, 240, 1, 3.0);
    let obs = with_gaps(&obs, 17);
    let d = decompose(&obs, &spec, &p).unwrap();
    for (t, y) in obs.observed() {
        let sum = d.trend[t] + d.seasonal[t] + d.cycle[t] + d.irregular[t];
        assert!((sum - y).abs() < 1e-8, "t={t}");
    }
}

#[test]
fn fixed_seasonal_has_zero_running_sums() {
    let spec = StructuralSpec::default();
    let p = params(0.01, 0.0, 0.05, 0.5);
    let (obs, _) = simulate_structural(&spec, &p, 240, 2, 3.0);
    let d = decompose(&with_gaps(&obs, 23), &spec, &p).unwrap();
    for t in 11..d.len() {
        let sum: f64 = d.seasonal[t - 11..=t].iter().sum();
        assert!(sum.abs() < 1e-6, "t={t} sum={sum}");
        if t >= 12 {
            assert!((d.seasonal[t] - d.seasonal[t - 12]).abs() < 1e-6);
        }
    }
}

#[test]
fn seasonal_running_sum_variance_tracks_its_parameter() {
    let spec = StructuralSpec {
        cycle: false,
        ..Default::default()
    };
    let p = params(0.001, 0.05, 0.0, 0.05);
    let (obs, states) = simulate_structural(&spec, &p, 5640, 3, 2.0);
    let d = decompose(&obs, &spec, &p).unwrap();
    let sums: Vec<f64> = (11..d.len())
        .map(|t| d.seasonal[t - 11..=t].iter().sum())
        .collect();
    let n = sums.len() as f64;
    let mean = sums.iter().sum::<f64>() / n;
    let var = sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let ratio = var / p.seasonal_var;
    assert!((1.0 / 3.0..3.0).contains(&ratio), "ratio {ratio}");

    // the simulated seasonal itself obeys the constraint exactly
    let at = spec.layout().seasonal.unwrap();
    let true_sums: Vec<f64> = (11..states.nrows())
        .map(|t| (t - 11..=t).map(|i| states[(i, at)]).sum())
        .collect();
    let tv = true_sums.iter().map(|s| s * s).sum::<f64>() / true_sums.len() as f64;
    assert!((tv / p.seasonal_var - 1.0).abs() < 0.1, "true ratio {}", tv / p.seasonal_var);
}

#[test]
fn cycle_lag_one_autocorrelation() {
    let spec = StructuralSpec {
        seasonal: false,
        ..Default::default()
    };
    for (rho, lambda) in [(0.9, 0.3), (0.7, 1.2), (0.95, 2.0 * std::f64::consts::PI / 60.0)] {
        let spec = StructuralSpec {
            lambda_bounds: (0.05, 2.0),
            ..spec.clone()
        };
        let p = StructuralParams {
            rho,
            lambda,
            ..params(0.0, 0.0, 1.0, 0.0)
        };
        let (_, states) = simulate_structural(&spec, &p, 100_000, 4, 0.0);
        let psi: Vec<f64> = states.column(spec.layout().cycle.unwrap()).iter().copied().collect();
        let acf = pearson(&psi[1..], &psi[..psi.len() - 1]);
        let expect = rho * lambda.cos();
        assert!((acf - expect).abs() < 0.02, "rho={rho} lambda={lambda}: {acf} vs {expect}");
    }
}

#[test]
fn undamped_cycle_limit_is_a_sinusoid() {
    let spec = StructuralSpec {
        seasonal: false,
        rho_bounds: (0.05, 1.0 - 1e-12),
        ..Default::default()
    };
    let lambda = 2.0 * std::f64::consts::PI / 40.0;
    let (psi0, psi0s) = (1.5, -0.5);
    let mut last = f64::INFINITY;
    for rho in [0.99, 0.999, 0.9999, 0.99999] {
        let p = StructuralParams {
            rho,
            lambda,
            ..params(0.0, 0.0, 0.0, 0.0)
        };
        let mut model = assemble(&spec, &p).unwrap();
        let at = spec.layout().cycle.unwrap();
        model.init_mean[at] = psi0;
        model.init_mean[at + 1] = psi0s;
        let (_, states) = simulate(&model, 400, 5, Some(&[0.0])).unwrap();
        let dev = (0..400)
            .map(|t| {
                let lt = lambda * t as f64;
                (states[(t, at)] - (psi0 * lt.cos() + psi0s * lt.sin())).abs()
            })
            .fold(0.0, f64::max);
        assert!(dev < last, "deviation must shrink as rho -> 1");
        last = dev;
    }
    assert!(last < 1e-2, "{last}");
}

#[test]
fn disabled_cycle_equals_silent_cycle() {
    let on = StructuralSpec::default();
    let off = StructuralSpec {
        cycle: false,
        ..Default::default()
    };
    let p = params(0.02, 0.001, 0.0, 0.4);
    let (obs, _) = simulate_structural(&off, &p, 180, 6, 2.0);
    let m_off = assemble(&off, &p).unwrap();
    let m_on = assemble(&on, &p).unwrap();
    assert_eq!(m_off.dim(), 12);
    let a = loglik(&m_off, &obs).unwrap();
    let b = loglik(&m_on, &obs).unwrap();
    assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
}

#[test]
fn fixed_seasonal_decomposition_is_periodic_after_fit() {
    // same check at estimated parameters
    let spec = StructuralSpec {
        cycle: false,
        ..Default::default()
    };
    let p = params(0.01, 0.0, 0.0, 0.3);
    let (obs, _) = simulate_structural(&spec, &p, 240, 7, 2.0);
    let d = decompose(&obs, &spec, &StructuralParams { seasonal_var: 0.0, ..p }).unwrap();
    for t in 12..d.len() {
        assert!((d.seasonal[t] - d.seasonal[t - 12]).abs() < 1e-6);
    }
}

#[test]
fn noiseless_trend_tracks_observations() {
    let spec = StructuralSpec::trend_only(1);
    let p = params(0.1, 0.0, 0.0, 1e-8);
    let (obs, _) = simulate_structural(&spec, &p, 300, 8, 0.0);
    let d = decompose(&obs, &spec, &p).unwrap();
    for (t, y) in obs.observed() {
        assert!((d.trend[t] - y).abs() < 1e-3);
    }
}

#[test]
fn fit_matches_decompose_at_its_optimum() {
    let spec = StructuralSpec::default();
    let p = params(0.01, 0.001, 0.05, 0.5);
    let (obs, _) = simulate_structural(&spec, &p, 240, 9, 3.0);
    let fitted = fit(&obs, &spec, &FitOptions::default()).unwrap();
    let again = decompose(&obs, &spec, &fitted.params).unwrap();
    assert_eq!(fitted.trend, again.trend);
    assert_eq!(fitted.seasonal, again.seasonal);
    assert_eq!(fitted.cycle, again.cycle);
    assert_eq!(fitted.irregular, again.irregular);
    assert_eq!(fitted.loglik.to_bits(), again.loglik.to_bits());
    let direct = loglik(&assemble(&spec, &fitted.params).unwrap(), &obs).unwrap();
    assert!(fitted.loglik >= direct);
    assert!(fitted.evals > 0);
}

#[test]
fn fit_is_scale_equivariant() {
    let spec = StructuralSpec::default();
    let p = params(0.01, 0.001, 0.05, 0.5);
    let (obs, _) = simulate_structural(&spec, &p, 240, 10, 3.0);
    let scaled = obs.map_values(|_, y| 10.0 * y).unwrap();
    let opts = FitOptions::default();
    let a = fit(&obs, &spec, &opts).unwrap();
    let b = fit(&scaled, &spec, &opts).unwrap();
    let rel = |x: f64, y: f64| (x - y).abs() <= 1e-4 * x.abs().max(y.abs()) + 1e-12;
    assert!(rel(100.0 * a.params.obs_var, b.params.obs_var));
    assert!(rel(100.0 * a.params.trend_var, b.params.trend_var));
    assert!(rel(100.0 * a.params.seasonal_var, b.params.seasonal_var));
    assert!(rel(100.0 * a.params.cycle_var, b.params.cycle_var));
    assert!(rel(a.params.rho, b.params.rho));
    assert!(rel(a.params.lambda, b.params.lambda));
    for t in 0..obs.len() {
        assert!((10.0 * a.trend[t] - b.trend[t]).abs() < 1e-4 * (1.0 + b.trend[t].abs()));
        assert!((10.0 * a.seasonal[t] - b.seasonal[t]).abs() < 1e-4 * (1.0 + b.trend[t].abs()));
    }
}

#[test]
fn constant_series_fits_a_flat_trend() {
    let obs = ObservationSeries::new(vec![5.0; 120]).unwrap();
    let d = fit(&obs, &StructuralSpec::trend_only(1), &FitOptions::default()).unwrap();
    for t in 0..120 {
        assert!((d.trend[t] - 5.0).abs() < 1e-8);
    }
    assert!(d.params.trend_var < 1e-6, "{}", d.params.trend_var);
}

#[test]
fn local_level_signal_to_noise_is_recovered() {
    let spec = StructuralSpec::trend_only(1);
    let p = params(0.01, 0.0, 0.0, 1.0);
    let mut hits = 0;
    for seed in 0..10 {
        let (obs, _) = simulate_structural(&spec, &p, 564, 100 + seed, 0.0);
        let d = fit(&obs, &spec, &FitOptions::default()).unwrap();
        assert!(d.converged);
        let q = d.params.trend_var / d.params.obs_var;
        if (0.005..=0.02).contains(&q) {
            hits += 1;
        }
    }
    assert!(hits >= 8, "{hits}/10");
}

#[test]
fn partial_residual_identities() {
    let spec = StructuralSpec::trend_only(1);
    let p = params(0.05, 0.0, 0.0, 0.3);
    let (obs, _) = simulate_structural(&spec, &p, 100, 11, 0.0);
    let obs = with_gaps(&obs, 9);
    let d = decompose(&obs, &spec, &p).unwrap();
    let pr = partial_residual(&obs, &d).unwrap();
    assert_eq!(pr.missing(), obs.missing());
    assert!(pr.observed().eq(obs.observed()));

    let spec = StructuralSpec::default();
    let p = params(0.01, 0.001, 0.05, 0.5);
    let (obs, _) = simulate_structural(&spec, &p, 120, 12, 3.0);
    let obs = with_gaps(&obs, 11);
    let d = decompose(&obs, &spec, &p).unwrap();
    let pr = partial_residual(&obs, &d).unwrap();
    assert_eq!(pr.missing(), obs.missing());
    for (t, v) in pr.observed() {
        assert!((v - d.trend[t] - d.irregular[t]).abs() < 1e-10);
    }
    let short = ObservationSeries::new(obs.values()[..50].to_vec()).unwrap();
    assert!(partial_residual(&short, &d).is_err());
}

#[test]
fn partial_residual_recovers_trend_plus_error() {
    // seasonal amplitude well above the noise level
    let spec = StructuralSpec {
        cycle: false,
        ..Default::default()
    };
    let p = params(0.02, 1e-4, 0.0, 0.1);
    let (obs, states) = simulate_structural(&spec, &p, 564, 13, 5.0);
    let d = fit(&obs, &spec, &FitOptions::default()).unwrap();
    let pr = partial_residual(&obs, &d).unwrap();
    let at = spec.layout().seasonal.unwrap();
    let truth: Vec<f64> = (0..obs.len())
        .map(|t| obs.values()[t] - states[(t, at)])
        .collect();
    let r = pearson(pr.values(), &truth);
    assert!(r >= 0.99, "{r}");
}
