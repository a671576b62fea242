use sawcav::lm::LmOptions;
use sawcav::photonstats::{
    correlate, fit_g2, fit_lifetime, g2_model, poisson_stream, two_level_stream, CorrelationHistogram,
    DecayHistogram,
};
use sawcav::rng::poisson_counts;

const BIN: f64 = 500.0;
const HALF_BINS: i64 = 60;
const TAU0: f64 = 3000.0;

/// Poisson histogram around the antibunching model with `total` expected coincidences.
fn noisy_g2(g2_0: f64, total: f64, seed: u64) -> CorrelationHistogram {
    let shape: Vec<f64> = (-HALF_BINS..=HALF_BINS)
        .map(|k| g2_model(k as f64 * BIN, g2_0, TAU0))
        .collect();
    let norm = total / shape.iter().sum::<f64>();
    let means: Vec<f64> = shape.iter().map(|s| s * norm).collect();
    CorrelationHistogram {
        tau_edges: (-HALF_BINS..=HALF_BINS + 1).map(|k| (k as f64 - 0.5) * BIN).collect(),
        counts: poisson_counts(&means, seed).into_iter().map(|c| c as u64).collect(),
        normalization: norm,
        warnings: Vec::new(),
    }
}

fn fitted_g2_0(g2_0: f64, trials: u64) -> Vec<f64> {
    (0..trials)
        .map(|seed| fit_g2(&noisy_g2(g2_0, 1e5, 1000 + seed), None, &LmOptions::default()).unwrap().g2_0)
        .collect()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

#[test]
fn perfect_antibunching_recovered_under_noise() {
    let fits = fitted_g2_0(0.0, 100);
    let worst = fits.iter().map(|g| g.abs()).fold(0.0, f64::max);
    assert!(worst < 0.05, "worst |g2(0)| {worst}");
}

#[test]
fn g2_fit_is_unbiased() {
    for g0 in [0.0, 0.22, 0.5, 1.0] {
        let fits = fitted_g2_0(g0, 100);
        let (m, sd) = mean_sd(&fits);
        assert!((m - g0).abs() < 3.0 * sd / 10.0 + 1e-3, "g2_0 {g0}: mean {m}, sd {sd}");
    }
}

#[test]
fn independent_streams_are_uncorrelated() {
    for seed in [1, 2, 3] {
        let mut tags = poisson_stream(1e4, 1.0, 0, seed).unwrap();
        tags.extend(poisson_stream(1e4, 1.0, 1, seed + 100).unwrap());
        tags.sort();
        let h = correlate(&tags, 0, 1, 100e6, 10e6).unwrap();
        assert!(h.warnings.is_empty(), "{:?}", h.warnings);
        let sigma = h.g2_poisson_sigma();
        let mean_g2 = h.g2().iter().sum::<f64>() / h.counts.len() as f64;
        assert!((mean_g2 - 1.0).abs() < 3.0 * sigma / (h.counts.len() as f64).sqrt());
    }
}

#[test]
fn two_level_stream_fit_finds_single_emitter() {
    let tags = two_level_stream(5e7, 2e-9, 0.5, 0.05, 8).unwrap();
    let h = correlate(&tags, 0, 1, 40_000.0, 200.0).unwrap();
    let fit = fit_g2(&h, None, &LmOptions::default()).unwrap();
    assert!(fit.single_emitter);
    assert!(fit.g2_0 < 0.1, "{fit:?}");
}

#[test]
fn lifetime_with_background_and_noise() {
    let times: Vec<f64> = (0..300).map(|i| 50.0 * i as f64).collect();
    let (peak, tau, t0) = (2e4, 2000.0, 500.0);
    let means: Vec<f64> = times
        .iter()
        .map(|t| 0.01 * peak + if *t < t0 { 0.0 } else { peak * (-(t - t0) / tau).exp() })
        .collect();
    for seed in 0..20 {
        let d = DecayHistogram::new(times.clone(), poisson_counts(&means, seed)).unwrap();
        let fit = fit_lifetime(&d, 2, &LmOptions::default()).unwrap();
        assert!((fit.tau - tau).abs() / tau < 0.03, "seed {seed}: {fit:?}");
        assert!((fit.background - 0.01 * peak).abs() < 5.0 * fit.se_background);
    }
}
