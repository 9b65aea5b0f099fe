use dmmix::robustness::{
    bias_curve, breakdown_probe, contaminate, empirical_influence, BiasConfig, BreakdownConfig, ContaminationSpec,
    Mechanism, Method,
};
use dmmix::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pois(l: f64) -> Component {
    Component::Poisson { lambda: l }
}

fn two_poisson() -> MixtureSpec {
    MixtureSpec::new(vec![0.4, 0.6], vec![pois(0.5), pois(10.0)]).unwrap()
}

#[test]
fn point_mass_fraction_concentrates() {
    let data = vec![1.0; 10_000];
    let spec = ContaminationSpec { epsilon: 0.1, mechanism: Mechanism::PointMass { value: 50.0 }, seed: 3 };
    let out = contaminate(&data, &spec).unwrap();
    let frac = out.iter().filter(|&&v| v == 50.0).count() as f64 / 1e4;
    assert!((frac - 0.1).abs() <= 0.01, "{frac}");
    let spec = ContaminationSpec { epsilon: 0.999, ..spec };
    let out = contaminate(&data, &spec).unwrap();
    assert!(out.iter().filter(|&&v| v == 50.0).count() > 9950);
}

/// At the model every calibrated estimator has the influence function
/// `I^{-1} u(y0)`; for Poisson(5) in the log-mean coordinate that is
/// `(y0 - 5) / 5`.
#[test]
fn influence_matches_inverse_fisher_times_score() {
    let theta = MixtureSpec::single(pois(5.0)).unwrap();
    for d in [Divergence::KlCalibrated, Divergence::Hellinger, Divergence::Vned] {
        let cfg = FitConfig::new(d);
        for y0 in [2usize, 3, 7, 9] {
            let expect = (y0 as f64 - 5.0) / 5.0;
            let a = empirical_influence(&theta, &cfg, y0, 1e-3).unwrap()[0];
            let b = empirical_influence(&theta, &cfg, y0, 5e-4).unwrap()[0];
            assert!((a - expect).abs() <= 0.10 * expect.abs(), "{d} y0={y0}: {a} vs {expect}");
            assert!((a - b).abs() <= 0.05 * b.abs(), "{d} y0={y0}: {a} vs {b}");
        }
    }
}

#[test]
fn bounded_raf_estimates_ignore_far_contamination() {
    let methods = vec![
        Method::new("em", FitConfig::new(Divergence::Kl)),
        Method::new("ned", FitConfig::new(Divergence::Ned)),
        Method::new("vned", FitConfig::new(Divergence::Vned)),
    ];
    let cfg = BreakdownConfig {
        values: vec![50, 1000, 10000],
        eps_grid: vec![0.05],
        threshold: Some(f64::INFINITY),
        ..Default::default()
    };
    let rep = breakdown_probe(&two_poisson(), &methods, &cfg).unwrap();
    let dist = |m: &str, v: usize| rep.rows.iter().find(|r| r.method == m && r.value == v).unwrap().distance;
    for m in ["ned", "vned"] {
        let ds: Vec<f64> = [50, 1000, 10000].iter().map(|&v| dist(m, v)).collect();
        assert!(ds.iter().all(|d| d.is_finite() && *d < 0.5), "{m}: {ds:?}");
        assert!((ds[2] - ds[1]).abs() <= 0.05 * ds[1].max(1e-3), "{m}: {ds:?}");
    }
    assert!(dist("em", 10000) > dist("em", 1000) && dist("em", 1000) > dist("em", 50));
}

#[test]
fn ned_distance_is_linear_for_small_eps() {
    let methods = vec![Method::new("ned", FitConfig::new(Divergence::Ned))];
    let cfg = BreakdownConfig {
        values: vec![14],
        eps_grid: vec![0.005, 0.01, 0.02],
        threshold: Some(f64::INFINITY),
        ..Default::default()
    };
    let rep = breakdown_probe(&two_poisson(), &methods, &cfg).unwrap();
    let d: Vec<f64> = rep.rows.iter().map(|r| r.distance).collect();
    for w in d.windows(2) {
        let ratio = w[1] / w[0];
        assert!((1.6..=2.4).contains(&ratio), "{d:?}");
    }
}

#[test]
fn kl_breaks_down_before_ned() {
    let methods = vec![
        Method::new("em", FitConfig::new(Divergence::Kl)),
        Method::new("ned", FitConfig::new(Divergence::Ned)),
    ];
    let cfg = BreakdownConfig { values: vec![10_000], clean_reps: 20, ..Default::default() };
    let rep = breakdown_probe(&two_poisson(), &methods, &cfg).unwrap();
    let em = rep.blow_up_eps("em", 10_000).expect("EM breaks down on the grid");
    let ned = rep.blow_up_eps("ned", 10_000).unwrap_or(1.0);
    assert!(em < ned, "em {em}, ned {ned}");
    let zero = rep.rows.iter().filter(|r| r.epsilon == 0.0).map(|r| r.distance).fold(0.0, f64::max);
    assert!(zero < 1e-6);
}

#[test]
fn bias_curve_at_zero_matches_plain_fits() {
    let truth = two_poisson();
    let methods = vec![Method::new("em", FitConfig::new(Divergence::Kl))];
    let reps = 60;
    let cfg = BiasConfig { eps_grid: vec![0.0], n: 300, reps, seed: 1, value: 50.0, restarts: 1 };
    let tab = bias_curve(&truth, &methods, &cfg).unwrap();
    let mut plain = Vec::new();
    for r in 0..reps as u64 {
        let d = truth.sample(300, &mut ChaCha8Rng::seed_from_u64(90_000 + r));
        let f = fit(&d, Family::Poisson, 2, &FitConfig::new(Divergence::Kl)).unwrap();
        plain.push(f.theta_hat.canonicalize().to_vector());
    }
    for (i, name) in ["pi1", "pi2", "lambda1", "lambda2"].iter().enumerate() {
        let row = tab.get("em", 0.0, name).unwrap();
        let m = plain.iter().map(|v| v[i]).sum::<f64>() / reps as f64;
        let se = row.sd * (2.0 / reps as f64).sqrt();
        assert!((row.mean - m).abs() <= 2.0 * se + 1e-12, "{name}: {} vs {m} (se {se})", row.mean);
    }
}

#[test]
fn pg_estimates_unbiased_without_contamination() {
    let truth = MixtureSpec::new(
        vec![0.3, 0.7],
        vec![
            Component::PoissonGamma { alpha: 10.0, beta: 1.0 },
            Component::PoissonGamma { alpha: 1.0, beta: 2.0 },
        ],
    )
    .unwrap();
    let methods = vec![Method::new("em", FitConfig::new(Divergence::Kl))];
    let cfg = BiasConfig { eps_grid: vec![0.0], n: 2000, reps: 30, seed: 2, value: 50.0, restarts: 1 };
    let tab = bias_curve(&truth, &methods, &cfg).unwrap();
    // canonical order puts the 0.3 component first
    let a1 = tab.get("em", 0.0, "alpha1").unwrap();
    assert!((10.0..=11.5).contains(&a1.mean), "{a1:?}");
}
