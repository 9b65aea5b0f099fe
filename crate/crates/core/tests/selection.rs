use dmmix::selection::{fit_order, gdic, select_order, split_select_estimate, SelectionConfig};
use dmmix::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pois(l: f64) -> Component {
    Component::Poisson { lambda: l }
}

fn cfg(d: Divergence, k_max: usize) -> SelectionConfig {
    SelectionConfig { k_max, restarts: 1, fit: FitConfig::new(d), ..Default::default() }
}

fn sample(m: &MixtureSpec, n: usize, seed: u64) -> Vec<f64> {
    m.sample(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn risk_is_nested_in_k() {
    let truth = MixtureSpec::new(vec![0.5, 0.5], vec![pois(2.0), pois(9.0)]).unwrap();
    for d in [Divergence::Kl, Divergence::Hellinger, Divergence::Ned] {
        for seed in 0..5 {
            let data = sample(&truth, 500, seed);
            let c = SelectionConfig { restarts: 3, ..cfg(d, 4) };
            let risks: Vec<f64> = (1..=4).map(|k| gdic(k, &data, Family::Poisson, &c).0).collect();
            for w in risks.windows(2) {
                assert!(w[1] <= w[0] + 1e-4, "{d} seed {seed}: {risks:?}");
            }
        }
    }
}

#[test]
fn one_component_data_prefers_k1() {
    let truth = MixtureSpec::single(pois(6.0)).unwrap();
    let mut wins = [0usize; 2];
    for (i, n) in [100usize, 2000].into_iter().enumerate() {
        for seed in 0..20 {
            let data = sample(&truth, n, 500 + seed);
            let c = cfg(Divergence::Hellinger, 2);
            let (g1, p1) = gdic(1, &data, Family::Poisson, &c);
            let (g2, p2) = gdic(2, &data, Family::Poisson, &c);
            if g1 + p1 < g2 + p2 {
                wins[i] += 1;
            }
        }
    }
    assert!(wins[1] >= wins[0] && wins[1] >= 19, "{wins:?}");
}

#[test]
fn risk_at_the_true_order_shrinks_with_n() {
    let truth = MixtureSpec::new(vec![0.4, 0.6], vec![pois(0.5), pois(10.0)]).unwrap();
    let c = cfg(Divergence::Hellinger, 2);
    let mean_risk = |n: usize| {
        (0..10).map(|s| fit_order(&sample(&truth, n, 700 + s), Family::Poisson, 2, &c).unwrap().1).sum::<f64>() / 10.0
    };
    let r = [mean_risk(200), mean_risk(1000), mean_risk(5000)];
    assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
    assert!(r[2] < 0.01, "{r:?}");
}

/// Monte Carlo trend of P(K = 2) over increasing n for a moderately
/// separated truth.
#[test]
fn selection_improves_with_n() {
    let truth = MixtureSpec::new(vec![0.5, 0.5], vec![pois(3.0), pois(6.0)]).unwrap();
    let c = cfg(Divergence::Hellinger, 3);
    let mut p = Vec::new();
    for n in [250usize, 500, 1000, 2000] {
        let hits = (0..50).filter(|&s| select_order(&sample(&truth, n, 1000 + s), Family::Poisson, &c, 0).0 == 2).count();
        p.push(hits as f64 / 50.0);
    }
    for w in p.windows(2) {
        // one Monte Carlo standard error of slack at the upper end
        assert!(w[1] + 0.05 >= w[0], "{p:?}");
    }
    assert!(p[3] >= 0.9 && p[3] > p[0], "{p:?}");
}

#[test]
fn single_split_on_pg_truth() {
    let truth = MixtureSpec::new(
        vec![0.3, 0.7],
        vec![
            Component::PoissonGamma { alpha: 10.0, beta: 1.0 },
            Component::PoissonGamma { alpha: 1.0, beta: 2.0 },
        ],
    )
    .unwrap();
    let data = sample(&truth, 4000, 11);
    let c = SelectionConfig { splits: 1, ..cfg(Divergence::Kl, 3) };
    let res = split_select_estimate(&data, Family::PoissonGamma, &c).unwrap();
    assert_eq!(res.k_hat, 2);
    assert_eq!(res.per_split_k, vec![2]);
    let est = res.final_estimate.canonicalize();
    assert!((est.weights()[0] - 0.3).abs() < 0.05, "{est:?}");
}
