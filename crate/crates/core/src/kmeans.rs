//! Weighted one-dimensional k-means used to initialize fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mixtures::{Component, Family, MixtureSpec};

const MAX_SWEEPS: usize = 100;

/// Result of Lloyd's algorithm: centroids and per-point cluster labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Weighted Lloyd iterations with k-means++ seeding. Empty clusters are
/// re-seeded at the point farthest from its centroid.
pub fn lloyd(points: &[f64], weights: &[f64], k: usize, seed: u64) -> Result<Clustering> {
    if points.is_empty() {
        return Err(Error::EmptyData);
    }
    if k == 0 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = weights.iter().sum();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[pick(weights, total, &mut rng)]);
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .zip(weights)
            .map(|(&p, &w)| w * centroids.iter().map(|c| (p - c) * (p - c)).fold(f64::INFINITY, f64::min))
            .collect();
        let s: f64 = d2.iter().sum();
        let i = if s > 0.0 { pick(&d2, s, &mut rng) } else { rng.random_range(0..points.len()) };
        centroids.push(points[i]);
    }
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_SWEEPS {
        let mut changed = false;
        for (i, &p) in points.iter().enumerate() {
            let mut best = 0;
            for j in 1..k {
                if (p - centroids[j]).abs() < (p - centroids[best]).abs() {
                    best = j;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sw = vec![0.0; k];
        let mut sx = vec![0.0; k];
        for ((&p, &w), &l) in points.iter().zip(weights).zip(&labels) {
            sw[l] += w;
            sx[l] += w * p;
        }
        for j in 0..k {
            if sw[j] > 0.0 {
                centroids[j] = sx[j] / sw[j];
            } else {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = (points[a] - centroids[labels[a]]).abs() * weights[a].signum();
                        let db = (points[b] - centroids[labels[b]]).abs() * weights[b].signum();
                        da.total_cmp(&db)
                    })
                    .unwrap_or(0);
                centroids[j] = points[far];
                labels[far] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(Clustering { centroids, labels })
}

fn pick<R: Rng>(w: &[f64], total: f64, rng: &mut R) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, x) in w.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(w.len() - 1)
}

/// Moment-matched component for a cluster with weighted mean `m` and variance `v`.
pub fn moment_match(family: Family, m: f64, v: f64, scale: f64) -> Component {
    match family {
        Family::Poisson => Component::Poisson { lambda: m.max(1e-2) },
        Family::PoissonGamma => {
            let m = m.max(1e-2);
            let v = v.max(1.05 * m + 1e-3);
            let beta = m / (v - m);
            Component::PoissonGamma { alpha: m * beta, beta }
        }
        Family::PoissonLognormal => {
            let m = m.max(1e-2);
            let v = v.max(1.05 * m + 1e-3);
            let sigma2 = (1.0 + (v - m) / (m * m)).ln();
            Component::PoissonLognormal { mu: m.ln() - 0.5 * sigma2, sigma2 }
        }
        Family::Normal => {
            let floor = (1e-3 * scale).powi(2).max(1e-12);
            Component::Normal { mu: m, sigma2: v.max(floor) }
        }
    }
}

/// k-means initialization on weighted points.
pub fn kmeans_init_weighted(
    points: &[f64],
    weights: &[f64],
    family: Family,
    k: usize,
    seed: u64,
) -> Result<MixtureSpec> {
    if points.len() != weights.len() {
        return Err(Error::Parameter("points and weights differ in length".into()));
    }
    let total: f64 = weights.iter().sum();
    if points.is_empty() || !(total > 0.0) {
        return Err(Error::EmptyData);
    }
    let lo = points.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = (hi - lo).max(1.0);
    let distinct = {
        let mut v: Vec<f64> =
            points.iter().zip(weights).filter(|(_, &w)| w > 0.0).map(|(&p, _)| p).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    let moments = |idx: &dyn Fn(usize) -> bool| {
        let (mut sw, mut sx, mut sxx) = (0.0, 0.0, 0.0);
        for (i, (&p, &w)) in points.iter().zip(weights).enumerate() {
            if idx(i) {
                sw += w;
                sx += w * p;
                sxx += w * p * p;
            }
        }
        let m = sx / sw;
        (sw, m, (sxx / sw - m * m).max(0.0))
    };
    if distinct < k {
        // not enough distinct values to split: K copies of the pooled fit
        let (_, m, v) = moments(&|_| true);
        let c = moment_match(family, m, v, scale);
        return MixtureSpec::new(vec![1.0 / k as f64; k], vec![c; k]);
    }
    let cl = lloyd(points, weights, k, seed)?;
    let mut ws = Vec::with_capacity(k);
    let mut comps = Vec::with_capacity(k);
    for j in 0..k {
        let (sw, m, v) = moments(&|i| cl.labels[i] == j);
        if sw > 0.0 {
            ws.push(sw / total);
            comps.push(moment_match(family, m, v, scale));
        } else {
            ws.push(0.0);
            comps.push(moment_match(family, cl.centroids[j], 0.0, scale));
        }
    }
    // a cluster that ended with no mass still needs a positive weight
    let floor = 1e-6;
    let ws: Vec<f64> = ws.iter().map(|w| w.max(floor)).collect();
    let s: f64 = ws.iter().sum();
    MixtureSpec::new(ws.iter().map(|w| w / s).collect(), comps)
}

/// k-means with `k + 1` clusters, dropping the lightest one. A small group of
/// outlying values gets a cluster of its own and is left out of the start.
/// Falls back to plain k-means when there are too few distinct values.
pub fn trimmed_kmeans_init_weighted(
    points: &[f64],
    weights: &[f64],
    family: Family,
    k: usize,
    seed: u64,
) -> Result<MixtureSpec> {
    let wide = kmeans_init_weighted(points, weights, family, k + 1, seed)?;
    let light = (0..=k)
        .min_by(|&i, &j| wide.weights()[i].total_cmp(&wide.weights()[j]))
        .unwrap_or(0);
    let keep: Vec<usize> = (0..=k).filter(|&i| i != light).collect();
    let comps: Vec<Component> = keep.iter().map(|&i| wide.components()[i]).collect();
    if comps.windows(2).any(|w| w[0] == w[1]) {
        return kmeans_init_weighted(points, weights, family, k, seed);
    }
    let s: f64 = keep.iter().map(|&i| wide.weights()[i]).sum();
    MixtureSpec::new(keep.iter().map(|&i| wide.weights()[i] / s).collect(), comps)
}

/// k-means initialization on raw observations.
pub fn kmeans_init(data: &[f64], family: Family, k: usize, seed: u64) -> Result<MixtureSpec> {
    let w = vec![1.0; data.len()];
    kmeans_init_weighted(data, &w, family, k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_clusters() {
        let data = [0.0, 0.0, 1.0, 9.0, 10.0, 11.0];
        for seed in 0..10 {
            let m = kmeans_init(&data, Family::Poisson, 2, seed).unwrap().order_by_mean();
            let l: Vec<f64> = m.components().iter().map(|c| c.mean()).collect();
            assert!((l[0] - 1.0 / 3.0).abs() < 1e-12 && (l[1] - 10.0).abs() < 1e-12, "{l:?}");
            assert!((m.weights()[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let m = kmeans_init(&[1.0, 2.0, 6.0], Family::Poisson, 1, 3).unwrap();
        assert!((m.components()[0].mean() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_points() {
        let m = kmeans_init(&[4.0; 7], Family::Poisson, 2, 1).unwrap();
        assert_eq!(m.k(), 2);
        for c in m.components() {
            assert!((c.mean() - 4.0).abs() < 1e-12);
        }
        // the empty-cluster reseed path in Lloyd's itself
        let cl = lloyd(&[4.0; 5], &[1.0; 5], 2, 9).unwrap();
        assert!(cl.labels.contains(&0) && cl.labels.contains(&1));
        assert!(cl.centroids.iter().all(|&c| c == 4.0));
    }

    #[test]
    fn trimmed_start_drops_the_outlying_group() {
        let mut data = vec![1.0, 2.0, 1.0, 2.0, 30.0, 31.0, 29.0, 30.0, 32.0, 31.0];
        data.push(500.0);
        let w = vec![1.0; data.len()];
        let m = trimmed_kmeans_init_weighted(&data, &w, Family::Poisson, 2, 4).unwrap().order_by_mean();
        assert!((m.components()[0].mean() - 1.5).abs() < 1e-12);
        assert!((m.components()[1].mean() - 30.5).abs() < 1e-12);
        assert!((m.weights()[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn moment_matching_families() {
        let c = moment_match(Family::PoissonGamma, 10.0, 20.0, 1.0);
        assert!((c.mean() - 10.0).abs() < 1e-12 && (c.variance() - 20.0).abs() < 1e-9);
        let c = moment_match(Family::PoissonLognormal, 10.0, 20.0, 1.0);
        assert!((c.mean() - 10.0).abs() < 1e-9 && (c.variance() - 20.0).abs() < 1e-9);
        // variance floored above the mean
        let c = moment_match(Family::PoissonGamma, 3.0, 1.0, 1.0);
        assert!(c.variance() > 3.0);
    }
}
