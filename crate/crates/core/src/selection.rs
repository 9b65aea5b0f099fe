//! Order selection by a penalized minimized divergence, with repeated random
//! splits, majority vote and zero-padded comparison across orders.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dm::{default_estimate, divergence_d, fit_multistart, FitConfig, FitResult, Target};
use crate::error::{Error, Result};
use crate::mixtures::{Family, MixtureSpec};

/// Penalty scale `b_{n1}` in `GDIC(K) = R(K) + b_{n1} p(K) / n1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Penalty {
    /// `b = ln(n1) / 2`.
    #[default]
    BicHalfLog,
    /// `b = c ln(n1)`.
    LogMultiple { c: f64 },
    /// `b = c n1^a`.
    Power { c: f64, a: f64 },
    /// Fixed `b`.
    Constant { b: f64 },
}

impl Penalty {
    pub fn b(&self, n1: usize) -> f64 {
        let n = n1 as f64;
        match *self {
            Penalty::BicHalfLog => 0.5 * n.ln(),
            Penalty::LogMultiple { c } => c * n.ln(),
            Penalty::Power { c, a } => c * n.powf(a),
            Penalty::Constant { b } => b,
        }
    }

    /// `b_{n1} p(K) / n1`.
    pub fn term(&self, k: usize, family: Family, n1: usize) -> f64 {
        self.b(n1) * param_dim(k, family) as f64 / n1 as f64
    }
}

/// `(K - 1) + K d_phi`.
pub fn param_dim(k: usize, family: Family) -> usize {
    k - 1 + k * family.component_dim()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub k_max: usize,
    pub penalty: Penalty,
    pub splits: usize,
    /// Fraction of the data used for selection; the rest is for estimation.
    pub split_ratio: f64,
    pub seed: u64,
    /// k-means restarts per order (different seeds); a trimmed start is
    /// always added.
    pub restarts: usize,
    pub fit: FitConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            k_max: 5,
            penalty: Penalty::BicHalfLog,
            splits: 5,
            split_ratio: 0.5,
            seed: 0,
            restarts: 3,
            fit: FitConfig::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self, family: Family) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::Parameter("k_max must be at least 1".into()));
        }
        if self.splits == 0 {
            return Err(Error::Parameter("at least one split is needed".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Parameter(format!("split ratio must lie in (0, 1), got {}", self.split_ratio)));
        }
        self.fit.validate(family)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdicRow {
    pub split: usize,
    pub k: usize,
    #[serde(with = "crate::io::float_or_string")]
    pub risk: f64,
    pub penalty: f64,
    #[serde(with = "crate::io::float_or_string")]
    pub gdic: f64,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub per_split_k: Vec<usize>,
    pub k_hat: usize,
    pub final_estimate: MixtureSpec,
    /// Splits whose estimate went into the average.
    pub averaged_over: usize,
    pub gdic_table: Vec<GdicRow>,
}

impl SelectionResult {
    pub fn table_csv(&self) -> String {
        let mut s = String::from("split,K,risk,penalty,gdic,chosen\n");
        for r in &self.gdic_table {
            s.push_str(&format!("{},{},{},{},{},{}\n", r.split, r.k, r.risk, r.penalty, r.gdic, r.chosen));
        }
        s
    }
}

/// Minimized divergence at order `k`: the best fit over restarts, with the
/// risk measured by the calibrated version of the fitting generator.
pub fn fit_order(data: &[f64], family: Family, k: usize, cfg: &SelectionConfig) -> Result<(FitResult, f64)> {
    let est = default_estimate(data, family)?;
    let f = fit_multistart(&est, family, k, &cfg.fit, cfg.restarts)?;
    let t = Target::new(&est, family, Some(&f.theta_hat), cfg.fit.tail_mass)?;
    let risk = divergence_d(&f.theta_hat, &t, cfg.fit.divergence.calibrated())?;
    Ok((f, risk))
}

/// `GDIC(K)` on the selection data; `+inf` when the fit fails.
pub fn gdic(k: usize, data: &[f64], family: Family, cfg: &SelectionConfig) -> (f64, f64) {
    let pen = cfg.penalty.term(k, family, data.len());
    match fit_order(data, family, k, cfg) {
        Ok((_, r)) if r.is_finite() => (r, pen),
        _ => (f64::INFINITY, pen),
    }
}

/// GDIC for `K = 1..=k_max` on one selection sample, and the minimizing
/// order (smaller `K` on ties).
pub fn select_order(data: &[f64], family: Family, cfg: &SelectionConfig, split: usize) -> (usize, Vec<GdicRow>) {
    let rows: Vec<GdicRow> = (1..=cfg.k_max)
        .into_par_iter()
        .map(|k| {
            let (risk, penalty) = gdic(k, data, family, cfg);
            GdicRow { split, k, risk, penalty, gdic: risk + penalty, chosen: false }
        })
        .collect();
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.gdic < rows[best].gdic {
            best = i;
        }
    }
    let mut rows = rows;
    rows[best].chosen = true;
    (rows[best].k, rows)
}

/// Most frequent value; ties go to the smaller one.
pub fn majority_vote(ks: &[usize]) -> Option<usize> {
    let max = *ks.iter().max()?;
    let mut counts = vec![0usize; max + 1];
    for &k in ks {
        counts[k] += 1;
    }
    let top = *counts.iter().max()?;
    counts.iter().position(|&c| c == top)
}

fn split_indices(n: usize, ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n1 = ((n as f64 * ratio).round() as usize).clamp(1, n - 1);
    let second = idx.split_off(n1);
    (idx, second)
}

/// Split, select, estimate: `C` random splits; on each, the order minimizing
/// GDIC on the selection part; a majority vote; then the voted order fitted on
/// the estimation part of every split that chose it, averaged after
/// canonical labelling.
pub fn split_select_estimate(data: &[f64], family: Family, cfg: &SelectionConfig) -> Result<SelectionResult> {
    cfg.validate(family)?;
    if data.len() < 2 {
        return Err(Error::EmptyData);
    }
    let splits: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.splits)
        .map(|s| {
            let (a, b) = split_indices(data.len(), cfg.split_ratio, cfg.seed.wrapping_add(s as u64));
            (a.iter().map(|&i| data[i]).collect(), b.iter().map(|&i| data[i]).collect())
        })
        .collect();
    let picks: Vec<(usize, Vec<GdicRow>)> =
        splits.par_iter().enumerate().map(|(s, (d1, _))| select_order(d1, family, cfg, s)).collect();
    let per_split_k: Vec<usize> = picks.iter().map(|p| p.0).collect();
    let k_hat = majority_vote(&per_split_k).expect("at least one split");
    let gdic_table = picks.into_iter().flat_map(|p| p.1).collect();
    let fits: Vec<MixtureSpec> = splits
        .par_iter()
        .zip(&per_split_k)
        .filter(|(_, &k)| k == k_hat)
        .filter_map(|((_, d2), _)| {
            let est = default_estimate(d2, family).ok()?;
            fit_multistart(&est, family, k_hat, &cfg.fit, cfg.restarts).ok().map(|f| f.theta_hat)
        })
        .collect();
    let final_estimate = if fits.is_empty() {
        let est = default_estimate(data, family)?;
        fit_multistart(&est, family, k_hat, &cfg.fit, cfg.restarts)?.theta_hat
    } else {
        average(&fits)?
    };
    Ok(SelectionResult { per_split_k, k_hat, final_estimate, averaged_over: fits.len(), gdic_table })
}

/// Entrywise average of canonically labelled mixtures of the same order.
pub fn average(fits: &[MixtureSpec]) -> Result<MixtureSpec> {
    let first = fits.first().ok_or(Error::EmptyData)?;
    let (fam, k) = (first.family(), first.k());
    let mut acc = vec![0.0; first.to_vector().len()];
    for f in fits {
        for (a, v) in acc.iter_mut().zip(f.canonicalize().to_vector()) {
            *a += v / fits.len() as f64;
        }
    }
    let s: f64 = acc[..k].iter().sum();
    for a in &mut acc[..k] {
        *a /= s;
    }
    MixtureSpec::from_vector(fam, k, &acc)
}

/// Per-component blocks `(pi_k, phi_k)` of the canonical labelling, padded
/// with zero blocks so both vectors have `max(K_hat, K0)` blocks.
pub fn dimension_match(estimate: &MixtureSpec, truth: &MixtureSpec) -> (Vec<f64>, Vec<f64>) {
    let blocks = |m: &MixtureSpec| -> Vec<f64> {
        let m = m.canonicalize();
        m.weights()
            .iter()
            .zip(m.components())
            .flat_map(|(w, c)| std::iter::once(*w).chain(c.params()))
            .collect()
    };
    let (mut a, mut b) = (blocks(estimate), blocks(truth));
    let len = a.len().max(b.len());
    a.resize(len, 0.0);
    b.resize(len, 0.0);
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixtures::Component;

    #[test]
    fn dimensions() {
        assert_eq!(param_dim(2, Family::Poisson), 3);
        assert_eq!(param_dim(2, Family::PoissonGamma), 5);
        for f in [Family::Poisson, Family::PoissonGamma, Family::PoissonLognormal, Family::Normal] {
            assert_eq!(param_dim(1, f), f.component_dim());
        }
    }

    #[test]
    fn penalty_term() {
        let p = Penalty::BicHalfLog.term(2, Family::Poisson, 100);
        assert!((p - 3.0 * 0.5 * 100f64.ln() / 100.0).abs() < 1e-15);
        assert!((p - 0.0690776).abs() < 1e-7);
        let c = Penalty::Constant { b: 2.0 };
        assert!((c.term(1, Family::Poisson, 10) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn votes() {
        assert_eq!(majority_vote(&[2, 2, 3, 2, 2]), Some(2));
        assert_eq!(majority_vote(&[3, 2, 3, 2]), Some(2));
        assert_eq!(majority_vote(&[]), None);
    }

    #[test]
    fn padding() {
        let one = MixtureSpec::single(Component::Poisson { lambda: 3.0 }).unwrap();
        let two = MixtureSpec::new(
            vec![0.4, 0.6],
            vec![Component::Poisson { lambda: 1.0 }, Component::Poisson { lambda: 5.0 }],
        )
        .unwrap();
        let (a, b) = dimension_match(&one, &two);
        assert_eq!(a, vec![1.0, 3.0, 0.0, 0.0]);
        assert_eq!(b, vec![0.4, 1.0, 0.6, 5.0]);
        let (c, d) = dimension_match(&two, &one);
        assert_eq!((c.clone(), d), (b, a));
        let (e, f) = dimension_match(&two, &two);
        assert_eq!(e, f);
    }

    #[test]
    fn k_max_one_is_trivial() {
        let data: Vec<f64> = (0..40).map(|i| (i % 7) as f64).collect();
        let cfg = SelectionConfig { k_max: 1, splits: 2, ..Default::default() };
        let r = split_select_estimate(&data, Family::Poisson, &cfg).unwrap();
        assert_eq!(r.k_hat, 1);
        assert_eq!(r.per_split_k, vec![1, 1]);
        assert_eq!(r.gdic_table.len(), 2);
    }

    #[test]
    fn splits_are_disjoint_halves() {
        let (a, b) = split_indices(11, 0.5, 4);
        assert_eq!(a.len() + b.len(), 11);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
    }
}
