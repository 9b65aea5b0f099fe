//! Contamination experiments: bias curves, empirical influence and a finite
//! breakdown probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::DensityEstimate;
use crate::dm::{default_estimate, fit_best_of, fit_target, starting_values, FitConfig, Target};
use crate::error::{Error, Result};
use crate::inference::{free_names, to_free};
use crate::mixtures::{Family, MixtureSpec};

/// How contaminated entries are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mechanism {
    /// Each entry independently replaced by `value` with probability ε.
    PointMass { value: f64 },
    /// Exactly `round(ε n)` entries, chosen at random, replaced by `value`.
    ReplaceFraction { value: f64 },
    /// Each entry independently replaced by a draw from `model` with probability ε.
    Density { model: MixtureSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationSpec {
    pub epsilon: f64,
    pub mechanism: Mechanism,
    pub seed: u64,
}

impl ContaminationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Parameter(format!("epsilon must lie in [0, 1), got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Contaminated copy of `data` and the flags of replaced entries.
///
/// For the Bernoulli mechanisms every entry gets one uniform draw from the
/// seed and is flagged when it falls below ε, so for a fixed seed the flagged
/// sets are nested in ε.
pub fn contaminate_flagged(data: &[f64], spec: &ContaminationSpec) -> Result<(Vec<f64>, Vec<bool>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = data.len();
    let flags: Vec<bool> = match spec.mechanism {
        Mechanism::ReplaceFraction { .. } => {
            let m = ((spec.epsilon * n as f64).round() as usize).min(n);
            let mut f = vec![false; n];
            for i in sample_indices(&mut rng, n, m) {
                f[i] = true;
            }
            f
        }
        _ => (0..n).map(|_| rng.random::<f64>() < spec.epsilon).collect(),
    };
    let mut out = data.to_vec();
    for (o, &f) in out.iter_mut().zip(&flags) {
        if f {
            *o = match &spec.mechanism {
                Mechanism::PointMass { value } | Mechanism::ReplaceFraction { value } => *value,
                Mechanism::Density { model } => model.sample(1, &mut rng)[0],
            };
        }
    }
    Ok((out, flags))
}

pub fn contaminate(data: &[f64], spec: &ContaminationSpec) -> Result<Vec<f64>> {
    Ok(contaminate_flagged(data, spec)?.0)
}

/// A named fitting method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Method {
    pub name: String,
    pub fit: FitConfig,
}

impl Method {
    pub fn new(name: &str, fit: FitConfig) -> Self {
        Method { name: name.to_string(), fit }
    }
}

/// Names of the natural parameters in canonical order, e.g. `pi1`, `alpha2`.
pub fn param_names(k: usize, family: Family) -> Vec<String> {
    let mut v: Vec<String> = (1..=k).map(|j| format!("pi{j}")).collect();
    let comp: &[&str] = match family {
        Family::Poisson => &["lambda"],
        Family::PoissonGamma => &["alpha", "beta"],
        Family::PoissonLognormal | Family::Normal => &["mu", "sigma2"],
    };
    for j in 1..=k {
        for c in comp {
            v.push(format!("{c}{j}"));
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasConfig {
    pub eps_grid: Vec<f64>,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Contaminating value (Bernoulli point-mass mechanism).
    pub value: f64,
    /// k-means restarts per fit, in addition to the trimmed start.
    pub restarts: usize,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            eps_grid: vec![0.0, 0.05, 0.10, 0.15, 0.20, 0.30],
            n: 2000,
            reps: 200,
            seed: 0,
            value: 50.0,
            restarts: 1,
        }
    }
}

/// One row of a bias table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub method: String,
    pub epsilon: f64,
    pub parameter: String,
    pub truth: f64,
    #[serde(with = "crate::io::float_or_string")]
    pub mean: f64,
    #[serde(with = "crate::io::float_or_string")]
    pub sd: f64,
    pub n_converged: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    pub rows: Vec<BiasRow>,
    /// Canonical estimates per (method, ε index, rep); `None` for failed or
    /// non-converged fits.
    pub estimates: Vec<Vec<Vec<Option<Vec<f64>>>>>,
}

impl BiasTable {
    pub fn get(&self, method: &str, epsilon: f64, parameter: &str) -> Option<&BiasRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.epsilon == epsilon && r.parameter == parameter)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,epsilon,parameter,truth,mean,sd,n_converged,n_failed\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.method, r.epsilon, r.parameter, r.truth, r.mean, r.sd, r.n_converged, r.n_failed
            ));
        }
        s
    }
}

fn rep_seed(seed: u64, rep: usize) -> u64 {
    seed ^ (rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Monte Carlo bias curve. Each replication draws one clean sample and
/// contaminates it along the ε grid with nested flags. A fit tries k-means,
/// trimmed k-means and, for ε > 0, the same method's estimate at the
/// previous ε, and keeps the one with the smallest objective.
pub fn bias_curve(truth: &MixtureSpec, methods: &[Method], cfg: &BiasConfig) -> Result<BiasTable> {
    if cfg.eps_grid.is_empty() || methods.is_empty() || cfg.reps == 0 || cfg.n == 0 {
        return Err(Error::Parameter("bias curve needs methods, an ε grid, reps and n".into()));
    }
    for &e in &cfg.eps_grid {
        ContaminationSpec { epsilon: e, mechanism: Mechanism::PointMass { value: cfg.value }, seed: 0 }
            .validate()?;
    }
    let family = truth.family();
    let k = truth.k();
    let canon_truth = truth.canonicalize();
    // per rep: [method][eps] -> estimate
    let per_rep: Vec<Vec<Vec<Option<Vec<f64>>>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(rep_seed(cfg.seed, r));
            let clean = truth.sample(cfg.n, &mut rng);
            let cseed = rng.random::<u64>();
            let datasets: Vec<Vec<f64>> = cfg
                .eps_grid
                .iter()
                .map(|&e| {
                    let spec = ContaminationSpec {
                        epsilon: e,
                        mechanism: Mechanism::PointMass { value: cfg.value },
                        seed: cseed,
                    };
                    contaminate(&clean, &spec).expect("validated")
                })
                .collect();
            methods
                .iter()
                .map(|m| {
                    let mut prev: Option<MixtureSpec> = None;
                    datasets
                        .iter()
                        .map(|d| {
                            let mut fc = m.fit.clone();
                            fc.seed = r as u64;
                            let res = default_estimate(d, family).and_then(|est| {
                                let mut starts = starting_values(&est, family, k, &fc, cfg.restarts)?;
                                if let Some(p) = &prev {
                                    starts.push(p.clone());
                                }
                                fit_best_of(&est, family, &starts, &fc)
                            });
                            match res {
                                Ok(f) => {
                                    prev = Some(f.theta_hat.clone());
                                    f.converged.then(|| f.theta_hat.to_vector())
                                }
                                Err(_) => None,
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let names = param_names(k, family);
    let tv = canon_truth.to_vector();
    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    for (mi, m) in methods.iter().enumerate() {
        let mut by_eps = Vec::new();
        for (ei, &e) in cfg.eps_grid.iter().enumerate() {
            let ests: Vec<Option<Vec<f64>>> = per_rep.iter().map(|r| r[mi][ei].clone()).collect();
            let ok: Vec<&Vec<f64>> = ests.iter().flatten().collect();
            let c = ok.len();
            for (pi, name) in names.iter().enumerate() {
                let mean = ok.iter().map(|v| v[pi]).sum::<f64>() / c as f64;
                let sd = if c > 1 {
                    (ok.iter().map(|v| (v[pi] - mean).powi(2)).sum::<f64>() / (c - 1) as f64).sqrt()
                } else {
                    f64::NAN
                };
                rows.push(BiasRow {
                    method: m.name.clone(),
                    epsilon: e,
                    parameter: name.clone(),
                    truth: tv[pi],
                    mean,
                    sd,
                    n_converged: c,
                    n_failed: cfg.reps - c,
                });
            }
            by_eps.push(ests);
        }
        estimates.push(by_eps);
    }
    Ok(BiasTable { rows, estimates })
}

/// Count target for the model pmf mixed with a point mass:
/// `(1 - ε) f(·; θ*) + ε δ_{y0}`.
pub fn contaminated_model(theta: &MixtureSpec, y0: usize, eps: f64, tail_mass: f64) -> Result<DensityEstimate> {
    if !theta.family().is_count() {
        return Err(Error::Unsupported("population contamination is defined for count families".into()));
    }
    let ymax = theta.support_window(tail_mass)?.max(y0);
    let mut mass: Vec<f64> = theta.pmf_window(ymax).iter().map(|p| (1.0 - eps) * p).collect();
    mass[y0] += eps;
    DensityEstimate::from_masses(0, mass)
}

fn population_fit(est: &DensityEstimate, theta: &MixtureSpec, starts: Vec<MixtureSpec>, fit: &FitConfig) -> Result<MixtureSpec> {
    let mut fc = fit.clone();
    fc.tol = 1e-15;
    fc.theta_tol = 1e-13;
    fc.max_iters = fc.max_iters.max(5000);
    let mut best: Option<(f64, MixtureSpec)> = None;
    for s in starts {
        let t = Target::new(est, theta.family(), Some(&s), fc.tail_mass)?;
        let r = fit_target(&t, s, &fc)?;
        if best.as_ref().is_none_or(|b| r.final_objective() < b.0) {
            best = Some((r.final_objective(), r.theta_hat));
        }
    }
    best.map(|b| b.1).ok_or_else(|| Error::Fit("no starting values".into()))
}

/// `(T(g_ε) - T(g)) / ε` in the free coordinates, where `g` is the model pmf
/// and `g_ε` mixes in a point mass at `y0`. Both fits start at `theta`, and
/// the contaminated fit also tries the trimmed k-means start.
pub fn empirical_influence(theta: &MixtureSpec, fit: &FitConfig, y0: usize, eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps <= 0.05) {
        return Err(Error::Parameter(format!("eps must lie in (0, 0.05], got {eps}")));
    }
    let theta = theta.canonicalize();
    let clean = contaminated_model(&theta, y0, 0.0, 1e-15)?;
    let dirty = contaminated_model(&theta, y0, eps, 1e-15)?;
    let t0 = population_fit(&clean, &theta, vec![theta.clone()], fit)?;
    let t1 = population_fit(&dirty, &theta, vec![theta.clone()], fit)?;
    let (a, b) = (to_free(&t0), to_free(&align(&t1, &t0)));
    Ok(a.iter().zip(&b).map(|(x, y)| (y - x) / eps).collect())
}

/// Relabels `m` to match `reference` by nearest component means.
fn align(m: &MixtureSpec, reference: &MixtureSpec) -> MixtureSpec {
    let k = m.k();
    let perms = permutations(k);
    let cost = |p: &Vec<usize>| -> f64 {
        p.iter()
            .enumerate()
            .map(|(i, &j)| (m.components()[j].mean() - reference.components()[i].mean()).abs())
            .sum()
    };
    let best = perms.into_iter().min_by(|a, b| cost(a).total_cmp(&cost(b))).unwrap_or_default();
    MixtureSpec::new(
        best.iter().map(|&j| m.weights()[j]).collect(),
        best.iter().map(|&j| m.components()[j]).collect(),
    )
    .unwrap_or_else(|_| m.clone())
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, k - 1);
            out.push(q);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BreakdownConfig {
    pub values: Vec<usize>,
    pub eps_grid: Vec<f64>,
    /// Distance beyond which an estimate counts as broken down. `None` uses
    /// 10 times the largest interquartile spread of clean-fit estimates
    /// (free coordinates) over `clean_reps` samples of size `clean_n`.
    pub threshold: Option<f64>,
    pub clean_n: usize,
    pub clean_reps: usize,
    pub seed: u64,
}

impl Default for BreakdownConfig {
    fn default() -> Self {
        BreakdownConfig {
            values: vec![50, 1000, 10000],
            eps_grid: vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.45],
            threshold: None,
            clean_n: 500,
            clean_reps: 40,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub method: String,
    pub value: usize,
    pub epsilon: f64,
    pub distance: f64,
    pub broken: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownReport {
    pub threshold: f64,
    pub rows: Vec<BreakdownRow>,
    /// Per (method, value): the smallest ε on the grid whose distance
    /// exceeds the threshold, if any.
    pub blow_up: Vec<(String, usize, Option<f64>)>,
}

impl BreakdownReport {
    pub fn blow_up_eps(&self, method: &str, value: usize) -> Option<f64> {
        self.blow_up.iter().find(|b| b.0 == method && b.1 == value).and_then(|b| b.2)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,value,epsilon,distance,broken\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.method, r.value, r.epsilon, r.distance, r.broken));
        }
        s
    }
}

fn distance(a: &MixtureSpec, b: &MixtureSpec) -> f64 {
    let (x, y) = (to_free(&align(a, b)), to_free(b));
    x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

fn clean_threshold(truth: &MixtureSpec, methods: &[Method], cfg: &BreakdownConfig) -> Result<f64> {
    let fam = truth.family();
    let k = truth.k();
    let mut spread: f64 = 0.0;
    for m in methods {
        let ests: Vec<Vec<f64>> = (0..cfg.clean_reps)
            .into_par_iter()
            .filter_map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(rep_seed(cfg.seed, r));
                let d = truth.sample(cfg.clean_n, &mut rng);
                let est = default_estimate(&d, fam).ok()?;
                let mut starts = starting_values(&est, fam, k, &m.fit, 1).ok()?;
                starts.push(truth.clone());
                let f = fit_best_of(&est, fam, &starts, &m.fit).ok()?;
                Some(to_free(&align(&f.theta_hat, truth)))
            })
            .collect();
        if ests.len() < 4 {
            return Err(Error::Fit("too few clean fits to set a threshold".into()));
        }
        for i in 0..ests[0].len() {
            let mut v: Vec<f64> = ests.iter().map(|e| e[i]).collect();
            v.sort_by(f64::total_cmp);
            let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
            spread = spread.max(q(0.75) - q(0.25));
        }
    }
    Ok(10.0 * spread)
}

/// Population-level probe: for each contaminating value and ε, the fit to
/// `(1 - ε) f(·; θ*) + ε δ_value` and its distance from `θ*` in free
/// coordinates. A finite-grid heuristic for the breakdown point, not a
/// certificate. Starts: the truth, trimmed k-means, and the previous ε's
/// estimate; the smallest objective wins.
pub fn breakdown_probe(truth: &MixtureSpec, methods: &[Method], cfg: &BreakdownConfig) -> Result<BreakdownReport> {
    if cfg.values.is_empty() || cfg.eps_grid.is_empty() || methods.is_empty() {
        return Err(Error::Parameter("breakdown probe needs values, an ε grid and methods".into()));
    }
    let truth = truth.canonicalize();
    let threshold = match cfg.threshold {
        Some(t) => t,
        None => clean_threshold(&truth, methods, cfg)?,
    };
    let cells: Vec<(usize, usize)> =
        (0..methods.len()).flat_map(|m| cfg.values.iter().map(move |&v| (m, v))).collect();
    let results: Vec<Result<Vec<BreakdownRow>>> = cells
        .par_iter()
        .map(|&(mi, value)| {
            let m = &methods[mi];
            let mut prev: Option<MixtureSpec> = None;
            let mut rows = Vec::new();
            for &e in &cfg.eps_grid {
                let est = contaminated_model(&truth, value, e, 1e-14)?;
                let mut starts = vec![truth.clone()];
                if let DensityEstimate::DiscretePmf { mass, .. } = &est {
                    let pts: Vec<f64> = (0..mass.len()).map(|y| y as f64).collect();
                    starts.push(crate::kmeans::trimmed_kmeans_init_weighted(
                        &pts,
                        mass,
                        truth.family(),
                        truth.k(),
                        cfg.seed,
                    )?);
                    starts.push(crate::kmeans::kmeans_init_weighted(&pts, mass, truth.family(), truth.k(), cfg.seed)?);
                }
                if let Some(p) = prev.take() {
                    starts.push(p);
                }
                let hat = population_fit(&est, &truth, starts, &m.fit)?;
                let d = distance(&hat, &truth);
                rows.push(BreakdownRow {
                    method: m.name.clone(),
                    value,
                    epsilon: e,
                    distance: d,
                    broken: !(d <= threshold),
                });
                prev = Some(hat);
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    let mut blow_up = Vec::new();
    for (r, &(mi, value)) in results.into_iter().zip(&cells) {
        let r = r?;
        let first = r.iter().find(|x| x.broken).map(|x| x.epsilon);
        blow_up.push((methods[mi].name.clone(), value, first));
        rows.extend(r);
    }
    Ok(BreakdownReport { threshold, rows, blow_up })
}

/// Names of the free coordinates used by [`empirical_influence`].
pub fn influence_names(theta: &MixtureSpec) -> Vec<String> {
    free_names(theta.k(), theta.family())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::Divergence;
    use crate::mixtures::Component;

    #[test]
    fn zero_epsilon_is_identity() {
        let d: Vec<f64> = (0..100).map(|i| i as f64).collect();
        for mech in [Mechanism::PointMass { value: 50.0 }, Mechanism::ReplaceFraction { value: 50.0 }] {
            let out = contaminate(&d, &ContaminationSpec { epsilon: 0.0, mechanism: mech, seed: 3 }).unwrap();
            assert_eq!(out, d);
        }
    }

    #[test]
    fn replace_fraction_is_exact() {
        let d = vec![1.0; 1000];
        let spec = ContaminationSpec { epsilon: 0.1, mechanism: Mechanism::ReplaceFraction { value: 50.0 }, seed: 1 };
        let out = contaminate(&d, &spec).unwrap();
        assert_eq!(out.iter().filter(|&&v| v == 50.0).count(), 100);
    }

    #[test]
    fn flags_are_nested_in_epsilon() {
        let d = vec![1.0; 500];
        let f = |e| {
            contaminate_flagged(&d, &ContaminationSpec { epsilon: e, mechanism: Mechanism::PointMass { value: 9.0 }, seed: 7 })
                .unwrap()
                .1
        };
        let (a, b) = (f(0.1), f(0.3));
        assert!(a.iter().zip(&b).all(|(x, y)| !x || *y));
    }

    #[test]
    fn bad_epsilon_rejected() {
        let spec = ContaminationSpec { epsilon: 1.0, mechanism: Mechanism::PointMass { value: 1.0 }, seed: 0 };
        assert!(contaminate(&[1.0], &spec).is_err());
    }

    #[test]
    fn density_mechanism_draws_from_model() {
        let model = MixtureSpec::single(Component::Poisson { lambda: 1000.0 }).unwrap();
        let spec = ContaminationSpec { epsilon: 0.5, mechanism: Mechanism::Density { model }, seed: 2 };
        let (out, flags) = contaminate_flagged(&vec![0.0; 400], &spec).unwrap();
        for (v, f) in out.iter().zip(flags) {
            assert_eq!(f, *v > 500.0);
        }
    }

    #[test]
    fn influence_of_the_mean() {
        // KL on a Poisson model: T is the mean, so the IF in log-rate is (y0 - λ)/λ
        let theta = MixtureSpec::single(Component::Poisson { lambda: 5.0 }).unwrap();
        let v = empirical_influence(&theta, &FitConfig::new(Divergence::Kl), 9, 1e-3).unwrap();
        let exact = ((5.0 * 0.999 + 9.0 * 0.001f64) / 5.0).ln() / 1e-3;
        assert!((v[0] - exact).abs() < 1e-6, "{v:?} vs {exact}");
    }

    #[test]
    fn names_match_vector() {
        let m = MixtureSpec::new(
            vec![0.5, 0.5],
            vec![Component::PoissonGamma { alpha: 1.0, beta: 1.0 }, Component::PoissonGamma { alpha: 3.0, beta: 1.0 }],
        )
        .unwrap();
        assert_eq!(param_names(2, Family::PoissonGamma).len(), m.to_vector().len());
        assert_eq!(param_names(2, Family::PoissonGamma)[3], "beta1");
    }
}
