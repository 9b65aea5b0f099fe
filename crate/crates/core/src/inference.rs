//! Fisher information, sandwich covariance, deviance statistics and Monte
//! Carlo checks of the finite-step normal approximation.
//!
//! Derivatives are central differences on the free parameterization: additive
//! log-ratios `ln(pi_k / pi_K)` for the weights, logs of positive parameters,
//! and location parameters as they are.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{empirical_pmf, DensityEstimate};
use crate::divergence::Divergence;
use crate::dm::{divergence_d, fit_target, to_counts, FitConfig, Init, Target};
use crate::error::{Error, Result};
use crate::mixtures::{Component, Family, MixtureSpec};

const REL_STEP: f64 = 1e-5;
const BOUNDARY_WEIGHT: f64 = 1e-8;

/// Free coordinates of a mixture.
pub fn to_free(theta: &MixtureSpec) -> Vec<f64> {
    let w = theta.weights();
    let k = theta.k();
    let mut x: Vec<f64> = w[..k - 1].iter().map(|p| (p / w[k - 1]).ln()).collect();
    for c in theta.components() {
        match *c {
            Component::Poisson { lambda } => x.push(lambda.ln()),
            Component::PoissonGamma { alpha, beta } => {
                x.push(alpha.ln());
                x.push(beta.ln());
            }
            Component::PoissonLognormal { mu, sigma2 } | Component::Normal { mu, sigma2 } => {
                x.push(mu);
                x.push(sigma2.ln());
            }
        }
    }
    x
}

/// Inverse of [`to_free`].
pub fn from_free(family: Family, k: usize, x: &[f64]) -> Result<MixtureSpec> {
    let d = family.component_dim();
    if x.len() != param_count(k, family) {
        return Err(Error::Parameter(format!(
            "expected {} free coordinates, got {}",
            param_count(k, family),
            x.len()
        )));
    }
    let mut lw: Vec<f64> = x[..k - 1].to_vec();
    lw.push(0.0);
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = lw.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let weights: Vec<f64> = e.iter().map(|v| v / s).collect();
    let mut comps = Vec::with_capacity(k);
    for j in 0..k {
        let z = &x[k - 1 + j * d..k - 1 + (j + 1) * d];
        let p = match family {
            Family::Poisson => vec![z[0].exp()],
            Family::PoissonGamma => vec![z[0].exp(), z[1].exp()],
            Family::PoissonLognormal | Family::Normal => vec![z[0], z[1].exp()],
        };
        comps.push(Component::from_params(family, &p)?);
    }
    MixtureSpec::new(weights, comps)
}

/// `(K - 1) + K d_phi`.
pub fn param_count(k: usize, family: Family) -> usize {
    k - 1 + k * family.component_dim()
}

/// Names of the free coordinates, e.g. `alr1`, `ln_lambda2`.
pub fn free_names(k: usize, family: Family) -> Vec<String> {
    let mut v: Vec<String> = (1..k).map(|j| format!("alr{j}")).collect();
    for j in 1..=k {
        match family {
            Family::Poisson => v.push(format!("ln_lambda{j}")),
            Family::PoissonGamma => {
                v.push(format!("ln_alpha{j}"));
                v.push(format!("ln_beta{j}"));
            }
            Family::PoissonLognormal | Family::Normal => {
                v.push(format!("mu{j}"));
                v.push(format!("ln_sigma2_{j}"));
            }
        }
    }
    v
}

fn steps(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| REL_STEP * v.abs().max(1.0)).collect()
}

fn check_interior(theta: &MixtureSpec) -> Result<()> {
    if let Some(p) = theta.weights().iter().find(|&&p| p <= BOUNDARY_WEIGHT) {
        return Err(Error::Boundary(format!("mixing weight {p} is on the boundary")));
    }
    Ok(())
}

/// Nodes and quadrature weights covering the model's support: the integer
/// window for counts, a fine trapezoid grid for the Normal family.
pub fn model_nodes(theta: &MixtureSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if theta.family().is_count() {
        let ymax = theta.support_window(1e-14)?;
        Ok(((0..=ymax).map(|y| y as f64).collect(), vec![1.0; ymax + 1]))
    } else {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in theta.components() {
            let s = c.variance().sqrt();
            lo = lo.min(c.mean() - 10.0 * s);
            hi = hi.max(c.mean() + 10.0 * s);
        }
        let m = 20_000;
        let h = (hi - lo) / m as f64;
        let mut w = vec![h; m + 1];
        w[0] *= 0.5;
        w[m] *= 0.5;
        Ok(((0..=m).map(|i| lo + h * i as f64).collect(), w))
    }
}

fn ln_f(theta: &MixtureSpec, points: &[f64]) -> Vec<f64> {
    points.iter().map(|&y| theta.ln_density(y).unwrap_or(f64::NEG_INFINITY)).collect()
}

/// Score vectors `u(y; θ)` at `points`, one row per point.
pub fn scores(theta: &MixtureSpec, points: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_interior(theta)?;
    let x = to_free(theta);
    let h = steps(&x);
    let (fam, k) = (theta.family(), theta.k());
    let mut out = vec![vec![0.0; x.len()]; points.len()];
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h[i];
        xm[i] -= h[i];
        let lp = ln_f(&from_free(fam, k, &xp)?, points);
        let lm = ln_f(&from_free(fam, k, &xm)?, points);
        for (row, (a, b)) in out.iter_mut().zip(lp.iter().zip(&lm)) {
            row[i] = if a.is_finite() && b.is_finite() { (a - b) / (2.0 * h[i]) } else { 0.0 };
        }
    }
    Ok(out)
}

/// `I(θ) = sum_y u u' f` over the model's support.
pub fn fisher(theta: &MixtureSpec) -> Result<DMatrix<f64>> {
    let (pts, wts) = model_nodes(theta)?;
    let u = scores(theta, &pts)?;
    let p = to_free(theta).len();
    let mut m = DMatrix::zeros(p, p);
    for ((row, &y), &q) in u.iter().zip(&pts).zip(&wts) {
        let f = theta.density(y)? * q;
        if f == 0.0 {
            continue;
        }
        let v = DVector::from_column_slice(row);
        m += &v * v.transpose() * f;
    }
    Ok(symmetrize(m))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `Ψ(θ) = ∇_θ D(g, f_θ)` by central differences of the objective.
pub fn psi_numeric(theta: &MixtureSpec, target: &Target, div: Divergence) -> Result<Vec<f64>> {
    let x = to_free(theta);
    let h = steps(&x);
    let (fam, k) = (theta.family(), theta.k());
    (0..x.len())
        .map(|i| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h[i];
            xm[i] -= h[i];
            let dp = divergence_d(&from_free(fam, k, &xp)?, target, div)?;
            let dm = divergence_d(&from_free(fam, k, &xm)?, target, div)?;
            Ok((dp - dm) / (2.0 * h[i]))
        })
        .collect()
}

/// `Ψ(θ) = -sum A(δ) u f` over the nodes, plus `-G(-1) sum u f` for the model
/// mass off the nodes, where the target is zero.
pub fn psi_analytic(theta: &MixtureSpec, target: &Target, div: Divergence) -> Result<Vec<f64>> {
    let u = scores(theta, target.points())?;
    let p = to_free(theta).len();
    let g_empty = div.g(-1.0);
    let mut out = vec![0.0; p];
    for (((row, &y), &q), &g) in u.iter().zip(target.points()).zip(target.weights()).zip(target.g()) {
        let f = theta.density(y)?;
        if f == 0.0 {
            continue;
        }
        let a = div.raf(g / f - 1.0) + if g_empty.is_finite() { g_empty } else { 0.0 };
        for (o, s) in out.iter_mut().zip(row) {
            *o -= a * s * f * q;
        }
    }
    Ok(out)
}

/// `H = ∇Ψ` by central differences of [`psi_analytic`], symmetrized.
pub fn hessian(theta: &MixtureSpec, target: &Target, div: Divergence) -> Result<DMatrix<f64>> {
    let x = to_free(theta);
    let p = x.len();
    let (fam, k) = (theta.family(), theta.k());
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let mut m = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h[j];
        xm[j] -= h[j];
        let a = psi_analytic(&from_free(fam, k, &xp)?, target, div)?;
        let b = psi_analytic(&from_free(fam, k, &xm)?, target, div)?;
        for i in 0..p {
            m[(i, j)] = (a[i] - b[i]) / (2.0 * h[j]);
        }
    }
    Ok(symmetrize(m))
}

/// `V = Var_g[A'(δ) u(Y)]` over the target.
pub fn score_variance(theta: &MixtureSpec, target: &Target, div: Divergence) -> Result<DMatrix<f64>> {
    let u = scores(theta, target.points())?;
    let p = to_free(theta).len();
    let mut mean = DVector::zeros(p);
    let mut second = DMatrix::zeros(p, p);
    let mut mass = 0.0;
    for (((row, &y), &q), &g) in u.iter().zip(target.points()).zip(target.weights()).zip(target.g()) {
        if g == 0.0 {
            continue;
        }
        let f = theta.density(y)?;
        let v = DVector::from_column_slice(row) * div.raf_prime(g / f - 1.0);
        mean += &v * (g * q);
        second += &v * v.transpose() * (g * q);
        mass += g * q;
    }
    mean /= mass;
    second /= mass;
    Ok(symmetrize(second - &mean * mean.transpose()))
}

/// Condition number (2-norm) of a square matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = condition_number(m);
    if !(cond < 1e12) {
        return Err(Error::Singular(cond));
    }
    m.clone().try_inverse().ok_or(Error::Singular(cond))
}

/// Godambe pieces at a stationary point of `D(g, f_θ)`.
#[derive(Debug, Clone)]
pub struct Sandwich {
    pub h: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// `H^{-1} V H^{-1}`.
    pub cov: DMatrix<f64>,
}

/// `H^{-1} V H^{-1}` at `theta`. Fails when the gradient of the objective is
/// larger than `grad_tol` in sup-norm, or when `H` is singular.
pub fn sandwich_cov(theta: &MixtureSpec, target: &Target, div: Divergence, grad_tol: f64) -> Result<Sandwich> {
    let psi = psi_analytic(theta, target, div)?;
    let gmax = psi.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if gmax > grad_tol {
        return Err(Error::NotStationary(gmax));
    }
    let h = hessian(theta, target, div)?;
    let v = score_variance(theta, target, div)?;
    let hi = inverse(&h)?;
    let cov = symmetrize(&hi * &v * &hi);
    Ok(Sandwich { h, v, cov })
}

/// Eigenvalues of `H^{-1/2} V H^{-1/2}`, ascending. All ones at the model with
/// a calibrated generator.
pub fn j_eigenvalues(s: &Sandwich) -> Result<Vec<f64>> {
    let e = SymmetricEigen::new(s.h.clone());
    if e.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::Singular(condition_number(&s.h)));
    }
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.sqrt().recip()));
    let root = &e.eigenvectors * d * e.eigenvectors.transpose();
    let j = symmetrize(&root * &s.v * &root);
    let mut ev: Vec<f64> = SymmetricEigen::new(j).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// `2n (D(θ_ref) - D(θ_hat))`.
pub fn wilks_stat(
    theta_ref: &MixtureSpec,
    theta_hat: &MixtureSpec,
    target: &Target,
    div: Divergence,
    n: usize,
) -> Result<f64> {
    let a = divergence_d(theta_ref, target, div)?;
    let b = divergence_d(theta_hat, target, div)?;
    Ok(2.0 * n as f64 * (a - b))
}

/// Everything reported for one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub theta_hat: MixtureSpec,
    pub coordinates: Vec<String>,
    pub fisher: Vec<Vec<f64>>,
    pub sandwich: Vec<Vec<f64>>,
    pub j_eigenvalues: Vec<f64>,
    pub wilks_stat: Option<f64>,
    pub mc_summary: Option<McSummary>,
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Fisher, sandwich and (if `theta_ref` is given) the deviance statistic for
/// `theta_hat` against the target. `n` is the sample size behind the target.
pub fn report(
    theta_hat: &MixtureSpec,
    target: &Target,
    div: Divergence,
    theta_ref: Option<&MixtureSpec>,
    n: usize,
    grad_tol: f64,
) -> Result<InferenceReport> {
    let fi = fisher(theta_hat)?;
    let s = sandwich_cov(theta_hat, target, div, grad_tol)?;
    let wilks = match theta_ref {
        Some(r) => Some(wilks_stat(r, theta_hat, target, div, n)?),
        None => None,
    };
    Ok(InferenceReport {
        theta_hat: theta_hat.clone(),
        coordinates: free_names(theta_hat.k(), theta_hat.family()),
        fisher: to_rows(&fi),
        sandwich: to_rows(&s.cov),
        j_eigenvalues: j_eigenvalues(&s)?,
        wilks_stat: wilks,
        mc_summary: None,
    })
}

/// Monte Carlo summary of standardized finite-step estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub n: usize,
    pub reps: usize,
    pub iterations: usize,
    pub coordinates: Vec<String>,
    /// Per coordinate mean of `z = I(θ*)^{1/2} sqrt(n) (θ_hat - θ*)`.
    pub mean: Vec<f64>,
    /// Per coordinate sample variance of `z`.
    pub variance: Vec<f64>,
    /// Per coordinate coverage of the 95% Wald interval built from `I(θ_hat)`.
    pub coverage: Vec<f64>,
    /// Sample mean of the deviance statistic against the truth.
    pub wilks_mean: f64,
    /// Rows of `z`, one per replication that produced an estimate.
    pub standardized: Vec<Vec<f64>>,
    pub failures: usize,
}

/// Harness settings for [`clt_harness`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltConfig {
    pub n: usize,
    pub reps: usize,
    /// `m_n = ceil(c log10 n)`.
    pub iteration_constant: f64,
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for CltConfig {
    fn default() -> Self {
        CltConfig {
            n: 2000,
            reps: 200,
            iteration_constant: 6.0,
            seed: 0,
            fit: FitConfig::new(Divergence::Kl),
        }
    }
}

/// `ceil(c log10 n)`.
pub fn finite_steps(n: usize, c: f64) -> usize {
    (c * (n as f64).log10()).ceil().max(1.0) as usize
}

/// Scaled error, per-coordinate coverage hits and the Wilks statistic.
type Replicate = (Vec<f64>, Vec<bool>, f64);

/// Runs `m_n` DM sweeps (no early stop) from k-means on each of `reps`
/// samples of size `n` from `truth`, then standardizes the estimates. Labels
/// are matched to the truth by ordering components by mean.
pub fn clt_harness(truth: &MixtureSpec, cfg: &CltConfig) -> Result<McSummary> {
    if cfg.reps < 2 {
        return Err(Error::Parameter("the harness needs at least two replications".into()));
    }
    if !truth.family().is_count() {
        return Err(Error::Unsupported("the finite-step harness uses count families".into()));
    }
    let truth = truth.order_by_mean();
    let (k, fam) = (truth.k(), truth.family());
    let m_n = finite_steps(cfg.n, cfg.iteration_constant);
    let mut fit_cfg = cfg.fit.clone();
    fit_cfg.max_iters = m_n;
    fit_cfg.tol = f64::MIN_POSITIVE;
    fit_cfg.theta_tol = 0.0;
    fit_cfg.init = Init::Kmeans;
    let x_star = DVector::from_vec(to_free(&truth));
    let fi = fisher(&truth)?;
    let e = SymmetricEigen::new(fi);
    let root = &e.eigenvectors
        * DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()))
        * e.eigenvectors.transpose();
    let rt_n = (cfg.n as f64).sqrt();
    let div = fit_cfg.divergence;
    let rows: Vec<Option<Replicate>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let data = truth.sample(cfg.n, &mut rng);
            let one = || -> Result<Replicate> {
                let est = empirical_pmf(&to_counts(&data)?)?;
                let mut c = fit_cfg.clone();
                c.seed = r as u64;
                let theta0 = crate::dm::initial_theta(&est, fam, k, &c)?;
                let target = Target::new(&est, fam, Some(&truth), c.tail_mass)?;
                let fitres = fit_target(&target, theta0, &c)?;
                let hat = fitres.theta_hat.order_by_mean();
                let x = DVector::from_vec(to_free(&hat));
                let z = &root * (&x - &x_star) * rt_n;
                let cov = inverse(&fisher(&hat)?)?;
                let cover = (0..x.len())
                    .map(|i| (x[i] - x_star[i]).abs() <= 1.959_963_984_540_054 * (cov[(i, i)] / cfg.n as f64).sqrt())
                    .collect();
                let w = wilks_stat(&truth, &hat, &target, div, cfg.n)?;
                Ok((z.iter().copied().collect(), cover, w))
            };
            one().ok()
        })
        .collect();
    let ok: Vec<&(Vec<f64>, Vec<bool>, f64)> = rows.iter().flatten().collect();
    let failures = rows.len() - ok.len();
    if ok.len() < 2 {
        return Err(Error::Fit("fewer than two replications produced estimates".into()));
    }
    let p = x_star.len();
    let cnt = ok.len() as f64;
    let mean: Vec<f64> = (0..p).map(|i| ok.iter().map(|r| r.0[i]).sum::<f64>() / cnt).collect();
    let variance = (0..p)
        .map(|i| ok.iter().map(|r| (r.0[i] - mean[i]).powi(2)).sum::<f64>() / (cnt - 1.0))
        .collect();
    let coverage = (0..p).map(|i| ok.iter().filter(|r| r.1[i]).count() as f64 / cnt).collect();
    Ok(McSummary {
        n: cfg.n,
        reps: cfg.reps,
        iterations: m_n,
        coordinates: free_names(k, fam),
        mean,
        variance,
        coverage,
        wilks_mean: ok.iter().map(|r| r.2).sum::<f64>() / cnt,
        standardized: ok.iter().map(|r| r.0.clone()).collect(),
        failures,
    })
}

/// Population target: the model pmf itself on a wide window.
pub fn model_target(theta: &MixtureSpec) -> Result<Target> {
    let est = DensityEstimate::from_model(theta, 1e-15)?;
    Target::new(&est, theta.family(), Some(theta), 1e-15)
}
