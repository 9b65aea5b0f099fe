//! The DM iteration: surrogate, component M-step, mixing-weight update and
//! convergence control.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::density::{continuous_kde, empirical_pmf, epanechnikov_bandwidth, DensityEstimate};
use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans_init_weighted, trimmed_kmeans_init_weighted};
use crate::mixtures::{log_sum_exp, Component, Family, MixtureSpec, DEFAULT_TAIL_MASS};
use crate::optim::{grid_golden, nelder_mead, OptimizerConfig};

/// How the mixing weights are updated after the component step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiUpdate {
    /// `Phi_k = -pi_k sum h'_k B(tau_k)`, normalized.
    GenericPhi,
    /// As `GenericPhi` with `G` shifted by the linear term that makes `A(-1) = 0`,
    /// so every `Phi_k` is nonnegative.
    AnchoredPhi,
    /// `pi_k ∝ (sum sqrt(g w_k h'_k))^2`.
    HmixSquared,
    /// `pi_k ∝ sqrt(pi_k) * sum sqrt(g w_k h'_k)`.
    HmixDmmix,
    /// `pi_k ∝ sum exp(-pi_k h'_k / (g w_k)) pi_k h'_k`.
    VnedWeighted,
    /// `pi_k = sum g w_k`.
    ClosedFormEm,
    /// vNED weights with the closed-form Poisson component step.
    Nelmix,
}

impl PiUpdate {
    /// Default update for a generator.
    pub fn default_for(div: Divergence) -> PiUpdate {
        match div {
            Divergence::Kl => PiUpdate::ClosedFormEm,
            Divergence::Hellinger => PiUpdate::HmixSquared,
            Divergence::Vned => PiUpdate::VnedWeighted,
            d if d.raf_at_empty().is_finite() => PiUpdate::AnchoredPhi,
            _ => PiUpdate::GenericPhi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Closed forms where they exist, golden-section for one parameter,
    /// Nelder-Mead for two.
    #[default]
    Auto,
    GoldenSection,
    NelderMead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Init {
    #[default]
    Kmeans,
    User { theta0: MixtureSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub divergence: Divergence,
    pub max_iters: usize,
    /// Threshold on `|Q(θ_{m+1}|θ_{m+1}) - Q(θ_m|θ_m)|`.
    pub tol: f64,
    /// Also stop when the sup-norm parameter change falls below this.
    pub theta_tol: f64,
    pub optimizer: OptimizerKind,
    pub optimizer_settings: OptimizerConfig,
    /// `None` picks [`PiUpdate::default_for`] the divergence.
    pub pi_update: Option<PiUpdate>,
    pub init: Init,
    pub seed: u64,
    /// Tail mass left outside the count support window.
    pub tail_mass: f64,
    /// Backtrack the weight update toward the current weights when it would
    /// increase the surrogate.
    pub safeguard: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            divergence: Divergence::Kl,
            max_iters: 500,
            tol: 1e-8,
            theta_tol: 1e-10,
            optimizer: OptimizerKind::Auto,
            optimizer_settings: OptimizerConfig::default(),
            pi_update: None,
            init: Init::Kmeans,
            seed: 0,
            tail_mass: DEFAULT_TAIL_MASS,
            safeguard: true,
        }
    }
}

impl FitConfig {
    pub fn new(divergence: Divergence) -> Self {
        FitConfig { divergence, ..Default::default() }
    }

    pub fn pi_mode(&self) -> PiUpdate {
        self.pi_update.unwrap_or_else(|| PiUpdate::default_for(self.divergence))
    }

    pub fn validate(&self, family: Family) -> Result<()> {
        self.divergence.validate()?;
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Parameter("tol must be positive".into()));
        }
        if !(self.tail_mass > 0.0 && self.tail_mass < 1.0) {
            return Err(Error::Parameter("tail_mass must lie in (0, 1)".into()));
        }
        if self.optimizer == OptimizerKind::GoldenSection && family.component_dim() != 1 {
            return Err(Error::Unsupported(format!(
                "golden-section search for the two-parameter {family} family"
            )));
        }
        if self.pi_mode() == PiUpdate::Nelmix
            && (self.divergence != Divergence::Vned || family != Family::Poisson)
        {
            return Err(Error::Unsupported(
                "nelmix requires the vned generator and the Poisson family".into(),
            ));
        }
        if let Init::User { theta0 } = &self.init {
            if theta0.family() != family {
                return Err(Error::Parameter(format!(
                    "initial value is {} but the fit family is {family}",
                    theta0.family()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: MixtureSpec,
    pub family: Family,
    pub divergence: Divergence,
    pub pi_update: PiUpdate,
    /// `D_n(θ_m)` for `m = 0..=iters`.
    pub objective_trace: Vec<f64>,
    /// `Q_n(θ_m|θ_m)` for `m = 0..=iters`.
    pub q_trace: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    pub descent_violations: usize,
    /// Weight updates rejected as degenerate (old weights kept).
    pub pi_degenerate: usize,
    /// Component steps where the optimizer did not improve on the current value.
    pub m_step_fallbacks: usize,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial value")
    }
}

/// Evaluation nodes and target masses: the integer window `0..=ymax` for
/// count families or a uniform trapezoid grid for the Normal family.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    family: Family,
    points: Vec<f64>,
    wt: Vec<f64>,
    g: Vec<f64>,
    count_window: bool,
    grid_step: f64,
}

impl Target {
    /// Builds the evaluation target for `family` from a density estimate.
    /// `reference` widens count windows to cover that model's support.
    pub fn new(
        est: &DensityEstimate,
        family: Family,
        reference: Option<&MixtureSpec>,
        tail_mass: f64,
    ) -> Result<Target> {
        match (est, family.is_count()) {
            (DensityEstimate::DiscretePmf { start, mass }, true) => {
                if *start < 0 {
                    return Err(Error::SupportMismatch(
                        "count family needs a nonnegative support".into(),
                    ));
                }
                let hi = *start as usize + mass.len() - 1;
                let mut ymax = hi;
                if let Some(r) = reference {
                    if r.family() != family {
                        return Err(Error::SupportMismatch("reference family differs".into()));
                    }
                    ymax = ymax.max(r.support_window(tail_mass)?);
                }
                ymax += (ymax / 4).max(10);
                Ok(Target::from_window(family, est, ymax))
            }
            (DensityEstimate::ContinuousKde { sample, bandwidth }, false) => {
                let n = sample.len() as f64;
                let mean = sample.iter().sum::<f64>() / n;
                let sd = (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                let pad = 3.0 * sd.max(*bandwidth);
                let mut lo = sample[0] - bandwidth - pad;
                let mut hi = sample[sample.len() - 1] + bandwidth + pad;
                if let Some(r) = reference {
                    for c in r.components() {
                        let s = c.variance().sqrt();
                        lo = lo.min(c.mean() - 8.0 * s);
                        hi = hi.max(c.mean() + 8.0 * s);
                    }
                }
                let h = (bandwidth / 10.0).min((hi - lo) / 1000.0).max((hi - lo) / 20000.0);
                let m = ((hi - lo) / h).ceil() as usize;
                let h = (hi - lo) / m as f64;
                let points: Vec<f64> = (0..=m).map(|i| lo + h * i as f64).collect();
                let mut wt = vec![h; m + 1];
                wt[0] = 0.5 * h;
                wt[m] = 0.5 * h;
                let g = points.iter().map(|&x| est.density(x)).collect();
                Ok(Target { family, points, wt, g, count_window: false, grid_step: h })
            }
            _ => Err(Error::SupportMismatch(format!(
                "{} estimate cannot target the {family} family",
                if est.is_discrete() { "discrete" } else { "continuous" }
            ))),
        }
    }

    /// Count target on exactly `0..=ymax`.
    pub fn from_window(family: Family, est: &DensityEstimate, ymax: usize) -> Target {
        let points: Vec<f64> = (0..=ymax).map(|y| y as f64).collect();
        let g = (0..=ymax).map(|y| est.pmf(y as i64)).collect();
        Target { family, points, wt: vec![1.0; ymax + 1], g, count_window: true, grid_step: 1.0 }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.wt
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    /// Model mass of `c` outside the nodes: the tail beyond the count window,
    /// or the Normal mass outside the grid.
    pub fn outside_mass(&self, c: &Component, lnh: &[f64]) -> f64 {
        if self.count_window {
            (1.0 - lnh.iter().map(|l| l.exp()).sum::<f64>()).max(0.0)
        } else {
            match *c {
                Component::Normal { mu, sigma2 } => {
                    let s = (2.0 * sigma2).sqrt();
                    let lo = self.points[0];
                    let hi = self.points[self.points.len() - 1];
                    0.5 * erfc((mu - lo) / s) + 0.5 * erfc((hi - mu) / s)
                }
                _ => 0.0,
            }
        }
    }

    /// `ln h(y; φ)` at every node.
    pub fn ln_h(&self, c: &Component) -> Vec<f64> {
        if self.count_window {
            c.ln_pmf_window(self.points.len() - 1)
        } else {
            c.ln_pmf_points(&self.points)
        }
    }

    fn check(&self, theta: &MixtureSpec) -> Result<()> {
        if theta.family() != self.family {
            return Err(Error::SupportMismatch(format!(
                "model family {} against a {} target",
                theta.family(),
                self.family
            )));
        }
        Ok(())
    }
}

/// Per-node quantities at a fixed θ.
#[derive(Debug, Clone)]
pub struct State {
    pub lnh: Vec<Vec<f64>>,
    /// Component mass outside the nodes.
    pub out: Vec<f64>,
    pub lnf: Vec<f64>,
    /// Responsibilities `w_k(y; θ)`.
    pub w: Vec<Vec<f64>>,
}

impl State {
    pub fn new(target: &Target, theta: &MixtureSpec) -> State {
        let lnh: Vec<Vec<f64>> = theta.components().iter().map(|c| target.ln_h(c)).collect();
        let out = theta.components().iter().zip(&lnh).map(|(c, l)| target.outside_mass(c, l)).collect();
        let lnpi: Vec<f64> = theta.weights().iter().map(|p| p.ln()).collect();
        let n = target.len();
        let k = theta.k();
        let mut lnf = vec![0.0; n];
        let mut w = vec![vec![0.0; n]; k];
        let mut buf = vec![0.0; k];
        for i in 0..n {
            for j in 0..k {
                buf[j] = lnpi[j] + lnh[j][i];
            }
            let l = log_sum_exp(&buf);
            lnf[i] = l;
            for j in 0..k {
                w[j][i] = if l.is_finite() { (buf[j] - l).exp() } else { 1.0 / k as f64 };
            }
        }
        State { lnh, out, lnf, w }
    }
}

/// `D_n(θ) = sum_y G(g/f - 1) f`, including `G(-1)` times the model mass
/// that falls outside the nodes (where the target is zero).
pub fn divergence_d(theta: &MixtureSpec, target: &Target, div: Divergence) -> Result<f64> {
    target.check(theta)?;
    let st = State::new(target, theta);
    Ok(d_from_state(&st, theta.weights(), target, div))
}

fn d_from_state(st: &State, theta_w: &[f64], target: &Target, div: Divergence) -> f64 {
    let out: f64 = theta_w.iter().zip(&st.out).map(|(p, o)| p * o).sum();
    let mut s = tail_term(out, div);
    for i in 0..target.len() {
        let lf = st.lnf[i];
        s += target.wt[i] * div.perspective_ln(target.g[i], lf.exp(), lf);
    }
    s
}

/// `Q_n(θ'|θ) = sum_k sum_y P(g w_k(θ), π'_k h(·; φ'_k))`.
pub fn surrogate_q(
    theta_next: &MixtureSpec,
    theta_cur: &MixtureSpec,
    target: &Target,
    div: Divergence,
) -> Result<f64> {
    target.check(theta_next)?;
    target.check(theta_cur)?;
    if theta_next.k() != theta_cur.k() {
        return Err(Error::SupportMismatch("surrogate needs equal K".into()));
    }
    let cur = State::new(target, theta_cur);
    let (lnh, out) = log_pmfs(theta_next.components(), target);
    Ok(q_from_parts(&cur, &lnh, &out, theta_next.weights(), target, div))
}

fn log_pmfs(comps: &[Component], target: &Target) -> (Vec<Vec<f64>>, Vec<f64>) {
    let lnh: Vec<Vec<f64>> = comps.iter().map(|c| target.ln_h(c)).collect();
    let out = comps.iter().zip(&lnh).map(|(c, l)| target.outside_mass(c, l)).collect();
    (lnh, out)
}

fn tail_term(mass: f64, div: Divergence) -> f64 {
    if mass > 0.0 {
        mass * div.g(-1.0)
    } else {
        0.0
    }
}

fn q_from_parts(
    cur: &State,
    lnh_next: &[Vec<f64>],
    out_next: &[f64],
    pi_next: &[f64],
    target: &Target,
    div: Divergence,
) -> f64 {
    (0..pi_next.len())
        .map(|k| component_q(&cur.w[k], &lnh_next[k], out_next[k], pi_next[k], target, div))
        .sum()
}

/// Per-component surrogate `sum_y P(g w_k, π_k h_k)`.
fn component_q(
    w: &[f64],
    lnh: &[f64],
    out: f64,
    pi: f64,
    target: &Target,
    div: Divergence,
) -> f64 {
    let lp = pi.ln();
    let mut s = tail_term(pi * out, div);
    for i in 0..target.len() {
        let a = target.g[i] * w[i];
        let lb = lp + lnh[i];
        s += target.wt[i] * div.perspective_ln(a, lb.exp(), lb);
    }
    s
}

/// Box constraints on the unconstrained M-step coordinates.
struct Boxed {
    family: Family,
    min_var: f64,
}

impl Boxed {
    fn encode(&self, c: &Component) -> Vec<f64> {
        match *c {
            Component::Poisson { lambda } => vec![lambda.ln()],
            // (log mean, log shape) is far better conditioned than (log alpha, log beta)
            Component::PoissonGamma { alpha, beta } => vec![(alpha / beta).ln(), alpha.ln()],
            Component::PoissonLognormal { mu, sigma2 } => vec![mu + 0.5 * sigma2, sigma2.ln()],
            Component::Normal { mu, sigma2 } => vec![mu, sigma2.ln()],
        }
    }

    fn decode(&self, x: &[f64]) -> Component {
        let cl = |v: f64, lo: f64, hi: f64| v.clamp(lo, hi);
        match self.family {
            Family::Poisson => Component::Poisson { lambda: cl(x[0], -18.0, 16.0).exp() },
            Family::PoissonGamma => {
                let m = cl(x[0], -12.0, 14.0).exp();
                let a = cl(x[1], -9.0, 11.0).exp();
                Component::PoissonGamma { alpha: a, beta: a / m }
            }
            Family::PoissonLognormal => {
                let s2 = cl(x[1], -9.0, 3.5).exp();
                let lm = cl(x[0], -12.0, 14.0);
                Component::PoissonLognormal { mu: lm - 0.5 * s2, sigma2: s2 }
            }
            Family::Normal => {
                let s2 = x[1].clamp(self.min_var.ln(), 700.0).exp();
                Component::Normal { mu: x[0], sigma2: s2 }
            }
        }
    }
}

/// Outcome of one component step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub component: Component,
    pub objective: f64,
    /// True when the optimizer failed to improve and the current value was kept.
    pub fallback: bool,
}

/// Minimizes `sum_y P(g w_k(θ), π_k h(y; φ))` over `φ`.
pub fn m_step_component(
    k: usize,
    theta_cur: &MixtureSpec,
    target: &Target,
    cfg: &FitConfig,
) -> Result<MStep> {
    target.check(theta_cur)?;
    if k >= theta_cur.k() {
        return Err(Error::Parameter(format!("component index {k} out of range")));
    }
    let st = State::new(target, theta_cur);
    Ok(m_step_inner(k, theta_cur, &st, target, cfg, cfg.optimizer_settings.nm_step))
}

fn m_step_inner(
    k: usize,
    theta: &MixtureSpec,
    st: &State,
    target: &Target,
    cfg: &FitConfig,
    nm_step: f64,
) -> MStep {
    let div = cfg.divergence;
    let pi = theta.weights()[k];
    let cur = theta.components()[k];
    let w = &st.w[k];
    let objective = |c: &Component| {
        let l = target.ln_h(c);
        let o = target.outside_mass(c, &l);
        component_q(w, &l, o, pi, target, div)
    };
    let f_cur = component_q(w, &st.lnh[k], st.out[k], pi, target, div);
    let auto = cfg.optimizer == OptimizerKind::Auto;

    let candidate = if auto && div == Divergence::Kl && target.family != Family::PoissonGamma
        && target.family != Family::PoissonLognormal
    {
        weighted_mle(w, target)
    } else if auto && cfg.pi_mode() == PiUpdate::Nelmix {
        nelmix_lambda(w, pi, cur, target)
    } else {
        None
    };

    let exact = candidate.is_some();
    let (best, f_best) = match candidate {
        Some(c) => {
            let f = objective(&c);
            (c, f)
        }
        None => {
            let bx = Boxed {
                family: target.family,
                min_var: (4.0 * target.grid_step).powi(2),
            };
            let opt = &cfg.optimizer_settings;
            if target.family.component_dim() == 1 && cfg.optimizer != OptimizerKind::NelderMead {
                let hi = (target.points[target.len() - 1].max(1.0) * 2.0 + 10.0).ln();
                let m = grid_golden(
                    |s| objective(&bx.decode(&[s])),
                    (1e-6f64).ln(),
                    hi,
                    opt.golden_grid,
                    opt.golden_tol,
                    opt.golden_max_iter,
                );
                (bx.decode(&m.x), m.fx)
            } else {
                let x0 = bx.encode(&cur);
                let f = |x: &[f64]| objective(&bx.decode(x));
                let m = nelder_mead(f, &x0, nm_step, opt.nm_ftol, opt.nm_xtol, opt.nm_max_evals);
                // restart once from the result with a smaller simplex
                let m2 = nelder_mead(
                    |x: &[f64]| objective(&bx.decode(x)),
                    &m.x,
                    (nm_step * 0.1).max(1e-6),
                    opt.nm_ftol,
                    opt.nm_xtol,
                    opt.nm_max_evals / 2,
                );
                let m = if m2.fx < m.fx { m2 } else { m };
                (bx.decode(&m.x), m.fx)
            }
        }
    };
    // a closed-form minimizer can lose to the current point by rounding alone
    let slack = if exact { 1e-12 * f_cur.abs().max(1.0) } else { 0.0 };
    if f_best <= f_cur + slack && f_best.is_finite() {
        MStep { component: best, objective: f_best, fallback: false }
    } else {
        MStep { component: cur, objective: f_cur, fallback: f_best > f_cur || !f_best.is_finite() }
    }
}

/// Closed-form weighted MLE for the KL component step (Poisson, Normal).
fn weighted_mle(w: &[f64], target: &Target) -> Option<Component> {
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for i in 0..target.len() {
        let a = target.wt[i] * target.g[i] * w[i];
        let y = target.points[i];
        s0 += a;
        s1 += a * y;
        s2 += a * y * y;
    }
    if !(s0 > 0.0) {
        return None;
    }
    let m = s1 / s0;
    match target.family {
        Family::Poisson if m > 0.0 => Some(Component::Poisson { lambda: m }),
        Family::Normal => {
            let v = s2 / s0 - m * m;
            let floor = (4.0 * target.grid_step).powi(2);
            Some(Component::Normal { mu: m, sigma2: v.max(floor) })
        }
        _ => None,
    }
}

/// Fixed point of `λ = Σ y ω_y / Σ ω_y` with `ω_y = exp(-π h / (g w)) π h`.
fn nelmix_lambda(w: &[f64], pi: f64, cur: Component, target: &Target) -> Option<Component> {
    let mut lambda = match cur {
        Component::Poisson { lambda } => lambda,
        _ => return None,
    };
    for _ in 0..2000 {
        let lh = Component::Poisson { lambda }.ln_pmf_window(target.len() - 1);
        let (mut s0, mut s1) = (0.0, 0.0);
        for i in 0..target.len() {
            let a = target.g[i] * w[i];
            if a <= 0.0 {
                continue;
            }
            let b = pi * lh[i].exp();
            let om = (-b / a).exp() * b;
            s0 += om;
            s1 += om * target.points[i];
        }
        if !(s0 > 0.0) || !(s1 > 0.0) {
            return None;
        }
        let next = s1 / s0;
        let done = (next - lambda).abs() <= 1e-14 * lambda.max(1.0);
        lambda = next;
        if done {
            break;
        }
    }
    Some(Component::Poisson { lambda })
}

/// Raw weight proposal for `mode` given `a_k = g w_k(θ)`, the current weights
/// and the updated component log-pmfs.
fn pi_proposal(
    mode: PiUpdate,
    st: &State,
    lnh_new: &[Vec<f64>],
    out_new: &[f64],
    pi_cur: &[f64],
    target: &Target,
    div: Divergence,
) -> Result<Vec<f64>> {
    let k = pi_cur.len();
    let mut phi = vec![0.0; k];
    for j in 0..k {
        let p = pi_cur[j];
        // outside the nodes a = 0, which only the unanchored integrand sees
        let mut s = if mode == PiUpdate::GenericPhi && out_new[j] > 0.0 {
            p * out_new[j] * div.raf_at_empty()
        } else {
            0.0
        };
        for i in 0..target.len() {
            let a = target.g[i] * st.w[j][i];
            let h = lnh_new[j][i].exp();
            let b = p * h;
            let wt = target.wt[i];
            s += wt * match mode {
                PiUpdate::ClosedFormEm => a,
                PiUpdate::GenericPhi => -div.b_perspective(a, b),
                PiUpdate::AnchoredPhi => -div.b_perspective(a, b) - b * div.raf_at_empty(),
                PiUpdate::HmixSquared | PiUpdate::HmixDmmix => (a * h).sqrt(),
                PiUpdate::VnedWeighted | PiUpdate::Nelmix => {
                    if a > 0.0 {
                        (-b / a).exp() * b
                    } else {
                        0.0
                    }
                }
            };
        }
        phi[j] = match mode {
            PiUpdate::HmixSquared => s * s,
            PiUpdate::HmixDmmix => p.sqrt() * s,
            _ => s,
        };
    }
    if phi.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::DegenerateUpdate(format!("weight integrals {phi:?}")));
    }
    let total: f64 = phi.iter().sum();
    Ok(phi.iter().map(|v| v / total).collect())
}

/// Mixing-weight update for the components of `theta_phi_new`, using
/// responsibilities at `theta_cur`.
pub fn pi_update(
    theta_phi_new: &MixtureSpec,
    theta_cur: &MixtureSpec,
    target: &Target,
    div: Divergence,
    mode: PiUpdate,
) -> Result<Vec<f64>> {
    target.check(theta_cur)?;
    if theta_phi_new.k() != theta_cur.k() {
        return Err(Error::SupportMismatch("pi update needs equal K".into()));
    }
    let st = State::new(target, theta_cur);
    let (lnh, out) = log_pmfs(theta_phi_new.components(), target);
    pi_proposal(mode, &st, &lnh, &out, theta_cur.weights(), target, div)
}

/// One DM sweep at a time, for callers that need the iterates themselves.
pub struct Fitter<'a> {
    target: &'a Target,
    cfg: FitConfig,
    mode: PiUpdate,
    theta: MixtureSpec,
    state: State,
    d: f64,
    q: f64,
    nm_steps: Vec<f64>,
    pub pi_degenerate: usize,
    pub m_step_fallbacks: usize,
}

/// What a single sweep did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub d: f64,
    pub q: f64,
    pub theta_change: f64,
}

impl<'a> Fitter<'a> {
    pub fn new(target: &'a Target, theta0: MixtureSpec, cfg: &FitConfig) -> Result<Self> {
        cfg.validate(target.family)?;
        target.check(&theta0)?;
        let state = State::new(target, &theta0);
        let d = d_from_state(&state, theta0.weights(), target, cfg.divergence);
        let q = q_from_parts(&state, &state.lnh, &state.out, theta0.weights(), target, cfg.divergence);
        Ok(Fitter {
            target,
            mode: cfg.pi_mode(),
            nm_steps: vec![cfg.optimizer_settings.nm_step; theta0.k()],
            cfg: cfg.clone(),
            theta: theta0,
            state,
            d,
            q,
            pi_degenerate: 0,
            m_step_fallbacks: 0,
        })
    }

    pub fn theta(&self) -> &MixtureSpec {
        &self.theta
    }

    pub fn objective(&self) -> f64 {
        self.d
    }

    pub fn q_self(&self) -> f64 {
        self.q
    }

    /// Component steps for every `k`, then the weight step.
    pub fn step(&mut self) -> Result<Sweep> {
        let div = self.cfg.divergence;
        let k = self.theta.k();
        let mut comps = Vec::with_capacity(k);
        for j in 0..k {
            let m = m_step_inner(j, &self.theta, &self.state, self.target, &self.cfg, self.nm_steps[j]);
            if m.fallback {
                self.m_step_fallbacks += 1;
            }
            // shrink the next simplex as the component settles
            let bx = Boxed { family: self.target.family, min_var: 0.0 };
            let (x0, x1) = (bx.encode(&self.theta.components()[j]), bx.encode(&m.component));
            let mv = x0.iter().zip(&x1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            self.nm_steps[j] = (4.0 * mv).clamp(1e-4, self.cfg.optimizer_settings.nm_step);
            comps.push(m.component);
        }
        let (lnh_new, out_new) = log_pmfs(&comps, self.target);
        let pi_cur = self.theta.weights().to_vec();
        let proposal =
            pi_proposal(self.mode, &self.state, &lnh_new, &out_new, &pi_cur, self.target, div);
        let pi_new = match proposal {
            Ok(p) => {
                if self.cfg.safeguard {
                    self.safeguard(&lnh_new, &out_new, &pi_cur, p)
                } else {
                    p
                }
            }
            Err(_) => {
                self.pi_degenerate += 1;
                pi_cur.clone()
            }
        };
        if pi_new.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Fit(format!("a mixing weight vanished: {pi_new:?}")));
        }
        let next = MixtureSpec::new(pi_new, comps)?;
        let change = self
            .theta
            .to_vector()
            .iter()
            .zip(next.to_vector())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.state = State::new(self.target, &next);
        self.d = d_from_state(&self.state, next.weights(), self.target, div);
        self.q = q_from_parts(
            &self.state,
            &self.state.lnh,
            &self.state.out,
            next.weights(),
            self.target,
            div,
        );
        self.theta = next;
        Ok(Sweep { d: self.d, q: self.q, theta_change: change })
    }

    /// Backtracks from `cand` toward `pi_cur` until the surrogate does not increase.
    fn safeguard(
        &self,
        lnh_new: &[Vec<f64>],
        out_new: &[f64],
        pi_cur: &[f64],
        cand: Vec<f64>,
    ) -> Vec<f64> {
        let div = self.cfg.divergence;
        let q_of = |p: &[f64]| q_from_parts(&self.state, lnh_new, out_new, p, self.target, div);
        let q0 = q_of(pi_cur);
        let slack = 1e-14 * q0.abs().max(1.0);
        let mut t = 1.0;
        for _ in 0..30 {
            let p: Vec<f64> = pi_cur.iter().zip(&cand).map(|(a, b)| a + t * (b - a)).collect();
            if q_of(&p) <= q0 + slack {
                return p;
            }
            t *= 0.5;
        }
        pi_cur.to_vec()
    }
}

/// Runs the iteration to convergence from `theta0` on a prepared target.
pub fn fit_target(target: &Target, theta0: MixtureSpec, cfg: &FitConfig) -> Result<FitResult> {
    let mut fitter = Fitter::new(target, theta0, cfg)?;
    let mut objective_trace = vec![fitter.objective()];
    let mut q_trace = vec![fitter.q_self()];
    let mut converged = false;
    let mut violations = 0;
    let mut warnings = Vec::new();
    let mut iters = 0;
    while iters < cfg.max_iters {
        let prev_d = fitter.objective();
        let prev_q = fitter.q_self();
        let sweep = match fitter.step() {
            Ok(s) => s,
            Err(e) => {
                warnings.push(format!("stopped after {iters} sweeps: {e}"));
                break;
            }
        };
        iters += 1;
        objective_trace.push(sweep.d);
        q_trace.push(sweep.q);
        if sweep.d > prev_d + 1e-10 {
            violations += 1;
        }
        if (sweep.q - prev_q).abs() < cfg.tol || sweep.theta_change < cfg.theta_tol {
            converged = true;
            break;
        }
    }
    if fitter.pi_degenerate > 0 {
        warnings.push(format!("{} degenerate weight updates kept old weights", fitter.pi_degenerate));
    }
    let w = fitter.theta().weights();
    if w.iter().any(|&p| p < 1e-8) {
        warnings.push("a component carries almost no weight".into());
    }
    Ok(FitResult {
        theta_hat: fitter.theta().canonicalize(),
        family: target.family,
        divergence: cfg.divergence,
        pi_update: cfg.pi_mode(),
        objective_trace,
        q_trace,
        iters,
        converged,
        descent_violations: violations,
        pi_degenerate: fitter.pi_degenerate,
        m_step_fallbacks: fitter.m_step_fallbacks,
        warnings,
    })
}

/// Initial value from the config: user-supplied or k-means on the estimate.
pub fn initial_theta(est: &DensityEstimate, family: Family, k: usize, cfg: &FitConfig) -> Result<MixtureSpec> {
    match &cfg.init {
        Init::User { theta0 } => {
            if theta0.k() != k {
                return Err(Error::Parameter(format!(
                    "initial value has K={} but K={k} was requested",
                    theta0.k()
                )));
            }
            Ok(theta0.clone())
        }
        Init::Kmeans => match est {
            DensityEstimate::DiscretePmf { start, mass } => {
                let pts: Vec<f64> = (0..mass.len()).map(|i| (start + i as i64) as f64).collect();
                kmeans_init_weighted(&pts, mass, family, k, cfg.seed)
            }
            DensityEstimate::ContinuousKde { sample, .. } => {
                let w = vec![1.0; sample.len()];
                kmeans_init_weighted(sample, &w, family, k, cfg.seed)
            }
        },
    }
}

/// Starting values for [`fit_multistart`]. A user value is used alone.
/// Otherwise: k-means with seeds `seed, seed+1, ..` (`restarts` of them) and
/// one trimmed k-means start. Duplicates are dropped.
pub fn starting_values(
    est: &DensityEstimate,
    family: Family,
    k: usize,
    cfg: &FitConfig,
    restarts: usize,
) -> Result<Vec<MixtureSpec>> {
    if let Init::User { .. } = cfg.init {
        return Ok(vec![initial_theta(est, family, k, cfg)?]);
    }
    let (pts, w): (Vec<f64>, Vec<f64>) = match est {
        DensityEstimate::DiscretePmf { start, mass } => {
            ((0..mass.len()).map(|i| (start + i as i64) as f64).collect(), mass.clone())
        }
        DensityEstimate::ContinuousKde { sample, .. } => (sample.clone(), vec![1.0; sample.len()]),
    };
    let mut out: Vec<MixtureSpec> = Vec::new();
    for r in 0..restarts.max(1) {
        let s = kmeans_init_weighted(&pts, &w, family, k, cfg.seed.wrapping_add(r as u64))?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    let t = trimmed_kmeans_init_weighted(&pts, &w, family, k, cfg.seed)?;
    if !out.contains(&t) {
        out.push(t);
    }
    Ok(out)
}

/// Fits from every start in `starts` and keeps the fit with the smallest
/// final objective (the first one on ties). Starts that fail are skipped.
pub fn fit_best_of(
    est: &DensityEstimate,
    family: Family,
    starts: &[MixtureSpec],
    cfg: &FitConfig,
) -> Result<FitResult> {
    let mut best: Option<FitResult> = None;
    let mut first_err = None;
    for s in starts {
        let r = Target::new(est, family, Some(s), cfg.tail_mass).and_then(|t| fit_target(&t, s.clone(), cfg));
        match r {
            Ok(f) => {
                if best.as_ref().is_none_or(|b| f.final_objective() < b.final_objective()) {
                    best = Some(f);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.unwrap_or_else(|| Error::Fit("no starting values".into())))
}

/// [`fit_best_of`] over [`starting_values`].
pub fn fit_multistart(
    est: &DensityEstimate,
    family: Family,
    k: usize,
    cfg: &FitConfig,
    restarts: usize,
) -> Result<FitResult> {
    if k == 0 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    cfg.validate(family)?;
    fit_best_of(est, family, &starting_values(est, family, k, cfg, restarts)?, cfg)
}

/// Fits a K-component mixture to a density estimate.
pub fn fit_estimate(est: &DensityEstimate, family: Family, k: usize, cfg: &FitConfig) -> Result<FitResult> {
    if k == 0 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    cfg.validate(family)?;
    let theta0 = initial_theta(est, family, k, cfg)?;
    let target = Target::new(est, family, Some(&theta0), cfg.tail_mass)?;
    fit_target(&target, theta0, cfg)
}

/// Plug-in estimate for raw observations: the empirical pmf for counts, the
/// Epanechnikov KDE with the normal-reference bandwidth otherwise.
pub fn default_estimate(data: &[f64], family: Family) -> Result<DensityEstimate> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if family.is_count() {
        empirical_pmf(&to_counts(data)?)
    } else {
        continuous_kde(data, epanechnikov_bandwidth(data)?)
    }
}

/// Converts observations to counts, rejecting anything that is not a
/// nonnegative integer.
pub fn to_counts(data: &[f64]) -> Result<Vec<i64>> {
    data.iter()
        .map(|&y| {
            if y.is_finite() && y >= 0.0 && y.fract() == 0.0 && y < 9.0e15 {
                Ok(y as i64)
            } else {
                Err(Error::Domain(format!("observation {y} is not a nonnegative integer")))
            }
        })
        .collect()
}

/// Fits raw observations with [`default_estimate`].
pub fn fit(data: &[f64], family: Family, k: usize, cfg: &FitConfig) -> Result<FitResult> {
    fit_estimate(&default_estimate(data, family)?, family, k, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::empirical_pmf;

    fn pois(l: f64) -> Component {
        Component::Poisson { lambda: l }
    }

    fn target_of(data: &[i64], fam: Family, r: &MixtureSpec) -> Target {
        Target::new(&empirical_pmf(data).unwrap(), fam, Some(r), 1e-10).unwrap()
    }

    #[test]
    fn single_component_surrogate_is_the_divergence() {
        let th = MixtureSpec::single(pois(2.0)).unwrap();
        let t = target_of(&[0, 1, 1, 3, 4, 7], Family::Poisson, &th);
        for d in [Divergence::Kl, Divergence::Hellinger, Divergence::Ned] {
            let q = surrogate_q(&th, &th, &t, d).unwrap();
            let dd = divergence_d(&th, &t, d).unwrap();
            assert!((q - dd).abs() <= 1e-14, "{d}");
        }
    }

    #[test]
    fn divergence_zero_at_exact_model() {
        let th = MixtureSpec::new(vec![0.4, 0.6], vec![pois(0.5), pois(10.0)]).unwrap();
        let est = DensityEstimate::from_model(&th, 1e-14).unwrap();
        let t = Target::new(&est, Family::Poisson, Some(&th), 1e-14).unwrap();
        for d in [Divergence::KlCalibrated, Divergence::Hellinger, Divergence::Ned, Divergence::Vned] {
            assert!(divergence_d(&th, &t, d).unwrap().abs() < 1e-12, "{d}");
        }
    }

    #[test]
    fn hellinger_identity() {
        let th = MixtureSpec::new(vec![0.3, 0.7], vec![pois(1.0), pois(6.0)]).unwrap();
        let data = [0i64, 1, 1, 2, 5, 6, 6, 7, 9, 12];
        let t = target_of(&data, Family::Poisson, &th);
        let hd = divergence_d(&th, &t, Divergence::Hellinger).unwrap();
        let f = th.pmf_window(t.len() - 1);
        let mut sq = 0.0;
        let mut bc = 0.0;
        for (i, fy) in f.iter().enumerate() {
            let g = t.g()[i];
            sq += (g.sqrt() - fy.sqrt()).powi(2);
            bc += (g * fy).sqrt();
        }
        let fm: f64 = f.iter().sum();
        // the model tail beyond the window has g = 0 and contributes 2 * mass
        assert!((hd - 2.0 * sq - 2.0 * (1.0 - fm).max(0.0)).abs() < 1e-13);
        assert!((hd - (4.0 - 4.0 * bc)).abs() < 1e-12);
    }

    #[test]
    fn em_component_step_matches_weighted_mean() {
        let th = MixtureSpec::new(vec![0.5, 0.5], vec![pois(1.0), pois(8.0)]).unwrap();
        let data = [0i64, 0, 1, 2, 2, 3, 7, 8, 9, 11, 12];
        let t = target_of(&data, Family::Poisson, &th);
        let st = State::new(&t, &th);
        let cfg = FitConfig::new(Divergence::Kl);
        for k in 0..2 {
            let closed = m_step_component(k, &th, &t, &cfg).unwrap().component.mean();
            let (mut s0, mut s1) = (0.0, 0.0);
            for (i, y) in t.points().iter().enumerate() {
                s0 += t.g()[i] * st.w[k][i];
                s1 += t.g()[i] * st.w[k][i] * y;
            }
            assert!((closed - s1 / s0).abs() < 1e-12);
            let numeric = FitConfig { optimizer: OptimizerKind::GoldenSection, ..cfg.clone() };
            let m = m_step_component(k, &th, &t, &numeric).unwrap().component.mean();
            assert!((m - s1 / s0).abs() < 1e-6 * (1.0 + s1 / s0), "{m} vs {}", s1 / s0);
        }
    }

    #[test]
    fn nelmix_matches_numeric_vned_step() {
        let th = MixtureSpec::new(vec![0.4, 0.6], vec![pois(1.5), pois(9.0)]).unwrap();
        let data = [0i64, 1, 1, 2, 3, 3, 7, 9, 10, 10, 12, 14, 30];
        let t = target_of(&data, Family::Poisson, &th);
        let nel = FitConfig {
            pi_update: Some(PiUpdate::Nelmix),
            ..FitConfig::new(Divergence::Vned)
        };
        let num = FitConfig { optimizer: OptimizerKind::GoldenSection, ..nel.clone() };
        for k in 0..2 {
            let a = m_step_component(k, &th, &t, &nel).unwrap();
            let b = m_step_component(k, &th, &t, &num).unwrap();
            assert!((a.component.mean() - b.component.mean()).abs() < 1e-5, "{a:?} {b:?}");
        }
    }

    #[test]
    fn pi_updates_basic_cases() {
        let data = [0i64, 1, 1, 2, 8, 9, 10, 12];
        let th = MixtureSpec::new(vec![0.4, 0.6], vec![pois(1.0), pois(9.0)]).unwrap();
        let t = target_of(&data, Family::Poisson, &th);
        let em = pi_update(&th, &th, &t, Divergence::Kl, PiUpdate::ClosedFormEm).unwrap();
        let gp = pi_update(&th, &th, &t, Divergence::Kl, PiUpdate::GenericPhi).unwrap();
        for (a, b) in em.iter().zip(&gp) {
            assert!((a - b).abs() < 1e-10);
        }
        let one = MixtureSpec::single(pois(3.0)).unwrap();
        let t1 = target_of(&data, Family::Poisson, &one);
        for mode in [
            PiUpdate::GenericPhi,
            PiUpdate::AnchoredPhi,
            PiUpdate::HmixSquared,
            PiUpdate::HmixDmmix,
            PiUpdate::VnedWeighted,
            PiUpdate::ClosedFormEm,
        ] {
            let d = if mode == PiUpdate::GenericPhi { Divergence::Kl } else { Divergence::Ned };
            assert_eq!(pi_update(&one, &one, &t1, d, mode).unwrap(), vec![1.0]);
        }
        // identical components on any data: equal split is preserved
        let sym = MixtureSpec::new(vec![0.5, 0.5], vec![pois(4.0), pois(4.0)]).unwrap();
        for mode in [PiUpdate::HmixSquared, PiUpdate::VnedWeighted, PiUpdate::AnchoredPhi] {
            let p = pi_update(&sym, &sym, &t, Divergence::Hellinger, mode).unwrap();
            assert!((p[0] - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn fit_recovers_separated_components() {
        use rand::SeedableRng;
        let truth = MixtureSpec::new(vec![0.4, 0.6], vec![pois(0.5), pois(10.0)]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data = truth.sample(500, &mut rng);
        for d in [Divergence::Kl, Divergence::Hellinger, Divergence::Vned, Divergence::Ned] {
            let r = fit(&data, Family::Poisson, 2, &FitConfig::new(d)).unwrap();
            assert!(r.converged, "{d}");
            assert_eq!(r.descent_violations, 0, "{d}");
            let m = r.theta_hat.order_by_mean();
            assert!((m.components()[0].mean() - 0.5).abs() < 0.3, "{d} {m:?}");
            assert!((m.components()[1].mean() - 10.0).abs() < 1.0, "{d} {m:?}");
            assert!((m.weights()[0] - 0.4).abs() < 0.08, "{d} {m:?}");
        }
    }

    #[test]
    fn config_validation() {
        let c = FitConfig { optimizer: OptimizerKind::GoldenSection, ..Default::default() };
        assert!(c.validate(Family::PoissonGamma).is_err());
        let c = FitConfig { pi_update: Some(PiUpdate::Nelmix), ..FitConfig::new(Divergence::Hellinger) };
        assert!(c.validate(Family::Poisson).is_err());
        let c = FitConfig { max_iters: 0, ..Default::default() };
        assert!(c.validate(Family::Poisson).is_err());
        assert!(fit(&[1.5, 2.0], Family::Poisson, 1, &FitConfig::default()).is_err());
        assert!(fit(&[], Family::Poisson, 1, &FitConfig::default()).is_err());
    }
}
