//! Component families, mixture densities and canonical labelling.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature::GaussHermite;

pub const DEFAULT_TAIL_MASS: f64 = 1e-10;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Poisson,
    PoissonGamma,
    PoissonLognormal,
    Normal,
}

impl Family {
    pub fn is_count(self) -> bool {
        !matches!(self, Family::Normal)
    }

    /// Number of free parameters per component.
    pub fn component_dim(self) -> usize {
        match self {
            Family::Poisson => 1,
            _ => 2,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::PoissonGamma => "poisson_gamma",
            Family::PoissonLognormal => "poisson_lognormal",
            Family::Normal => "normal",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "poisson" => Ok(Family::Poisson),
            "poisson_gamma" | "pg" | "negbin" => Ok(Family::PoissonGamma),
            "poisson_lognormal" | "pl" => Ok(Family::PoissonLognormal),
            "normal" | "gaussian" => Ok(Family::Normal),
            _ => Err(Error::Parameter(format!("unknown family '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Component {
    Poisson { lambda: f64 },
    /// Gamma mixing law with shape `alpha` and rate `beta`; marginally negative binomial.
    PoissonGamma { alpha: f64, beta: f64 },
    /// Lognormal mixing law: `ln lambda ~ N(mu, sigma2)`.
    PoissonLognormal { mu: f64, sigma2: f64 },
    Normal { mu: f64, sigma2: f64 },
}

impl Component {
    pub fn family(&self) -> Family {
        match self {
            Component::Poisson { .. } => Family::Poisson,
            Component::PoissonGamma { .. } => Family::PoissonGamma,
            Component::PoissonLognormal { .. } => Family::PoissonLognormal,
            Component::Normal { .. } => Family::Normal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Component::Poisson { lambda } => lambda > 0.0 && lambda.is_finite(),
            Component::PoissonGamma { alpha, beta } => {
                alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()
            }
            Component::PoissonLognormal { mu, sigma2 } | Component::Normal { mu, sigma2 } => {
                mu.is_finite() && sigma2 > 0.0 && sigma2.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid component parameters {self:?}")))
        }
    }

    /// Natural parameters in a fixed order: `lambda`, `(alpha, beta)`, `(mu, sigma2)`.
    pub fn params(&self) -> Vec<f64> {
        match *self {
            Component::Poisson { lambda } => vec![lambda],
            Component::PoissonGamma { alpha, beta } => vec![alpha, beta],
            Component::PoissonLognormal { mu, sigma2 } | Component::Normal { mu, sigma2 } => {
                vec![mu, sigma2]
            }
        }
    }

    pub fn from_params(family: Family, p: &[f64]) -> Result<Self> {
        if p.len() != family.component_dim() {
            return Err(Error::Parameter(format!(
                "{family} takes {} parameters, got {}",
                family.component_dim(),
                p.len()
            )));
        }
        let c = match family {
            Family::Poisson => Component::Poisson { lambda: p[0] },
            Family::PoissonGamma => Component::PoissonGamma { alpha: p[0], beta: p[1] },
            Family::PoissonLognormal => Component::PoissonLognormal { mu: p[0], sigma2: p[1] },
            Family::Normal => Component::Normal { mu: p[0], sigma2: p[1] },
        };
        c.validate()?;
        Ok(c)
    }

    /// Scalar summary used to break ties in the canonical order.
    pub fn mean(&self) -> f64 {
        match *self {
            Component::Poisson { lambda } => lambda,
            Component::PoissonGamma { alpha, beta } => alpha / beta,
            Component::PoissonLognormal { mu, sigma2 } => (mu + 0.5 * sigma2).exp(),
            Component::Normal { mu, .. } => mu,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Component::Poisson { lambda } => lambda,
            Component::PoissonGamma { alpha, beta } => alpha / beta * (1.0 + 1.0 / beta),
            Component::PoissonLognormal { mu, sigma2 } => {
                let m = (mu + 0.5 * sigma2).exp();
                m + m * m * (sigma2.exp() - 1.0)
            }
            Component::Normal { sigma2, .. } => sigma2,
        }
    }

    /// Checked log pmf (log density for Normal).
    pub fn ln_pmf(&self, y: f64) -> Result<f64> {
        check_support(self.family(), y)?;
        Ok(self.ln_pmf_unchecked(y))
    }

    pub fn pmf(&self, y: f64) -> Result<f64> {
        self.ln_pmf(y).map(f64::exp)
    }

    pub fn ln_pmf_unchecked(&self, y: f64) -> f64 {
        match *self {
            Component::Poisson { lambda } => y * lambda.ln() - lambda - ln_gamma(y + 1.0),
            Component::PoissonGamma { alpha, beta } => {
                ln_gamma(y + alpha) - ln_gamma(alpha) - ln_gamma(y + 1.0)
                    + alpha * (beta / (beta + 1.0)).ln()
                    - y * (beta + 1.0).ln()
            }
            Component::PoissonLognormal { mu, sigma2 } => {
                pl_ln_pmf(y, mu, sigma2, GaussHermite::default_rule())
            }
            Component::Normal { mu, sigma2 } => {
                -0.5 * (LN_2PI + sigma2.ln()) - (y - mu) * (y - mu) / (2.0 * sigma2)
            }
        }
    }

    /// Log pmf on `0..=ymax` for count families, via recurrences where possible.
    pub fn ln_pmf_window(&self, ymax: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(ymax + 1);
        match *self {
            Component::Poisson { lambda } => {
                let ll = lambda.ln();
                let mut lp = -lambda;
                out.push(lp);
                for y in 1..=ymax {
                    lp += ll - (y as f64).ln();
                    out.push(lp);
                }
            }
            Component::PoissonGamma { alpha, beta } => {
                let lb1 = (beta + 1.0).ln();
                let mut lp = alpha * (beta.ln() - lb1);
                out.push(lp);
                for y in 1..=ymax {
                    let yf = y as f64;
                    lp += (yf - 1.0 + alpha).ln() - yf.ln() - lb1;
                    out.push(lp);
                }
            }
            Component::PoissonLognormal { mu, sigma2 } => {
                let rule = GaussHermite::default_rule();
                for y in 0..=ymax {
                    out.push(pl_ln_pmf(y as f64, mu, sigma2, rule));
                }
            }
            Component::Normal { .. } => {
                for y in 0..=ymax {
                    out.push(self.ln_pmf_unchecked(y as f64));
                }
            }
        }
        out
    }

    /// Log density at arbitrary points (counts must be nonnegative integers).
    pub fn ln_pmf_points(&self, points: &[f64]) -> Vec<f64> {
        points.iter().map(|&y| self.ln_pmf_unchecked(y)).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Component::Poisson { lambda } => poisson_draw(lambda, rng),
            Component::PoissonGamma { alpha, beta } => {
                let lam = Gamma::new(alpha, 1.0 / beta).expect("valid gamma").sample(rng);
                poisson_draw(lam, rng)
            }
            Component::PoissonLognormal { mu, sigma2 } => {
                let z = Normal::new(mu, sigma2.sqrt()).expect("valid normal").sample(rng);
                poisson_draw(z.exp(), rng)
            }
            Component::Normal { mu, sigma2 } => {
                Normal::new(mu, sigma2.sqrt()).expect("valid normal").sample(rng)
            }
        }
    }
}

fn poisson_draw<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> f64 {
    if lambda <= 0.0 || !lambda.is_finite() {
        return 0.0;
    }
    Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(0.0)
}

fn check_support(family: Family, y: f64) -> Result<()> {
    if !y.is_finite() {
        return Err(Error::Domain(format!("observation {y} is not finite")));
    }
    if family.is_count() && (y < 0.0 || y.fract() != 0.0) {
        return Err(Error::Domain(format!(
            "observation {y} is not a nonnegative integer ({family} support)"
        )));
    }
    Ok(())
}

/// Poisson-lognormal log pmf by Gauss-Hermite quadrature in `x = ln lambda`,
/// with the nodes centred at the mode of the integrand.
pub fn pl_ln_pmf(y: f64, mu: f64, sigma2: f64, rule: &GaussHermite) -> f64 {
    let l = |x: f64| y * x - x.exp() - (x - mu) * (x - mu) / (2.0 * sigma2);
    // l' is concave and decreasing; starting right of the root Newton is monotone.
    let mut x = if y > 0.0 { mu.max(y.ln()) } else { mu };
    for _ in 0..200 {
        let ex = x.exp();
        let d1 = y - ex - (x - mu) / sigma2;
        let d2 = -ex - 1.0 / sigma2;
        let step = d1 / d2;
        x -= step;
        if step.abs() <= 1e-13 * (1.0 + x.abs()) {
            break;
        }
    }
    let curv = x.exp() + 1.0 / sigma2;
    rule.ln_integral_laplace_centred(l, x, curv) - ln_gamma(y + 1.0) - 0.5 * (LN_2PI + sigma2.ln())
}

/// A K-component mixture with weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture", into = "RawMixture")]
pub struct MixtureSpec {
    weights: Vec<f64>,
    components: Vec<Component>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMixture {
    weights: Vec<f64>,
    components: Vec<Component>,
}

impl TryFrom<RawMixture> for MixtureSpec {
    type Error = Error;

    fn try_from(r: RawMixture) -> Result<Self> {
        MixtureSpec::new(r.weights, r.components)
    }
}

impl From<MixtureSpec> for RawMixture {
    fn from(m: MixtureSpec) -> Self {
        RawMixture { weights: m.weights, components: m.components }
    }
}

impl MixtureSpec {
    /// Validates and builds a mixture. Weights must sum to one within 1e-9 and
    /// are renormalized unless they already do so to rounding.
    pub fn new(weights: Vec<f64>, components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Parameter("mixture needs at least one component".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::Parameter(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        let fam = components[0].family();
        for c in &components {
            c.validate()?;
            if c.family() != fam {
                return Err(Error::Parameter("components must share one family".into()));
            }
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Parameter(format!("weights must be positive, got {weights:?}")));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("weights sum to {s}, not 1")));
        }
        // rounding-level drift is kept so that serialized weights read back bit-identical
        let weights = if (s - 1.0).abs() <= 1e-12 { weights } else { weights.iter().map(|w| w / s).collect() };
        Ok(MixtureSpec { weights, components })
    }

    pub fn single(c: Component) -> Result<Self> {
        MixtureSpec::new(vec![1.0], vec![c])
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn family(&self) -> Family {
        self.components[0].family()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Natural parameter vector `(pi_1..pi_K, phi_1, .., phi_K)`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        for c in &self.components {
            v.extend(c.params());
        }
        v
    }

    pub fn from_vector(family: Family, k: usize, v: &[f64]) -> Result<Self> {
        let d = family.component_dim();
        if v.len() != k * (1 + d) {
            return Err(Error::Parameter(format!(
                "expected {} values for K={k}, got {}",
                k * (1 + d),
                v.len()
            )));
        }
        let comps = (0..k)
            .map(|i| Component::from_params(family, &v[k + i * d..k + (i + 1) * d]))
            .collect::<Result<Vec<_>>>()?;
        MixtureSpec::new(v[..k].to_vec(), comps)
    }

    /// `sum_k pi_k h_k(y)`; the terms are added in ascending order so the value
    /// does not depend on the component labelling.
    pub fn density(&self, y: f64) -> Result<f64> {
        check_support(self.family(), y)?;
        let mut terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * c.ln_pmf_unchecked(y).exp())
            .collect();
        terms.sort_by(f64::total_cmp);
        Ok(terms.iter().sum())
    }

    pub fn ln_density(&self, y: f64) -> Result<f64> {
        check_support(self.family(), y)?;
        let lt: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.ln_pmf_unchecked(y))
            .collect();
        Ok(log_sum_exp(&lt))
    }

    pub fn responsibilities(&self, y: f64) -> Result<Vec<f64>> {
        check_support(self.family(), y)?;
        let lt: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.ln_pmf_unchecked(y))
            .collect();
        let lse = log_sum_exp(&lt);
        if !lse.is_finite() {
            return Err(Error::DegenerateSupport(format!("mixture density is zero at {y}")));
        }
        Ok(lt.iter().map(|l| (l - lse).exp()).collect())
    }

    /// Permutes components so weights are nondecreasing, ties broken by mean.
    pub fn canonicalize(&self) -> MixtureSpec {
        let order = self.canonical_order();
        MixtureSpec {
            weights: order.iter().map(|&i| self.weights[i]).collect(),
            components: order.iter().map(|&i| self.components[i]).collect(),
        }
    }

    /// The permutation taking this labelling to the canonical one.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.k()).collect();
        order.sort_by(|&i, &j| {
            self.weights[i]
                .total_cmp(&self.weights[j])
                .then(self.components[i].mean().total_cmp(&self.components[j].mean()))
        });
        order
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical_order().iter().enumerate().all(|(i, &j)| i == j)
    }

    /// Components sorted by mean (used for labelling pixels or clusters).
    pub fn order_by_mean(&self) -> MixtureSpec {
        let mut order: Vec<usize> = (0..self.k()).collect();
        order.sort_by(|&i, &j| {
            self.components[i]
                .mean()
                .total_cmp(&self.components[j].mean())
                .then(self.weights[i].total_cmp(&self.weights[j]))
        });
        MixtureSpec {
            weights: order.iter().map(|&i| self.weights[i]).collect(),
            components: order.iter().map(|&i| self.components[i]).collect(),
        }
    }

    /// Smallest `y_max` such that the mass above `y_max` is below `tail_mass`.
    pub fn support_window(&self, tail_mass: f64) -> Result<usize> {
        if !self.family().is_count() {
            return Err(Error::Unsupported(format!(
                "support window for {} family",
                self.family()
            )));
        }
        if !(tail_mass > 0.0 && tail_mass < 1.0) {
            return Err(Error::Parameter(format!("tail mass must lie in (0,1), got {tail_mass}")));
        }
        // Grow until the window holds the mass and its last quarter is
        // negligible, then sum the tail backwards; 1 - cdf is useless below
        // ~1e-15.
        let mut ymax = 64usize;
        loop {
            let pmf = self.pmf_window(ymax);
            let total: f64 = pmf.iter().sum();
            let last: f64 = pmf[ymax - ymax / 4..].iter().sum();
            if total > 1.0 - 1e-9 && last < tail_mass * 1e-3 {
                let mut tail = 0.0;
                for y in (0..ymax).rev() {
                    tail += pmf[y + 1];
                    if tail >= tail_mass {
                        return Ok(y + 1);
                    }
                }
                return Ok(0);
            }
            if ymax > 50_000_000 {
                return Err(Error::DegenerateSupport("support window does not close".into()));
            }
            ymax *= 4;
        }
    }

    /// Mixture pmf on `0..=ymax` (count families).
    pub fn pmf_window(&self, ymax: usize) -> Vec<f64> {
        let mut out = vec![0.0; ymax + 1];
        for (w, c) in self.weights.iter().zip(&self.components) {
            for (o, l) in out.iter_mut().zip(c.ln_pmf_window(ymax)) {
                *o += w * l.exp();
            }
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let mut cum = Vec::with_capacity(self.k());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cum.push(acc);
        }
        (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let k = cum.iter().position(|&c| u < c).unwrap_or(self.k() - 1);
                self.components[k].sample(rng)
            })
            .collect()
    }

    /// Sample and component labels.
    pub fn sample_labelled<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Vec<f64>, Vec<usize>) {
        let mut ys = Vec::with_capacity(n);
        let mut ls = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = self.k() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = i;
                    break;
                }
            }
            ys.push(self.components[k].sample(rng));
            ls.push(k);
        }
        (ys, ls)
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_poisson() -> MixtureSpec {
        MixtureSpec::new(
            vec![0.4, 0.6],
            vec![Component::Poisson { lambda: 0.5 }, Component::Poisson { lambda: 10.0 }],
        )
        .unwrap()
    }

    #[test]
    fn pmf_spot_values() {
        let p = Component::Poisson { lambda: 0.5 }.pmf(0.0).unwrap();
        assert!((p - (-0.5f64).exp()).abs() < 1e-15);
        let p = Component::PoissonGamma { alpha: 1.0, beta: 2.0 }.pmf(0.0).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
        let f = two_poisson().density(0.0).unwrap();
        assert!((f - (0.4 * (-0.5f64).exp() + 0.6 * (-10f64).exp())).abs() < 1e-15);
        assert!((f - 0.242640).abs() < 1e-6);
        let w = two_poisson().responsibilities(0.0).unwrap();
        assert!((w[0] - 0.999888).abs() < 1e-6);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn support_errors() {
        let c = Component::Poisson { lambda: 1.0 };
        assert!(c.pmf(-1.0).is_err());
        assert!(c.pmf(1.5).is_err());
        assert!(Component::Normal { mu: 0.0, sigma2: 1.0 }.pmf(-1.5).is_ok());
        assert!(MixtureSpec::new(vec![0.5, 0.6], vec![c, c]).is_err());
        assert!(MixtureSpec::new(vec![1.0], vec![Component::Poisson { lambda: -1.0 }]).is_err());
        assert!(MixtureSpec::new(
            vec![0.5, 0.5],
            vec![c, Component::Normal { mu: 0.0, sigma2: 1.0 }]
        )
        .is_err());
    }

    #[test]
    fn window_recurrences_match_direct_evaluation() {
        for c in [
            Component::Poisson { lambda: 7.3 },
            Component::PoissonGamma { alpha: 0.5, beta: 0.5 },
            Component::PoissonGamma { alpha: 10.0, beta: 2.0 },
            Component::PoissonLognormal { mu: 1.0, sigma2: 0.5 },
        ] {
            let w = c.ln_pmf_window(200);
            for (y, l) in w.iter().enumerate() {
                let d = c.ln_pmf(y as f64).unwrap();
                assert!((l - d).abs() <= 1e-12 * (1.0 + d.abs()), "{c:?} y={y}: {l} vs {d}");
            }
        }
    }

    #[test]
    fn poisson_gamma_is_negative_binomial() {
        for &a in &[0.5, 1.0, 10.0] {
            for &b in &[0.5, 1.0, 2.0] {
                let c = Component::PoissonGamma { alpha: a, beta: b };
                let p = b / (b + 1.0);
                let w = c.ln_pmf_window(200);
                // NB(r = a, p) built from a product recurrence on the pmf itself
                let mut nb = p.powf(a);
                for y in 0..=200usize {
                    if y > 0 {
                        nb *= (y as f64 - 1.0 + a) / y as f64 * (1.0 - p);
                    }
                    let ours = w[y].exp();
                    assert!((ours - nb).abs() <= 1e-12, "a={a} b={b} y={y}");
                }
            }
        }
    }

    fn pl_trapezoid(y: f64, mu: f64, s2: f64) -> f64 {
        let (lo, hi, n) = (-15.0f64, 10.0f64, 1_000_000usize);
        let h = (hi - lo) / n as f64;
        let lg = ln_gamma(y + 1.0);
        let mut acc = 0.0;
        for i in 0..=n {
            let x = lo + h * i as f64;
            let v = (y * x - x.exp() - lg - (x - mu).powi(2) / (2.0 * s2)).exp()
                / (2.0 * std::f64::consts::PI * s2).sqrt();
            acc += if i == 0 || i == n { 0.5 * v } else { v };
        }
        acc * h
    }

    #[test]
    fn poisson_lognormal_matches_trapezoid_oracle() {
        for &(mu, s) in &[(1.0, 0.5), (0.0, 0.25), (3.0, 1.0), (2.0, 0.7)] {
            for &y in &[0.0, 1.0, 5.0, 17.0, 50.0] {
                let c = Component::PoissonLognormal { mu, sigma2: s * s };
                let q = c.pmf(y).unwrap();
                let o = pl_trapezoid(y, mu, s * s);
                assert!((q - o).abs() <= 1e-6 * o, "mu={mu} s={s} y={y}: {q} vs {o}");
            }
        }
    }

    #[test]
    fn count_pmfs_sum_to_one() {
        for c in [
            Component::Poisson { lambda: 0.5 },
            Component::PoissonGamma { alpha: 1.0, beta: 0.5 },
            Component::PoissonLognormal { mu: 1.0, sigma2: 0.25 },
        ] {
            let m = MixtureSpec::single(c).unwrap();
            let y = m.support_window(1e-10).unwrap();
            let s: f64 = m.pmf_window(y).iter().sum();
            assert!((s - 1.0).abs() < 1e-8, "{c:?} {s}");
        }
        let c = Component::Normal { mu: 1.0, sigma2: 2.0 };
        let h = 1e-3;
        let s: f64 = (0..=40_000).map(|i| c.pmf(-19.0 + h * i as f64).unwrap() * h).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn support_window_examples() {
        let one = MixtureSpec::single(Component::Poisson { lambda: 0.5 }).unwrap();
        assert!(one.support_window(1e-12).unwrap() <= 20);
        let y = two_poisson().support_window(1e-10).unwrap();
        assert!((35..=45).contains(&y), "{y}");
        let ten = MixtureSpec::single(Component::Poisson { lambda: 10.0 }).unwrap();
        assert_eq!(ten.support_window(0.5).unwrap(), 10);
        let nrm = MixtureSpec::single(Component::Normal { mu: 0.0, sigma2: 1.0 }).unwrap();
        assert!(matches!(nrm.support_window(1e-3), Err(Error::Unsupported(_))));
    }

    #[test]
    fn canonical_order_examples() {
        let c = |l| Component::Poisson { lambda: l };
        let m = MixtureSpec::new(vec![0.6, 0.4], vec![c(1.0), c(2.0)]).unwrap();
        let cm = m.canonicalize();
        assert_eq!(cm.weights(), &[0.4, 0.6]);
        assert_eq!(cm.components(), &[c(2.0), c(1.0)]);
        assert_eq!(cm.canonicalize(), cm);
        let t = MixtureSpec::new(vec![0.5, 0.5], vec![c(10.0), c(0.5)]).unwrap();
        assert_eq!(t.canonicalize().components(), &[c(0.5), c(10.0)]);
        for y in 0..60 {
            assert_eq!(m.density(y as f64).unwrap(), cm.density(y as f64).unwrap());
        }
    }

    #[test]
    fn label_redundant_mixture() {
        let c = Component::PoissonGamma { alpha: 2.0, beta: 0.7 };
        let m = MixtureSpec::new(vec![0.3, 0.7], vec![c, c]).unwrap();
        for y in 0..30 {
            let y = y as f64;
            assert!((m.density(y).unwrap() - c.pmf(y).unwrap()).abs() < 1e-15);
            let w = m.responsibilities(y).unwrap();
            assert!((w[0] - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in [
            Component::PoissonGamma { alpha: 10.0, beta: 1.0 },
            Component::PoissonLognormal { mu: 1.0, sigma2: 0.25 },
        ] {
            let m = MixtureSpec::single(c).unwrap();
            let xs = m.sample(40_000, &mut rng);
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (c.variance() / xs.len() as f64).sqrt();
            assert!((mean - c.mean()).abs() < 5.0 * sd, "{c:?} {mean}");
        }
    }

    #[test]
    fn serde_round_trip_and_validation() {
        let m = two_poisson();
        let s = serde_json::to_string(&m).unwrap();
        let back: MixtureSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"weights":[0.5,0.6],"components":[{"family":"poisson","lambda":1},{"family":"poisson","lambda":2}]}"#;
        assert!(serde_json::from_str::<MixtureSpec>(bad).is_err());
        let v = m.to_vector();
        assert_eq!(MixtureSpec::from_vector(Family::Poisson, 2, &v).unwrap(), m);
    }
}
