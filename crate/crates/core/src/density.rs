//! Nonparametric plug-in estimates: empirical pmf, discrete associated kernels
//! and the Epanechnikov KDE.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::mixtures::MixtureSpec;

/// Tail mass dropped from infinite-support kernel rows before renormalizing.
pub const KERNEL_TAIL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityEstimate {
    /// Masses on the consecutive integers `start, start+1, ...`.
    DiscretePmf { start: i64, mass: Vec<f64> },
    /// Epanechnikov kernel density estimate.
    ContinuousKde { sample: Vec<f64>, bandwidth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscreteKernel {
    Empirical,
    Triangular { a: u32 },
    Poisson,
    Binomial,
    #[serde(rename = "negbinomial")]
    NegBinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum Bandwidth {
    /// `c = c0 * n^(-2/5)`.
    Moment { c0: f64 },
    Fixed { c: f64 },
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Moment { c0: 1.0 }
    }
}

impl Bandwidth {
    pub fn value(&self, n: usize) -> f64 {
        match *self {
            Bandwidth::Moment { c0 } => moment_bandwidth(n, c0),
            Bandwidth::Fixed { c } => c,
        }
    }
}

pub fn moment_bandwidth(n: usize, c0: f64) -> f64 {
    c0 * (n.max(1) as f64).powf(-0.4)
}

/// Normal-reference bandwidth for the Epanechnikov kernel,
/// `2.345 * min(sd, IQR/1.349) * n^(-1/5)`.
pub fn epanechnikov_bandwidth(data: &[f64]) -> Result<f64> {
    if data.len() < 2 {
        return Err(Error::EmptyData);
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let sd = (data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut s = data.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (s.len() - 1) as f64;
        let i = h.floor() as usize;
        let j = (i + 1).min(s.len() - 1);
        s[i] + (h - i as f64) * (s[j] - s[i])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.349) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::DegenerateSupport("data have zero spread".into()));
    }
    Ok(2.345 * spread * n.powf(-0.2))
}

impl DensityEstimate {
    /// A discrete estimate from explicit masses (renormalized if needed).
    pub fn from_masses(start: i64, mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::EmptyData);
        }
        if mass.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::Parameter("masses must be finite and nonnegative".into()));
        }
        let s: f64 = mass.iter().sum();
        if !(s > 0.0) {
            return Err(Error::DegenerateSupport("total mass is zero".into()));
        }
        let mass = if (s - 1.0).abs() <= 1e-15 { mass } else { mass.iter().map(|m| m / s).collect() };
        Ok(DensityEstimate::DiscretePmf { start, mass })
    }

    /// The model pmf of a count mixture on its support window.
    pub fn from_model(truth: &MixtureSpec, tail_mass: f64) -> Result<Self> {
        let ymax = truth.support_window(tail_mass)?;
        DensityEstimate::from_masses(0, truth.pmf_window(ymax))
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, DensityEstimate::DiscretePmf { .. })
    }

    /// Inclusive integer support of a discrete estimate.
    pub fn support(&self) -> Option<(i64, i64)> {
        match self {
            DensityEstimate::DiscretePmf { start, mass } => {
                Some((*start, start + mass.len() as i64 - 1))
            }
            DensityEstimate::ContinuousKde { .. } => None,
        }
    }

    pub fn pmf(&self, y: i64) -> f64 {
        match self {
            DensityEstimate::DiscretePmf { start, mass } => {
                let i = y - start;
                if i < 0 || i as usize >= mass.len() {
                    0.0
                } else {
                    mass[i as usize]
                }
            }
            DensityEstimate::ContinuousKde { .. } => 0.0,
        }
    }

    /// Density at `x`; for discrete estimates the pmf at integer `x`, else 0.
    pub fn density(&self, x: f64) -> f64 {
        match self {
            DensityEstimate::DiscretePmf { .. } => {
                if x.fract() == 0.0 {
                    self.pmf(x as i64)
                } else {
                    0.0
                }
            }
            DensityEstimate::ContinuousKde { sample, bandwidth } => {
                epanechnikov_sum(sample, *bandwidth, x)
            }
        }
    }

    /// Range of the KDE's support, `[min - c, max + c]`.
    pub fn kde_range(&self) -> Option<(f64, f64)> {
        match self {
            DensityEstimate::ContinuousKde { sample, bandwidth } => {
                Some((sample[0] - bandwidth, sample[sample.len() - 1] + bandwidth))
            }
            _ => None,
        }
    }

    /// CSV with header `y,mass` for discrete estimates.
    pub fn to_csv(&self) -> Result<String> {
        match self {
            DensityEstimate::DiscretePmf { start, mass } => {
                let mut s = String::from("y,mass\n");
                for (i, m) in mass.iter().enumerate() {
                    s.push_str(&format!("{},{:e}\n", start + i as i64, m));
                }
                Ok(s)
            }
            DensityEstimate::ContinuousKde { .. } => {
                Err(Error::Unsupported("CSV dump of a continuous estimate".into()))
            }
        }
    }
}

/// `g_n(y) = count(y) / n` on `[min, max]`.
pub fn empirical_pmf(data: &[i64]) -> Result<DensityEstimate> {
    let (&lo, &hi) = match (data.iter().min(), data.iter().max()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::EmptyData),
    };
    let mut mass = vec![0.0; (hi - lo + 1) as usize];
    for &y in data {
        mass[(y - lo) as usize] += 1.0;
    }
    let n = data.len() as f64;
    for m in &mut mass {
        *m /= n;
    }
    Ok(DensityEstimate::DiscretePmf { start: lo, mass })
}

fn check_kernel(kernel: DiscreteKernel, c: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Parameter(format!("bandwidth must be positive, got {c}")));
    }
    match kernel {
        DiscreteKernel::Binomial if c > 1.0 => Err(Error::Parameter(format!(
            "binomial kernel needs c in (0, 1], got {c}"
        ))),
        DiscreteKernel::Triangular { a: 0 } => {
            Err(Error::Parameter("triangular kernel needs a >= 1".into()))
        }
        _ => Ok(()),
    }
}

/// Unnormalized log of `K_{center,c}(x)` for count kernels; `-inf` outside support.
fn ln_kernel(kernel: DiscreteKernel, center: i64, c: f64, x: i64) -> f64 {
    let (y, xf) = (center as f64, x as f64);
    if x < 0 && !matches!(kernel, DiscreteKernel::Triangular { .. } | DiscreteKernel::Empirical) {
        return f64::NEG_INFINITY;
    }
    match kernel {
        DiscreteKernel::Empirical => {
            if x == center {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        DiscreteKernel::Triangular { a } => {
            let d = (x - center).unsigned_abs();
            if d > a as u64 {
                return f64::NEG_INFINITY;
            }
            let a = a as f64;
            let p = (2.0 * a + 1.0) * (a + 1.0).powf(c)
                - 2.0 * (1..=a as u64).map(|k| (k as f64).powf(c)).sum::<f64>();
            let num = (a + 1.0).powf(c) - (d as f64).powf(c);
            (num / p).ln()
        }
        DiscreteKernel::Poisson => {
            let m = y + c;
            xf * m.ln() - m - ln_gamma(xf + 1.0)
        }
        DiscreteKernel::Binomial => {
            let trials = center + 1;
            if x > trials {
                return f64::NEG_INFINITY;
            }
            let t = trials as f64;
            let p = (y + c) / t;
            let q = (1.0 - c) / t;
            ln_choose(t, xf) + xlny(xf, p) + xlny(t - xf, q)
        }
        DiscreteKernel::NegBinomial => {
            let r = y + 1.0;
            let p = r / (2.0 * y + 1.0 + c);
            let q = (y + c) / (2.0 * y + 1.0 + c);
            ln_gamma(r + xf) - ln_gamma(r) - ln_gamma(xf + 1.0) + r * p.ln() + xlny(xf, q)
        }
    }
}

fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn ln_choose(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

fn kernel_center_ok(kernel: DiscreteKernel, center: i64) -> Result<()> {
    if center < 0 && !matches!(kernel, DiscreteKernel::Triangular { .. } | DiscreteKernel::Empirical)
    {
        return Err(Error::Domain(format!("kernel center {center} must be nonnegative")));
    }
    Ok(())
}

/// `K_{center,c}(x)` as a probability. Infinite-support kernels are truncated
/// at tail mass [`KERNEL_TAIL`] and renormalized, so this equals the value in
/// [`kernel_row`].
pub fn discrete_kernel_pmf(kernel: DiscreteKernel, center: i64, c: f64, x: i64) -> Result<f64> {
    check_kernel(kernel, c)?;
    kernel_center_ok(kernel, center)?;
    let (start, row) = kernel_row(kernel, center, c)?;
    let i = x - start;
    Ok(if i < 0 || i as usize >= row.len() { 0.0 } else { row[i as usize] })
}

/// The full kernel pmf centred at `center` as `(first x, masses)`.
pub fn kernel_row(kernel: DiscreteKernel, center: i64, c: f64) -> Result<(i64, Vec<f64>)> {
    check_kernel(kernel, c)?;
    kernel_center_ok(kernel, center)?;
    match kernel {
        DiscreteKernel::Empirical => Ok((center, vec![1.0])),
        DiscreteKernel::Triangular { a } => {
            let a = a as i64;
            // triangular rows are not restricted to x >= 0
            let ap = a as f64;
            let p = (2.0 * ap + 1.0) * (ap + 1.0).powf(c)
                - 2.0 * (1..=a).map(|k| (k as f64).powf(c)).sum::<f64>();
            let row = (-a..=a)
                .map(|d| ((ap + 1.0).powf(c) - (d.unsigned_abs() as f64).powf(c)) / p)
                .collect();
            Ok((center - a, row))
        }
        DiscreteKernel::Binomial => {
            let row: Vec<f64> =
                (0..=center + 1).map(|x| ln_kernel(kernel, center, c, x).exp()).collect();
            Ok((0, normalize(row)))
        }
        DiscreteKernel::Poisson | DiscreteKernel::NegBinomial => {
            let mut row = Vec::new();
            let mut cum = 0.0;
            let mut x = 0i64;
            loop {
                let p = ln_kernel(kernel, center, c, x).exp();
                row.push(p);
                cum += p;
                if x > center && 1.0 - cum < KERNEL_TAIL {
                    break;
                }
                if x > center + 100_000 {
                    break;
                }
                x += 1;
            }
            Ok((0, normalize(row)))
        }
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    for x in &mut v {
        *x /= s;
    }
    v
}

/// Mean and variance of the kernel centred at `center`.
pub fn kernel_moments(kernel: DiscreteKernel, center: i64, c: f64) -> Result<(f64, f64)> {
    let (start, row) = kernel_row(kernel, center, c)?;
    let mean: f64 = row.iter().enumerate().map(|(i, p)| p * (start + i as i64) as f64).sum();
    let var: f64 = row
        .iter()
        .enumerate()
        .map(|(i, p)| p * ((start + i as i64) as f64 - mean).powi(2))
        .sum();
    Ok((mean, var))
}

/// `g_n(y) = (1/n) sum_i K_{y,c}(Y_i)` over a window covering the data and
/// the kernel reach, renormalized to a proper pmf.
pub fn smoothed_pmf(data: &[i64], kernel: DiscreteKernel, c: f64) -> Result<DensityEstimate> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if kernel == DiscreteKernel::Empirical {
        return empirical_pmf(data);
    }
    check_kernel(kernel, c)?;
    let mut counts: BTreeMap<i64, f64> = BTreeMap::new();
    for &y in data {
        *counts.entry(y).or_insert(0.0) += 1.0;
    }
    let lo_data = *counts.keys().next().expect("nonempty");
    let hi_data = *counts.keys().next_back().expect("nonempty");
    let n = data.len() as f64;
    let (start, mass) = match kernel {
        DiscreteKernel::Triangular { a } => {
            let a = a as i64;
            let lo = if lo_data >= 0 { (lo_data - a).max(0) } else { lo_data - a };
            let hi = hi_data + a;
            let mut mass = vec![0.0; (hi - lo + 1) as usize];
            for (&x, &cnt) in &counts {
                for y in (x - a).max(lo)..=(x + a) {
                    let v = ln_kernel(kernel, y, c, x).exp();
                    mass[(y - lo) as usize] += cnt * v / n;
                }
            }
            (lo, mass)
        }
        _ => {
            if lo_data < 0 {
                return Err(Error::Domain("count kernels need nonnegative data".into()));
            }
            let mut mass = Vec::new();
            let mut y = 0i64;
            loop {
                let g: f64 = counts
                    .iter()
                    .map(|(&x, &cnt)| cnt * ln_kernel(kernel, y, c, x).exp())
                    .sum::<f64>()
                    / n;
                mass.push(g);
                if y > hi_data + 2 && g < 1e-14 {
                    break;
                }
                if y > hi_data + 1_000_000 {
                    break;
                }
                y += 1;
            }
            (0, mass)
        }
    };
    // trim numerically empty tails then renormalize
    let first = mass.iter().position(|&m| m > 0.0).unwrap_or(0);
    let last = mass.iter().rposition(|&m| m > 0.0).unwrap_or(0);
    DensityEstimate::from_masses(start + first as i64, mass[first..=last].to_vec())
}

/// Epanechnikov KDE; the sample is stored sorted.
pub fn continuous_kde(data: &[f64], bandwidth: f64) -> Result<DensityEstimate> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::Parameter(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite observation".into()));
    }
    let mut sample = data.to_vec();
    sample.sort_by(f64::total_cmp);
    Ok(DensityEstimate::ContinuousKde { sample, bandwidth })
}

fn epanechnikov_sum(sorted: &[f64], c: f64, x: f64) -> f64 {
    let lo = sorted.partition_point(|&v| v < x - c);
    let hi = sorted.partition_point(|&v| v <= x + c);
    let mut s = 0.0;
    for &v in &sorted[lo..hi] {
        let u = (x - v) / c;
        s += 0.75 * (1.0 - u * u);
    }
    s / (sorted.len() as f64 * c)
}

/// Integrated squared error `sum_y (g_n(y) - f(y))^2` over the union window.
pub fn ise(estimate: &DensityEstimate, truth: &MixtureSpec) -> Result<f64> {
    let (lo, hi) = match estimate.support() {
        Some(s) => s,
        None => return Err(Error::Unsupported("ISE of a continuous estimate".into())),
    };
    if !truth.family().is_count() {
        return Err(Error::SupportMismatch(format!(
            "discrete estimate against {} truth",
            truth.family()
        )));
    }
    let ymax = truth.support_window(1e-14)?.max(hi.max(0) as usize);
    let f = truth.pmf_window(ymax);
    let mut s = 0.0;
    for y in lo.min(0)..=(ymax as i64) {
        let fy = if y >= 0 { f[y as usize] } else { 0.0 };
        s += (estimate.pmf(y) - fy).powi(2);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixtures::Component;

    #[test]
    fn empirical_examples() {
        let g = empirical_pmf(&[1, 1, 3]).unwrap();
        assert!((g.pmf(1) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(g.pmf(2), 0.0);
        assert!((g.pmf(3) - 1.0 / 3.0).abs() < 1e-15);
        let g = empirical_pmf(&[5]).unwrap();
        assert_eq!(g.support(), Some((5, 5)));
        assert_eq!(g.pmf(5), 1.0);
        let g = empirical_pmf(&(0..10).collect::<Vec<_>>()).unwrap();
        assert!((0..10).all(|y| (g.pmf(y) - 0.1).abs() < 1e-15));
        assert!(matches!(empirical_pmf(&[]), Err(Error::EmptyData)));
    }

    #[test]
    fn triangular_kernel_values() {
        let k = DiscreteKernel::Triangular { a: 1 };
        let p = 3.0 * 2f64.powf(0.3) - 2.0;
        let mid = discrete_kernel_pmf(k, 7, 0.3, 7).unwrap();
        assert!((mid - 2f64.powf(0.3) / p).abs() < 1e-15);
        assert!((mid - 0.72702).abs() < 1e-5);
        let side = discrete_kernel_pmf(k, 7, 0.3, 8).unwrap();
        assert!((side - 0.13649).abs() < 1e-5);
        assert!((mid + 2.0 * side - 1.0).abs() < 1e-15);
        assert_eq!(discrete_kernel_pmf(k, 7, 0.3, 9).unwrap(), 0.0);
    }

    #[test]
    fn kernel_parameter_errors() {
        assert!(discrete_kernel_pmf(DiscreteKernel::Binomial, 3, 1.5, 2).is_err());
        assert!(discrete_kernel_pmf(DiscreteKernel::Poisson, 3, 0.0, 2).is_err());
        assert!(discrete_kernel_pmf(DiscreteKernel::Poisson, -1, 0.1, 2).is_err());
    }

    #[test]
    fn rows_sum_to_one() {
        for k in [
            DiscreteKernel::Triangular { a: 1 },
            DiscreteKernel::Triangular { a: 4 },
            DiscreteKernel::Poisson,
            DiscreteKernel::Binomial,
            DiscreteKernel::NegBinomial,
        ] {
            for center in [0i64, 1, 5, 40] {
                for c in [0.05, 0.3, 1.0] {
                    let (_, row) = kernel_row(k, center, c).unwrap();
                    let s: f64 = row.iter().sum();
                    assert!((s - 1.0).abs() < 1e-9, "{k:?} {center} {c}");
                }
            }
        }
    }

    #[test]
    fn smoothed_examples() {
        let data = [0i64, 2, 2, 5, 9];
        assert_eq!(
            smoothed_pmf(&data, DiscreteKernel::Empirical, 0.7).unwrap(),
            empirical_pmf(&data).unwrap()
        );
        let g = smoothed_pmf(&[5], DiscreteKernel::Triangular { a: 1 }, 0.3).unwrap();
        assert_eq!(g.support(), Some((4, 6)));
        let s: f64 = (4..=6).map(|y| g.pmf(y)).sum();
        assert!((s - 1.0).abs() < 1e-12);
        for k in [DiscreteKernel::Poisson, DiscreteKernel::Binomial, DiscreteKernel::NegBinomial] {
            let g = smoothed_pmf(&data, k, 0.2).unwrap();
            let (lo, hi) = g.support().unwrap();
            let s: f64 = (lo..=hi).map(|y| g.pmf(y)).sum();
            assert!((s - 1.0).abs() < 1e-9 && lo >= 0, "{k:?}");
        }
    }

    #[test]
    fn kde_examples() {
        let g = continuous_kde(&[0.0], 1.0).unwrap();
        assert!((g.density(0.0) - 0.75).abs() < 1e-15);
        assert_eq!(g.density(1.5), 0.0);
        let g = continuous_kde(&[-1.0, 1.0], 0.8).unwrap();
        for x in [0.1, 0.5, 1.3] {
            assert_eq!(g.density(x), g.density(-x));
        }
        let g = continuous_kde(&[0.3, 1.1, 1.7, 4.0], 0.9).unwrap();
        let h = 1e-4;
        let s: f64 = (0..=80_000).map(|i| g.density(-1.0 + h * i as f64) * h).sum();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
        assert!(continuous_kde(&[1.0], 0.0).is_err());
    }

    #[test]
    fn ise_examples() {
        let truth = MixtureSpec::single(Component::Poisson { lambda: 10.0 }).unwrap();
        let g = DensityEstimate::from_model(&truth, 1e-14).unwrap();
        assert!(ise(&g, &truth).unwrap() < 1e-20);
        let pm = empirical_pmf(&[0]).unwrap();
        let f = truth.pmf_window(100);
        let want = 1.0 + f.iter().map(|x| x * x).sum::<f64>() - 2.0 * f[0];
        let got = ise(&pm, &truth).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 1.089_689_5).abs() < 1e-6);
    }

    #[test]
    fn bandwidth_rules() {
        assert!((moment_bandwidth(100, 1.0) - 100f64.powf(-0.4)).abs() < 1e-15);
        let h = epanechnikov_bandwidth(&[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(h > 0.0);
    }
}
