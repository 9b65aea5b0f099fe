//! Disparity generators, residual adjustment functions and mixing-weight integrands.
//!
//! Everything is evaluated at the Pearson residual `delta = g/f - 1`, so
//! `u = 1 + delta` is the density ratio. The perspective `b * G(a/b - 1)` is
//! exposed separately with closed forms that stay finite when `b` underflows.

use std::f64::consts::E;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BWHD_TAU: f64 = 1.0 / 3.0;
pub const DEFAULT_CR_ALPHA: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Divergence {
    /// Uncalibrated Kullback-Leibler, `G(d) = (1+d) ln(1+d)`. Its pi update is EM's.
    Kl,
    KlCalibrated,
    #[serde(rename = "hd")]
    Hellinger,
    Ned,
    Vned,
    Bwhd {
        #[serde(default = "default_tau")]
        tau: f64,
    },
    #[serde(rename = "cr")]
    CressieRead {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    #[serde(rename = "pd")]
    PowerDivergence {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
}

fn default_tau() -> f64 {
    DEFAULT_BWHD_TAU
}

fn default_alpha() -> f64 {
    DEFAULT_CR_ALPHA
}

/// Suprema of `|A|` and `|A'|` over `[-1, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RafEnvelope {
    pub a_max: f64,
    pub a_prime_max: f64,
}

impl Divergence {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Divergence::Bwhd { tau } if !(0.0..=1.0).contains(&tau) => Err(Error::Parameter(
                format!("bwhd tau must lie in [0, 1], got {tau}"),
            )),
            Divergence::CressieRead { alpha } | Divergence::PowerDivergence { alpha }
                if !alpha.is_finite() || alpha == 0.0 || alpha == -1.0 =>
            {
                Err(Error::Parameter(format!(
                    "power family alpha must be finite and not 0 or -1, got {alpha}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Divergence::Kl => "kl",
            Divergence::KlCalibrated => "kl_calibrated",
            Divergence::Hellinger => "hd",
            Divergence::Ned => "ned",
            Divergence::Vned => "vned",
            Divergence::Bwhd { .. } => "bwhd",
            Divergence::CressieRead { .. } => "cr",
            Divergence::PowerDivergence { .. } => "pd",
        }
    }

    /// Builds a generator from its string id and an optional parameter.
    pub fn from_id(id: &str, param: Option<f64>) -> Result<Self> {
        let d = match id.to_ascii_lowercase().as_str() {
            "kl" | "em" => Divergence::Kl,
            "kl_calibrated" | "klcal" | "kl-calibrated" => Divergence::KlCalibrated,
            "hd" | "hellinger" => Divergence::Hellinger,
            "ned" => Divergence::Ned,
            "vned" => Divergence::Vned,
            "bwhd" => Divergence::Bwhd { tau: param.unwrap_or(DEFAULT_BWHD_TAU) },
            "cr" => Divergence::CressieRead { alpha: param.unwrap_or(DEFAULT_CR_ALPHA) },
            "pd" => Divergence::PowerDivergence { alpha: param.unwrap_or(DEFAULT_CR_ALPHA) },
            other => return Err(Error::Parameter(format!("unknown divergence '{other}'"))),
        };
        d.validate()?;
        Ok(d)
    }

    /// True when `G(0) = G'(0) = 0` and `G''(0) = 1`.
    pub fn is_calibrated(&self) -> bool {
        !matches!(self, Divergence::Kl | Divergence::CressieRead { .. })
    }

    /// Calibrated counterpart with the same minimizer of the marginal divergence.
    pub fn calibrated(&self) -> Divergence {
        match *self {
            Divergence::Kl => Divergence::KlCalibrated,
            Divergence::CressieRead { alpha } => Divergence::PowerDivergence { alpha },
            d => d,
        }
    }

    /// Checked generator value.
    pub fn eval_generator(&self, delta: f64) -> Result<f64> {
        check_delta(delta)?;
        Ok(self.g(delta))
    }

    pub fn eval_raf(&self, delta: f64) -> Result<f64> {
        check_delta(delta)?;
        Ok(self.raf(delta))
    }

    pub fn eval_b_weight(&self, tau_ratio: f64) -> Result<f64> {
        if tau_ratio.is_nan() || tau_ratio < 0.0 {
            return Err(Error::Domain(format!("ratio must be >= 0, got {tau_ratio}")));
        }
        Ok(self.b_weight(tau_ratio))
    }

    /// `G(delta)` for `delta >= -1` (unchecked).
    pub fn g(&self, delta: f64) -> f64 {
        let u = 1.0 + delta;
        match *self {
            Divergence::Kl => xlogx(u),
            Divergence::KlCalibrated => xlogx(u) - delta,
            Divergence::Hellinger => {
                let s = u.sqrt() - 1.0;
                2.0 * s * s
            }
            Divergence::Ned => (-delta).exp() - 1.0 + delta,
            Divergence::Vned => {
                if u <= 0.0 {
                    1.0
                } else {
                    u * (1.0 - 1.0 / u).exp() - 2.0 * u + 1.0
                }
            }
            Divergence::Bwhd { tau } => {
                let d = tau * u.sqrt() + 1.0 - tau;
                if d <= 0.0 {
                    f64::INFINITY
                } else {
                    0.5 * delta * delta / (d * d)
                }
            }
            Divergence::CressieRead { alpha } => cr_g(u, alpha),
            Divergence::PowerDivergence { alpha } => cr_g(u, alpha) - delta / alpha,
        }
    }

    pub fn g_prime(&self, delta: f64) -> f64 {
        let u = 1.0 + delta;
        match *self {
            Divergence::Kl => u.ln() + 1.0,
            Divergence::KlCalibrated => u.ln(),
            Divergence::Hellinger => 2.0 * (1.0 - 1.0 / u.sqrt()),
            Divergence::Ned => 1.0 - (-delta).exp(),
            Divergence::Vned => {
                if u <= 0.0 {
                    -2.0
                } else {
                    (1.0 - 1.0 / u).exp() * (1.0 + 1.0 / u) - 2.0
                }
            }
            Divergence::Bwhd { tau } => {
                let s = u.sqrt();
                if tau > 0.0 && s == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let d = tau * s + 1.0 - tau;
                let dp = if tau == 0.0 { 0.0 } else { tau / (2.0 * s) };
                delta / (d * d) - delta * delta * dp / (d * d * d)
            }
            Divergence::CressieRead { alpha } => u.powf(alpha) / alpha,
            Divergence::PowerDivergence { alpha } => (u.powf(alpha) - 1.0) / alpha,
        }
    }

    pub fn g_second(&self, delta: f64) -> f64 {
        let u = 1.0 + delta;
        match *self {
            Divergence::Kl | Divergence::KlCalibrated => 1.0 / u,
            Divergence::Hellinger => u.powf(-1.5),
            Divergence::Ned => (-delta).exp(),
            Divergence::Vned => {
                if u <= 0.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / u).exp() / (u * u * u)
                }
            }
            Divergence::Bwhd { tau } => {
                let s = u.sqrt();
                if tau > 0.0 && s == 0.0 {
                    return f64::INFINITY;
                }
                let d = tau * s + 1.0 - tau;
                let (dp, dpp) = if tau == 0.0 {
                    (0.0, 0.0)
                } else {
                    (tau / (2.0 * s), -tau / (4.0 * u * s))
                };
                let d2 = d * d;
                let d3 = d2 * d;
                1.0 / d2 - 4.0 * delta * dp / d3 + 3.0 * delta * delta * dp * dp / (d2 * d2)
                    - delta * delta * dpp / d3
            }
            Divergence::CressieRead { alpha } | Divergence::PowerDivergence { alpha } => {
                u.powf(alpha - 1.0)
            }
        }
    }

    /// Residual adjustment function `A(delta) = (1+delta) G'(delta) - G(delta)`.
    pub fn raf(&self, delta: f64) -> f64 {
        let u = 1.0 + delta;
        match *self {
            Divergence::Kl => u,
            Divergence::KlCalibrated => delta,
            Divergence::Hellinger => 2.0 * (u.sqrt() - 1.0),
            Divergence::Ned => 2.0 - (2.0 + delta) * (-delta).exp(),
            Divergence::Vned => {
                if u <= 0.0 {
                    -1.0
                } else {
                    (1.0 - 1.0 / u).exp() - 1.0
                }
            }
            Divergence::Bwhd { .. } => {
                if u <= 0.0 {
                    -self.g(-1.0)
                } else {
                    u * self.g_prime(delta) - self.g(delta)
                }
            }
            Divergence::CressieRead { alpha } => {
                u.powf(alpha + 1.0) / (alpha + 1.0) + 1.0 / (alpha * (alpha + 1.0))
            }
            Divergence::PowerDivergence { alpha } => (u.powf(alpha + 1.0) - 1.0) / (alpha + 1.0),
        }
    }

    /// `A'(delta) = (1+delta) G''(delta)`, the estimating-equation weight.
    pub fn raf_prime(&self, delta: f64) -> f64 {
        let u = 1.0 + delta;
        match *self {
            Divergence::Kl | Divergence::KlCalibrated => 1.0,
            Divergence::Hellinger => 1.0 / u.sqrt(),
            Divergence::Ned => u * (-delta).exp(),
            Divergence::Vned => {
                if u <= 0.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / u).exp() / (u * u)
                }
            }
            Divergence::Bwhd { .. } => u * self.g_second(delta),
            Divergence::CressieRead { alpha } | Divergence::PowerDivergence { alpha } => {
                u.powf(alpha)
            }
        }
    }

    /// `B(tau) = G(tau-1) - tau G'(tau-1)`, which is `-A(tau-1)`.
    pub fn b_weight(&self, tau_ratio: f64) -> f64 {
        -self.raf(tau_ratio - 1.0)
    }

    /// `A(-1)`, the RAF at an empty cell. Finite for every generator except
    /// power families with `alpha < -1`.
    pub fn raf_at_empty(&self) -> f64 {
        self.raf(-1.0)
    }

    pub fn raf_envelope(&self) -> RafEnvelope {
        let inf = f64::INFINITY;
        let (a_max, a_prime_max) = match self {
            Divergence::Ned => (2.0, 1.0),
            Divergence::Vned => (E - 1.0, 4.0 / E),
            Divergence::Kl | Divergence::KlCalibrated => (inf, 1.0),
            _ => (inf, inf),
        };
        RafEnvelope { a_max, a_prime_max }
    }

    /// `lim_{u -> inf} G(u - 1) / u`, the cost per unit of target mass where
    /// the model puts none.
    fn slope_at_infinity(&self) -> f64 {
        match *self {
            Divergence::Kl | Divergence::KlCalibrated => f64::INFINITY,
            Divergence::Hellinger => 2.0,
            Divergence::Ned => 1.0,
            Divergence::Vned => E - 2.0,
            Divergence::Bwhd { tau } => {
                if tau > 0.0 {
                    0.5 / (tau * tau)
                } else {
                    f64::INFINITY
                }
            }
            Divergence::CressieRead { alpha } => {
                if alpha > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            Divergence::PowerDivergence { alpha } => {
                if alpha > 0.0 {
                    f64::INFINITY
                } else {
                    -1.0 / alpha
                }
            }
        }
    }

    /// Perspective `b * G(a/b - 1)` for `a, b >= 0`.
    ///
    /// At `b = 0` the limit `a * lim G(u-1)/u` is used, which may be infinite.
    pub fn perspective(&self, a: f64, b: f64) -> f64 {
        self.perspective_ln(a, b, b.ln())
    }

    /// Same as [`Divergence::perspective`] but takes `ln b` separately so that
    /// log-scale generators stay finite when `b` underflows to zero.
    pub fn perspective_ln(&self, a: f64, b: f64, ln_b: f64) -> f64 {
        if a <= 0.0 {
            // b * G(-1)
            return if b <= 0.0 { 0.0 } else { b * self.g(-1.0) };
        }
        match *self {
            Divergence::Kl => a * (a.ln() - ln_b),
            Divergence::KlCalibrated => a * (a.ln() - ln_b) - a + b,
            Divergence::CressieRead { alpha } => {
                let t = ((alpha + 1.0) * a.ln() - alpha * ln_b).exp();
                (t - b) / (alpha * (alpha + 1.0))
            }
            Divergence::PowerDivergence { alpha } => {
                let t = ((alpha + 1.0) * a.ln() - alpha * ln_b).exp();
                (t - b) / (alpha * (alpha + 1.0)) - (a - b) / alpha
            }
            _ if b <= 0.0 => a * self.slope_at_infinity(),
            Divergence::Hellinger => {
                let s = a.sqrt() - b.sqrt();
                2.0 * s * s
            }
            Divergence::Ned => b * (1.0 - a / b).exp() - 2.0 * b + a,
            Divergence::Vned => a * (1.0 - b / a).exp() - 2.0 * a + b,
            Divergence::Bwhd { tau } => {
                let d = tau * a.sqrt() + (1.0 - tau) * b.sqrt();
                let s = a - b;
                0.5 * s * s / (d * d)
            }
        }
    }

    /// `b * B(a/b) = -b * A(a/b - 1)` for `a, b >= 0`, with the `b -> 0` limit.
    pub fn b_perspective(&self, a: f64, b: f64) -> f64 {
        if b <= 0.0 {
            return match *self {
                Divergence::Kl | Divergence::KlCalibrated => -a,
                Divergence::CressieRead { alpha } | Divergence::PowerDivergence { alpha }
                    if alpha > 0.0 && a > 0.0 =>
                {
                    f64::NEG_INFINITY
                }
                _ => 0.0,
            };
        }
        match *self {
            Divergence::Kl => -a,
            Divergence::KlCalibrated => b - a,
            Divergence::Hellinger => 2.0 * b - 2.0 * (a * b).sqrt(),
            Divergence::Ned => (a + b) * (1.0 - a / b).exp() - 2.0 * b,
            Divergence::Vned => {
                if a <= 0.0 {
                    b
                } else {
                    b * (1.0 - (1.0 - b / a).exp())
                }
            }
            _ => -b * self.raf(a / b - 1.0),
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta.is_nan() || delta < -1.0 {
        Err(Error::Domain(format!("residual must be >= -1, got {delta}")))
    } else {
        Ok(())
    }
}

#[inline]
fn xlogx(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        u * u.ln()
    }
}

fn cr_g(u: f64, alpha: f64) -> f64 {
    (u.powf(alpha + 1.0) - 1.0) / (alpha * (alpha + 1.0))
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Divergence::Bwhd { tau } => write!(f, "bwhd({tau})"),
            Divergence::CressieRead { alpha } => write!(f, "cr({alpha})"),
            Divergence::PowerDivergence { alpha } => write!(f, "pd({alpha})"),
            d => f.write_str(d.id()),
        }
    }
}

impl FromStr for Divergence {
    type Err = Error;

    /// Accepts `id` or `id:param`, e.g. `hd`, `bwhd:0.5`, `cr:-0.5`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((id, p)) => {
                let v: f64 = p
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad divergence parameter '{p}'")))?;
                Divergence::from_id(id.trim(), Some(v))
            }
            None => Divergence::from_id(s.trim(), None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Divergence; 9] = [
        Divergence::Kl,
        Divergence::KlCalibrated,
        Divergence::Hellinger,
        Divergence::Ned,
        Divergence::Vned,
        Divergence::Bwhd { tau: DEFAULT_BWHD_TAU },
        Divergence::CressieRead { alpha: DEFAULT_CR_ALPHA },
        Divergence::PowerDivergence { alpha: DEFAULT_CR_ALPHA },
        Divergence::PowerDivergence { alpha: 1.5 },
    ];

    fn grid() -> Vec<f64> {
        (0..=1100).map(|i| -0.99 + i as f64 * 0.01).collect()
    }

    #[test]
    fn spot_values() {
        assert_eq!(Divergence::Hellinger.eval_generator(0.0).unwrap(), 0.0);
        assert!((Divergence::Hellinger.eval_generator(3.0).unwrap() - 2.0).abs() < 1e-15);
        let v = Divergence::KlCalibrated.eval_generator(1.0).unwrap();
        assert!((v - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-15);
        assert!((Divergence::KlCalibrated.eval_raf(0.7).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(Divergence::Ned.eval_raf(0.0).unwrap(), 0.0);
        assert!((Divergence::Hellinger.eval_raf(3.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((Divergence::Kl.eval_b_weight(2.5).unwrap() + 2.5).abs() < 1e-15);
        assert!(Divergence::KlCalibrated.eval_b_weight(1.0).unwrap().abs() < 1e-15);
        assert!(Divergence::Hellinger.eval_b_weight(1.0).unwrap().abs() < 1e-15);
        assert!((Divergence::Ned.g(-1.0) - (E - 2.0)).abs() < 1e-15);
        assert_eq!(Divergence::Kl.g(-1.0), 0.0);
    }

    #[test]
    fn domain_errors() {
        assert!(Divergence::Hellinger.eval_generator(-1.5).is_err());
        assert!(Divergence::Ned.eval_raf(f64::NAN).is_err());
        assert!(Divergence::Kl.eval_b_weight(-0.1).is_err());
        assert!(Divergence::from_id("cr", Some(0.0)).is_err());
        assert!(Divergence::from_id("pd", Some(-1.0)).is_err());
        assert!(Divergence::from_id("bwhd", Some(1.5)).is_err());
        assert!(Divergence::from_id("nope", None).is_err());
    }

    #[test]
    fn calibration_by_finite_differences() {
        let h = 1e-4;
        for d in ALL.iter().filter(|d| d.is_calibrated()) {
            assert!(d.g(0.0).abs() <= 1e-12, "{d}");
            let g1 = (d.g(1e-5) - d.g(-1e-5)) / 2e-5;
            let g2 = (d.g(h) - 2.0 * d.g(0.0) + d.g(-h)) / (h * h);
            assert!(g1.abs() <= 1e-9, "{d}: {g1}");
            assert!((g2 - 1.0).abs() <= 1e-6, "{d}: {g2}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for d in ALL {
            for &x in &[-0.8, -0.3, 0.2, 1.0, 4.0] {
                let fd1 = (d.g(x + h) - d.g(x - h)) / (2.0 * h);
                let fd2 = (d.g_prime(x + h) - d.g_prime(x - h)) / (2.0 * h);
                assert!((fd1 - d.g_prime(x)).abs() < 1e-6 * (1.0 + fd1.abs()), "{d} {x}");
                assert!((fd2 - d.g_second(x)).abs() < 1e-5 * (1.0 + fd2.abs()), "{d} {x}");
                let fda = (d.raf(x + h) - d.raf(x - h)) / (2.0 * h);
                assert!((fda - d.raf_prime(x)).abs() < 1e-5 * (1.0 + fda.abs()), "{d} {x}");
            }
        }
    }

    #[test]
    fn raf_identity_monotone_and_convexity() {
        for d in ALL {
            let mut prev = f64::NEG_INFINITY;
            for x in grid() {
                let a = d.raf(x);
                let direct = (1.0 + x) * d.g_prime(x) - d.g(x);
                assert!((a - direct).abs() <= 1e-10 * (1.0 + a.abs()), "{d} at {x}");
                assert!(a >= prev - 1e-12, "{d} raf not monotone at {x}");
                assert!(d.g_second(x) >= -1e-9, "{d} not convex at {x}");
                prev = a;
            }
            assert!(d.raf(0.0).abs() < 1e-15 || !d.is_calibrated());
        }
    }

    #[test]
    fn cr_half_shares_estimating_weight_with_hd() {
        let cr = Divergence::CressieRead { alpha: -0.5 };
        let pd = Divergence::PowerDivergence { alpha: -0.5 };
        for x in grid() {
            let hd = Divergence::Hellinger.raf_prime(x);
            assert!((cr.raf_prime(x) - hd).abs() < 1e-8);
            assert!((pd.raf_prime(x) - hd).abs() < 1e-8);
            // PD(-1/2) differs from HD by an affine term only.
            let diff = pd.g(x) - Divergence::Hellinger.g(x);
            let lin = (pd.g(1.0) - Divergence::Hellinger.g(1.0)) * x;
            assert!((diff - lin).abs() < 1e-10 * (1.0 + x.abs()), "{x}");
        }
    }

    #[test]
    fn perspective_agrees_with_definition() {
        for d in ALL {
            for &a in &[0.0, 1e-3, 0.2, 0.7, 3.0] {
                for &b in &[1e-4, 0.1, 0.5, 2.0] {
                    let want = b * d.g(a / b - 1.0);
                    let got = d.perspective(a, b);
                    assert!(
                        (want - got).abs() <= 1e-11 * (1.0 + want.abs()),
                        "{d} a={a} b={b}: {want} vs {got}"
                    );
                    let wb = b * d.b_weight(a / b);
                    let gb = d.b_perspective(a, b);
                    assert!((wb - gb).abs() <= 1e-11 * (1.0 + wb.abs()), "{d} a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn perspective_limits_at_zero_model_mass() {
        assert_eq!(Divergence::Hellinger.perspective(0.3, 0.0), 0.6);
        assert!((Divergence::Ned.perspective(0.3, 0.0) - 0.3).abs() < 1e-15);
        assert!((Divergence::Vned.perspective(0.3, 0.0) - 0.3 * (E - 2.0)).abs() < 1e-15);
        assert_eq!(Divergence::Kl.perspective(0.3, 0.0), f64::INFINITY);
        assert_eq!(Divergence::Kl.perspective(0.0, 0.0), 0.0);
        // the log form stays finite when b underflows
        let v = Divergence::Kl.perspective_ln(0.5, 0.0, -800.0);
        assert!((v - 0.5 * (0.5f64.ln() + 800.0)).abs() < 1e-10);
        // close to the limit from above
        let small = Divergence::Vned.perspective(0.3, 1e-12);
        assert!((small - Divergence::Vned.perspective(0.3, 0.0)).abs() < 1e-9);
    }

    #[test]
    fn envelopes_match_dense_grid() {
        for d in [Divergence::Ned, Divergence::Vned] {
            let env = d.raf_envelope();
            let mut a_sup = 0f64;
            let mut ap_sup = 0f64;
            for i in 0..=200_000 {
                let x = -1.0 + i as f64 * 5e-4;
                a_sup = a_sup.max(d.raf(x).abs());
                ap_sup = ap_sup.max(d.raf_prime(x).abs());
            }
            assert!(a_sup <= env.a_max + 1e-12, "{d}");
            assert!(env.a_max - d.raf(1e7).abs() < 1e-6, "{d}");
            assert!((ap_sup - env.a_prime_max).abs() < 1e-6, "{d}");
        }
        assert_eq!(Divergence::KlCalibrated.raf_envelope().a_max, f64::INFINITY);
        assert_eq!(Divergence::Hellinger.raf_envelope().a_max, f64::INFINITY);
    }

    #[test]
    fn parse_and_serde_round_trip() {
        for d in ALL {
            let s = serde_json::to_string(&d).unwrap();
            let back: Divergence = serde_json::from_str(&s).unwrap();
            assert_eq!(back, d);
        }
        let d: Divergence = "bwhd:0.5".parse().unwrap();
        assert_eq!(d, Divergence::Bwhd { tau: 0.5 });
        let d: Divergence = serde_json::from_str(r#"{"kind":"cr"}"#).unwrap();
        assert_eq!(d, Divergence::CressieRead { alpha: -0.5 });
        assert!(serde_json::from_str::<Divergence>(r#"{"kind":"xx"}"#).is_err());
    }
}
