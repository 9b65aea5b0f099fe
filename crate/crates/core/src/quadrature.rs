//! Gauss-Hermite rules for the weight `exp(-t^2)`.

use std::sync::OnceLock;

pub const DEFAULT_GH_NODES: usize = 60;

#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `ln w_i + t_i^2`, used when integrating a function that is not
    /// multiplied by the Gaussian weight.
    ln_scaled: Vec<f64>,
}

impl GaussHermite {
    /// Computes an `n`-point rule by Newton iteration on the orthonormal
    /// Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "need at least one node");
        const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let m = n.div_ceil(2);
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 3e-14 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let ln_scaled = x.iter().zip(&w).map(|(t, wi)| wi.ln() + t * t).collect();
        GaussHermite { nodes: x, weights: w, ln_scaled }
    }

    /// The process-wide default rule.
    pub fn default_rule() -> &'static GaussHermite {
        static RULE: OnceLock<GaussHermite> = OnceLock::new();
        RULE.get_or_init(|| GaussHermite::new(DEFAULT_GH_NODES))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `ln ∫ exp(l(x)) dx` for a concave log-integrand with mode `mode` and
    /// curvature `-l''(mode) = curv`. Nodes are centred and scaled at the mode.
    pub fn ln_integral_laplace_centred<F: Fn(f64) -> f64>(
        &self,
        l: F,
        mode: f64,
        curv: f64,
    ) -> f64 {
        let s = std::f64::consts::SQRT_2 / curv.sqrt();
        let l0 = l(mode);
        let mut acc = 0.0;
        for (t, lw) in self.nodes.iter().zip(&self.ln_scaled) {
            acc += (lw + l(mode + s * t) - l0).exp();
        }
        l0 + (s * acc).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_sqrt_pi_and_moments_match() {
        for n in [1usize, 2, 5, 20, 60, 100] {
            let r = GaussHermite::new(n);
            let s: f64 = r.weights().iter().sum();
            assert!((s - std::f64::consts::PI.sqrt()).abs() < 1e-12, "n={n}");
            if n >= 3 {
                // ∫ t^2 e^{-t^2} = sqrt(pi)/2, ∫ t^4 e^{-t^2} = 3 sqrt(pi)/4
                let m2: f64 = r.nodes().iter().zip(r.weights()).map(|(t, w)| w * t * t).sum();
                let m4: f64 =
                    r.nodes().iter().zip(r.weights()).map(|(t, w)| w * t.powi(4)).sum();
                let sp = std::f64::consts::PI.sqrt();
                assert!((m2 - sp / 2.0).abs() < 1e-12, "n={n}");
                assert!((m4 - 3.0 * sp / 4.0).abs() < 1e-11, "n={n}");
            }
        }
    }

    #[test]
    fn two_point_rule_is_exact() {
        let r = GaussHermite::new(2);
        let a = 0.5f64.sqrt();
        assert!((r.nodes()[0] - a).abs() < 1e-14);
        assert!((r.weights()[0] - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn centred_rule_integrates_a_gaussian() {
        let r = GaussHermite::default_rule();
        // ∫ exp(-(x-3)^2 / (2*0.25)) dx = sqrt(2 pi 0.25)
        let v = r.ln_integral_laplace_centred(|x| -(x - 3.0) * (x - 3.0) / 0.5, 3.0, 4.0);
        assert!((v - (2.0 * std::f64::consts::PI * 0.25).sqrt().ln()).abs() < 1e-13);
    }
}
