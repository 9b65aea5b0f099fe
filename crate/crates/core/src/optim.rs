//! Derivative-free minimizers used by the M-step.

use serde::{Deserialize, Serialize};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Iteration cap for golden-section search.
    pub golden_max_iter: usize,
    /// Interval width at which golden-section stops (in the search variable).
    pub golden_tol: f64,
    /// Coarse grid points scanned before golden-section refinement.
    pub golden_grid: usize,
    /// Function-evaluation cap for Nelder-Mead.
    pub nm_max_evals: usize,
    /// Initial simplex step (in the transformed parameters).
    pub nm_step: f64,
    /// Stop when the simplex spread in f falls below this.
    pub nm_ftol: f64,
    /// Stop when the simplex diameter falls below this.
    pub nm_xtol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            golden_max_iter: 200,
            golden_tol: 1e-10,
            golden_grid: 41,
            nm_max_evals: 600,
            nm_step: 0.1,
            nm_ftol: 1e-13,
            nm_xtol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Golden-section search on `[a, b]`, assuming `f` is unimodal there.
pub fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_iter: usize,
) -> Minimum {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evals = 2;
    let mut converged = false;
    for _ in 0..max_iter {
        if (b - a).abs() <= tol {
            converged = true;
            break;
        }
        // ties go left so the smaller argument wins
        if fc <= fd || fd.is_nan() {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        evals += 1;
    }
    let (x, fx) = if fc <= fd { (c, fc) } else { (d, fd) };
    Minimum { x: vec![x], fx, evals, converged }
}

/// Scans a uniform grid on `[a, b]`, then refines around the best grid point
/// with golden-section search. Picks the leftmost grid minimizer on ties.
pub fn grid_golden<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    grid: usize,
    tol: f64,
    max_iter: usize,
) -> Minimum {
    let grid = grid.max(3);
    let h = (b - a) / (grid - 1) as f64;
    let mut best = 0usize;
    let mut best_f = f64::INFINITY;
    for i in 0..grid {
        let v = f(a + h * i as f64);
        if v < best_f {
            best_f = v;
            best = i;
        }
    }
    let lo = a + h * best.saturating_sub(1) as f64;
    let hi = (a + h * (best + 1) as f64).min(b);
    let mut m = golden_section(&mut f, lo, hi, tol, max_iter);
    m.evals += grid;
    if best_f < m.fx {
        m.x = vec![a + h * best as f64];
        m.fx = best_f;
    }
    m
}

/// Nelder-Mead with standard coefficients. Non-finite values count as `+inf`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    ftol: f64,
    xtol: f64,
    max_evals: usize,
) -> Minimum {
    let n = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut vals: Vec<f64> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    vals.push(eval(x0));
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += if p[i].abs() > 1.0 { step * p[i].abs() } else { step };
        vals.push(eval(&p));
        pts.push(p);
    }
    let mut evals = n + 1;
    let mut converged = false;
    let mut order: Vec<usize> = (0..=n).collect();
    while evals < max_evals {
        order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        let (ib, iw, isw) = (order[0], order[n], order[n - 1]);
        let spread = vals[iw] - vals[ib];
        let diam = pts
            .iter()
            .map(|p| p.iter().zip(&pts[ib]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread.abs() <= ftol * (1.0 + vals[ib].abs()) && diam <= xtol
            || (spread == 0.0 && vals[ib].is_finite() && diam <= xtol * 1e3)
        {
            converged = true;
            break;
        }
        let mut centroid = vec![0.0; n];
        for &i in order.iter().take(n) {
            for (c, v) in centroid.iter_mut().zip(&pts[i]) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&pts[iw]).map(|(c, w)| c + t * (w - c)).collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        evals += 1;
        if fr < vals[ib] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            evals += 1;
            if fe < fr {
                pts[iw] = xe;
                vals[iw] = fe;
            } else {
                pts[iw] = xr;
                vals[iw] = fr;
            }
        } else if fr < vals[isw] {
            pts[iw] = xr;
            vals[iw] = fr;
        } else {
            let (xc, fc) = if fr < vals[iw] {
                let x = along(-0.5);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(&x);
                (x, v)
            };
            evals += 1;
            if fc < vals[iw].min(fr) {
                pts[iw] = xc;
                vals[iw] = fc;
            } else {
                let best = pts[ib].clone();
                for i in 0..=n {
                    if i == ib {
                        continue;
                    }
                    for (p, b) in pts[i].iter_mut().zip(&best) {
                        *p = b + 0.5 * (*p - b);
                    }
                    vals[i] = eval(&pts[i]);
                    evals += 1;
                }
            }
        }
    }
    let ib = (0..=n).min_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap_or(0);
    Minimum { x: pts[ib].clone(), fx: vals[ib], evals, converged }
}

/// Nelder-Mead followed by one restart from the returned point, which
/// guards against a prematurely collapsed simplex.
pub fn nelder_mead_restarted<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> Minimum {
    let first = nelder_mead(&mut f, x0, cfg.nm_step, cfg.nm_ftol, cfg.nm_xtol, cfg.nm_max_evals);
    let second = nelder_mead(
        &mut f,
        &first.x,
        cfg.nm_step * 0.1,
        cfg.nm_ftol,
        cfg.nm_xtol,
        cfg.nm_max_evals / 2,
    );
    let evals = first.evals + second.evals;
    if second.fx < first.fx {
        Minimum { evals, ..second }
    } else {
        Minimum { evals, ..first }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_minimum() {
        let m = golden_section(|x| (x - 1.3) * (x - 1.3) + 2.0, -5.0, 5.0, 1e-10, 200);
        assert!(m.converged);
        assert!((m.x[0] - 1.3).abs() < 1e-7);
        assert!((m.fx - 2.0).abs() < 1e-15);
    }

    #[test]
    fn grid_golden_prefers_global_basin() {
        // two wells, the right one deeper
        let f = |x: f64| ((x + 2.0).powi(2)).min((x - 3.0).powi(2) - 1.0);
        let m = grid_golden(f, -5.0, 5.0, 41, 1e-10, 200);
        assert!((m.x[0] - 3.0).abs() < 1e-7, "{:?}", m);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead_restarted(f, &[-1.2, 1.0], &OptimizerConfig {
            nm_max_evals: 4000,
            ..Default::default()
        });
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m);
    }

    #[test]
    fn nelder_mead_treats_nan_as_infinite() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.5).powi(2) + x[1] * x[1] };
        let m = nelder_mead(f, &[1.0, 1.0], 0.3, 1e-14, 1e-10, 2000);
        assert!((m.x[0] - 0.5).abs() < 1e-5 && m.x[1].abs() < 1e-5);
    }
}
