//! Closed-form bounds, asymptotic slopes and the infinite-network auxiliaries.

use crate::error::{Error, Result};
use std::f64::consts::LOG2_E;

/// Parameters shared by the asymptotic evaluators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub block_len: f64,
    pub antennas: usize,
    pub alpha: f64,
    pub overhead: f64,
    /// Fraction of the uplink rate spent on feedback.
    pub uplink_fraction: f64,
    pub density: f64,
    pub kappa_ul: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.block_len >= 1.0) {
            return Err(Error::domain("T", "at least 1", self.block_len));
        }
        if self.antennas < 1 {
            return Err(Error::domain("L", "at least 1", self.antennas as f64));
        }
        if !(self.alpha > 2.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if self.overhead != 0.0 && self.overhead != 2.0 {
            return Err(Error::domain("Q", "0 or 2", self.overhead));
        }
        if !(self.uplink_fraction > 0.0 && self.uplink_fraction <= 1.0) {
            return Err(Error::domain("r", "in (0, 1]", self.uplink_fraction));
        }
        Ok(())
    }
}

/// Downlink bits gained per feedback bit in the interference-limited regime.
pub fn th1_exchange_ratio(block_len: f64, antennas: usize) -> f64 {
    block_len / antennas as f64
}

/// Multiplexing gain when feedback takes a fraction `r` of the uplink.
pub fn th1_multiplexing(r: f64, block_len: f64, antennas: usize) -> f64 {
    (r * block_len / antennas as f64).min(1.0)
}

/// Exponent of the doubly-logarithmic growth in an infinite network.
pub fn th2_exponent(alpha: f64) -> Result<f64> {
    if !(alpha > 2.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    Ok(alpha / 2.0 - 1.0)
}

/// Approximate downlink-per-feedback slope with `L` fed antennas.
pub fn prop1_slope(alpha: f64, overhead: f64, block_len: f64, antennas: usize) -> f64 {
    let a = alpha * LOG2_E;
    (1.0 - 2.0 / alpha) * (block_len / antennas as f64) * a / (a + 2.0 * overhead)
}

/// High-SNR rate with all `L` strongest antennas fed at total rate `F`.
pub fn breve_rate(
    rate: f64,
    gain_row: &[f64],
    antennas: usize,
    overhead: f64,
    block_len: f64,
    diag: &[f64],
) -> Result<f64> {
    if diag.is_empty() {
        return Err(Error::Empty("diagonal samples"));
    }
    let mut g: Vec<f64> = gain_row.iter().copied().filter(|&x| x > 0.0).collect();
    if g.len() < antennas || antennas == 0 {
        return Err(Error::Dimension(format!(
            "{antennas} antennas requested, {} with positive gain",
            g.len()
        )));
    }
    g.sort_by(|a, b| b.total_cmp(a));
    let l = antennas as f64;
    let mean_log: f64 = g[..antennas].iter().map(|x| x.log2()).sum::<f64>() / l;
    // log₂ of the interference term; kept in the log domain so large budgets do not underflow.
    let log_denom = l.log2() + overhead + mean_log - rate * block_len / l;
    let rate_of = |d: f64| {
        let t = d.log2() - log_denom;
        if t > 60.0 {
            t
        } else {
            (1.0 + t.exp2()).log2()
        }
    };
    Ok(diag.iter().map(|&d| rate_of(d)).sum::<f64>() / diag.len() as f64)
}

const ENVELOPE_GRID: usize = 64;
const ENVELOPE_MIN_ETA: f64 = 1e-4;

/// `sup_η (1−η)·f(0) + η·f(F/η)` over `η ∈ [10⁻⁴, 1]`.
pub fn time_sharing_envelope(f: impl Fn(f64) -> f64, rate: f64) -> f64 {
    let f0 = f(0.0);
    if rate <= 0.0 {
        return f0;
    }
    let value = |log_eta: f64| {
        let eta = log_eta.exp();
        (1.0 - eta) * f0 + eta * f(rate / eta)
    };
    let lo = ENVELOPE_MIN_ETA.ln();
    let step = -lo / (ENVELOPE_GRID - 1) as f64;
    let grid: Vec<f64> = (0..ENVELOPE_GRID).map(|k| lo + step * k as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&x| value(x)).collect();
    let (k, &best) = vals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    // Golden-section refinement in log η around the best grid point.
    let (mut a, mut b) = (grid[k.saturating_sub(1)], grid[(k + 1).min(ENVELOPE_GRID - 1)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (value(c), value(d));
    for _ in 0..60 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = value(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = value(d);
        }
    }
    best.max(fc).max(fd)
}

/// Floor-correction factor of the integral error-sum bound; `x ≥ 1`.
#[allow(non_snake_case)]
pub fn V_of(x: f64, alpha: f64) -> Result<f64> {
    if !(x >= 1.0) {
        return Err(Error::domain("x", "at least 1", x));
    }
    let r = x.floor() / x;
    Ok(r * (1.0 + 2.0 / alpha * (r.powf(-alpha / 2.0) - 1.0)))
}

/// Uniform upper bound on [`V_of`].
pub fn c0(alpha: f64) -> f64 {
    1.0 + 2.0 / alpha * ((alpha / 2.0).exp2() - 1.0)
}

/// `b·ξ^(−4/α)`.
fn density_ratio(xi2: f64, b: f64, alpha: f64) -> f64 {
    b * xi2.powf(-2.0 / alpha)
}

/// Upper bound on the feedback rate needed to reach error `ξ²` in an infinite network.
pub fn f_tilde(xi2: f64, b: f64, block_len: f64, alpha: f64, overhead: f64) -> Result<f64> {
    if !(xi2 > 0.0) {
        return Err(Error::domain("xi2", "positive", xi2));
    }
    let a = alpha * LOG2_E;
    Ok(density_ratio(xi2, b, alpha) / (2.0 * block_len) * (a + 2.0 * overhead) - a / (2.0 * block_len))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetInverse {
    pub xi2: f64,
    /// The budget lies below the single-antenna regime and was clamped to it.
    pub clamped: bool,
}

/// Inverse of [`f_tilde`] in `ξ²`.
pub fn xi_of_budget(
    rate: f64,
    b: f64,
    block_len: f64,
    alpha: f64,
    overhead: f64,
) -> Result<BudgetInverse> {
    if !(rate > 0.0) {
        return Err(Error::domain("feedback rate", "positive", rate));
    }
    if !(b > 0.0) {
        return Err(Error::domain("b", "positive", b));
    }
    let a = alpha * LOG2_E;
    let x = (2.0 * block_len * rate + a) / (a + 2.0 * overhead);
    let clamped = x < 1.0;
    let x = x.max(1.0);
    Ok(BudgetInverse {
        xi2: (x / b).powf(-alpha / 2.0),
        clamped,
    })
}

/// Smoothed error-sum term of the slope derivation.
pub fn g_tilde(xi2: f64, b: f64, alpha: f64) -> Result<f64> {
    let x = density_ratio(xi2, b, alpha);
    if !(x > 1.0) {
        return Err(Error::domain("b·ξ^(−4/α)", "greater than 1", x));
    }
    let m = x - 1.0;
    Ok(xi2 * m * (1.0 + 2.0 / alpha * (m.powf(-alpha / 2.0) / (b.powf(-alpha / 2.0) * xi2) - 1.0)))
}

/// `(ξ²/G̃)·dG̃/dξ²` in closed form.
pub fn g_tilde_log_slope(xi2: f64, b: f64, alpha: f64) -> Result<f64> {
    let x = density_ratio(xi2, b, alpha);
    if !(x > 1.0) {
        return Err(Error::domain("b·ξ^(−4/α)", "greater than 1", x));
    }
    let m = x - 1.0;
    let first = ((1.0 - 2.0 / alpha) * x - 1.0) / m;
    let second = xi2 * m.powf(-alpha / 2.0 - 1.0)
        / ((1.0 + 2.0 / alpha) * b.powf(-alpha / 2.0) * xi2 * xi2
            + 2.0 / alpha * xi2 * m.powf(-alpha / 2.0));
    Ok(first + second)
}

/// Rate lower bound built on [`g_tilde`].
pub fn r_tilde(rho: f64, xi2: f64, b: f64, alpha: f64, diag: &[f64]) -> Result<f64> {
    if diag.is_empty() {
        return Err(Error::Empty("diagonal samples"));
    }
    let g = g_tilde(xi2, b, alpha)?;
    let denom = 1.0 + rho * alpha / (alpha - 2.0) * g;
    Ok(diag.iter().map(|d| (rho * d / denom).log2()).sum::<f64>() / diag.len() as f64)
}

/// Largest `ξ²` reachable with proportional feedback at SNR `ρ`.
pub fn xi_upper_bound(
    rho: f64,
    r: f64,
    block_len: f64,
    alpha: f64,
    overhead: f64,
    b: f64,
    g: f64,
) -> Result<f64> {
    if !(rho > 1.0) {
        return Err(Error::domain("rho", "greater than 1", rho));
    }
    let a = alpha * LOG2_E;
    let inner = (2.0 * block_len * r * rho.log2() + 2.0 * block_len * g + a) / (a + 2.0 * overhead);
    Ok(b.powf(alpha / 2.0) * inner.powf(-alpha / 2.0))
}

/// Integral bound on `Σ_j ξ²_j` under the threshold rule.
pub fn error_sum_bound(xi2: f64, b: f64, alpha: f64) -> Result<f64> {
    let x = density_ratio(xi2, b, alpha);
    Ok(b * alpha / (alpha - 2.0) * xi2.powf(1.0 - 2.0 / alpha) * V_of(x, alpha)?)
}

/// As [`error_sum_bound`] with `V` replaced by its cap `c₀`.
pub fn error_sum_bound_c0(xi2: f64, b: f64, alpha: f64) -> Result<f64> {
    let x = density_ratio(xi2, b, alpha);
    if !(x >= 1.0) {
        return Err(Error::domain("b·ξ^(−4/α)", "at least 1", x));
    }
    Ok(b * alpha / (alpha - 2.0) * xi2.powf(1.0 - 2.0 / alpha) * c0(alpha))
}

/// `R̃(ρ, ξ²(ρ)) / log₂log₂ρ` for proportional feedback at each `ρ`.
pub fn th2_trend(rhos: &[f64], inputs: &BoundInputs, g: f64, diag: &[f64]) -> Result<Vec<f64>> {
    inputs.validate()?;
    rhos.iter()
        .map(|&rho| {
            let xi2 = xi_upper_bound(
                rho,
                inputs.uplink_fraction,
                inputs.block_len,
                inputs.alpha,
                inputs.overhead,
                inputs.density,
                g,
            )?;
            Ok(r_tilde(rho, xi2, inputs.density, inputs.alpha, diag)? / rho.log2().log2())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exchange_and_multiplexing_values() {
        assert_eq!(th1_exchange_ratio(180.0, 6), 30.0);
        assert_eq!(th1_exchange_ratio(180.0, 180), 1.0);
        assert!((th1_multiplexing(0.03, 180.0, 6) - 0.9).abs() < 1e-12);
        assert_eq!(th1_multiplexing(0.5, 180.0, 6), 1.0);
        assert_eq!(th1_multiplexing(0.0, 180.0, 6), 0.0);
    }

    #[test]
    fn loglog_growth_exponent() {
        assert_eq!(th2_exponent(4.0).unwrap(), 1.0);
        assert_eq!(th2_exponent(3.0).unwrap(), 0.5);
        assert!(th2_exponent(2.0).is_err());
    }

    #[test]
    fn slope_values() {
        assert!((prop1_slope(4.0, 2.0, 180.0, 6) - 8.86).abs() < 0.005);
        assert!((prop1_slope(4.0, 2.0, 180.0, 12) - 4.43).abs() < 0.005);
        assert!((prop1_slope(4.0, 2.0, 180.0, 21) - 2.53).abs() < 0.005);
        assert!((prop1_slope(4.0, 0.0, 180.0, 6) - 15.0).abs() < 1e-12);
        let a = 4.0 * LOG2_E;
        let ratio = prop1_slope(4.0, 2.0, 180.0, 6) / prop1_slope(4.0, 0.0, 180.0, 6);
        assert!((ratio - a / (a + 4.0)).abs() < 1e-14);
    }

    #[test]
    fn breve_unit_case() {
        assert!((breve_rate(0.0, &[1.0], 1, 0.0, 1.0, &[1.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn breve_slope_approaches_exchange_ratio() {
        let row = [1.0, 0.3, 0.1, 0.05, 0.01, 0.002];
        let diag = [0.4, 1.0, 2.5];
        let (l, t) = (6, 180.0);
        let f = 20.0 * l as f64 / t;
        let d = 1e-3;
        let s = (breve_rate(f + d, &row, l, 2.0, t, &diag).unwrap()
            - breve_rate(f, &row, l, 2.0, t, &diag).unwrap())
            / d;
        assert!((s / (t / l as f64) - 1.0).abs() < 0.01);
    }

    #[test]
    fn breve_decreases_with_gains() {
        let diag = [1.0];
        let a = breve_rate(0.1, &[1.0, 0.5], 2, 0.0, 180.0, &diag).unwrap();
        let b = breve_rate(0.1, &[2.0, 1.0], 2, 0.0, 180.0, &diag).unwrap();
        assert!(b < a);
    }

    #[test]
    fn envelope_cases() {
        let lin = |f: f64| 1.0 + 3.0 * f;
        assert!((time_sharing_envelope(lin, 0.5) - 2.5).abs() < 1e-9);
        assert_eq!(time_sharing_envelope(lin, 0.0), 1.0);
        // Flat until 1, then steep: time sharing to the kink beats direct use.
        let kinked = |f: f64| if f < 1.0 { 0.0 } else { 4.0 * (f - 1.0) + 1.0 };
        let e = time_sharing_envelope(kinked, 0.5);
        assert!(e > kinked(0.5) + 0.1);
        assert!(e >= 0.5 - 1e-9);
    }

    #[test]
    fn v_and_c0() {
        assert_eq!(V_of(3.0, 4.0).unwrap(), 1.0);
        assert_eq!(c0(4.0), 2.5);
        let v = V_of(1.5, 4.0).unwrap();
        assert!((v - 2.0 / 3.0 * (1.0 + 0.5 * (2.25 - 1.0))).abs() < 1e-14);
        assert!((v - 1.083_333_333_333_333).abs() < 1e-12);
        assert!(V_of(0.5, 4.0).is_err());
    }

    #[test]
    fn f_tilde_inverse() {
        let (b, t, alpha, q) = (3.0, 180.0, 4.0, 2.0);
        let f = f_tilde(1e-3, b, t, alpha, q).unwrap();
        let back = xi_of_budget(f, b, t, alpha, q).unwrap();
        assert!(!back.clamped);
        assert!((back.xi2 / 1e-3 - 1.0).abs() < 1e-9);
        // b·ξ^(−4/α) = 1 costs Q/T.
        let xi2 = b.powf(alpha / 2.0);
        assert!((f_tilde(xi2, b, t, alpha, q).unwrap() - q / t).abs() < 1e-15);
        assert!(xi_of_budget(1e-6, b, t, alpha, q).unwrap().clamped);
    }

    #[test]
    fn g_tilde_limit_slope() {
        let (b, alpha) = (1.0, 4.0);
        let xi2 = 1e-10;
        let h = xi2 * 1e-5;
        let fd = (g_tilde(xi2 + h, b, alpha).unwrap() - g_tilde(xi2 - h, b, alpha).unwrap()) / (2.0 * h)
            * xi2
            / g_tilde(xi2, b, alpha).unwrap();
        assert!((fd - 0.5).abs() < 1e-3);
        assert!((g_tilde_log_slope(xi2, b, alpha).unwrap() - fd).abs() < 1e-5);
        assert!(g_tilde(1.0, 1.0, 4.0).is_err());
    }

    #[test]
    fn xi_cap_behaviour() {
        let cap = |t: f64, rho: f64| xi_upper_bound(rho, 0.03, t, 4.0, 2.0, 3.0, 0.0).unwrap();
        assert!(cap(360.0, 1e3) < cap(180.0, 1e3));
        assert!(cap(180.0, 1e12) < cap(180.0, 1e6));
        let a = 4.0 * LOG2_E;
        let inner = (2.0 * 180.0 * 0.03 * 1e3f64.log2() + a) / (a + 4.0);
        assert!((cap(180.0, 1e3) - 9.0 / (inner * inner)).abs() < 1e-15);
    }

    #[test]
    fn c0_variant_dominates() {
        for &xi2 in &[1e-2, 3e-3, 1e-4, 1e-7] {
            let v = error_sum_bound(xi2, 2.0, 4.0).unwrap();
            assert!(error_sum_bound_c0(xi2, 2.0, 4.0).unwrap() >= v);
        }
    }
}
