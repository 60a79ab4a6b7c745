//! Self-checks of structural invariants, run on demand from the command line.

use crate::allocator::{allocate_finite, allocate_infinite, allocate_limited, error_sum};
use crate::bounds::{c0, error_sum_bound, f_tilde, xi_of_budget, V_of};
use crate::error::Result;
use crate::experiment::{build_network, TopologyParams};
use crate::lattice::{audit_pairs, dependence_mi, run_downlink, LatticeConfig};
use crate::linalg::CMatrix;
use crate::precoder::lq_decompose;
use crate::rng::{complex_normal, substream, Purpose};
use crate::topology::{density_bound, gain_map, NetworkTopology, Point};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

fn random_matrix<R: Rng>(rng: &mut R, n: usize, m: usize) -> CMatrix {
    CMatrix::from_fn(n, m, |_, _| complex_normal(rng, 1.0))
}

/// Worst `‖LQ − H‖` and `‖QQᴴ − I‖` over random shapes up to 16 × 16.
pub fn lq_residuals(seed: u64, cases: usize) -> Result<(f64, f64)> {
    let mut rng = substream(seed, Purpose::Model, 0);
    let (mut recon, mut unit) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let m = rng.random_range(1..=16);
        let n = rng.random_range(1..=m);
        let h = random_matrix(&mut rng, n, m);
        let st = lq_decompose(&h)?;
        recon = recon.max(st.l.mul(&st.q).sub(&h).frobenius_norm() / h.frobenius_norm().max(1.0));
        unit = unit.max(st.q.mul(&st.q.conj_transpose()).sub(&CMatrix::identity(m)).frobenius_norm());
    }
    Ok((recon, unit))
}

/// Largest spread of per-antenna error variances under water filling, relative.
pub fn equal_error_spread(seed: u64, cases: usize) -> Result<f64> {
    let mut rng = substream(seed, Purpose::Model, 1);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let m = rng.random_range(1..=12);
        let row: Vec<f64> = (0..m).map(|_| rng.random_range(1e-4..1.0)).collect();
        let rate = rng.random_range(0.01..0.5);
        let a = allocate_finite(&row, rate, 180.0, 2.0)?;
        for (&j, &bits) in a.active.iter().zip(&a.bits) {
            // Error of a rate-distortion quantizer spending `bits − Q` on gain σ².
            let err = row[j] * (-(bits - 2.0)).exp2();
            worst = worst.max((err - a.xi2).abs() / a.xi2);
        }
    }
    Ok(worst)
}

/// Worst `|ξ²(F̃(ξ²)) − ξ²| / ξ²` on a grid where the inverse is unclamped.
pub fn budget_round_trip() -> Result<f64> {
    let mut worst = 0.0f64;
    for &alpha in &[2.5, 3.0, 4.0, 6.0] {
        for &q in &[0.0, 2.0] {
            for k in 1..40 {
                let xi2 = 10f64.powf(-0.1 * k as f64);
                let b = 3.0;
                let f = f_tilde(xi2, b, 180.0, alpha, q)?;
                if f <= 0.0 {
                    continue;
                }
                let inv = xi_of_budget(f, b, 180.0, alpha, q)?;
                if !inv.clamped {
                    worst = worst.max((inv.xi2 - xi2).abs() / xi2);
                }
            }
        }
    }
    Ok(worst)
}

/// Number of error-sum bound violations over random mobiles in a large hexagonal patch.
pub fn error_sum_violations(seed: u64, cases: usize) -> Result<usize> {
    let base = NetworkTopology::hex(8, 1);
    let mut rng = substream(seed, Purpose::Model, 2);
    let mut violations = 0;
    for _ in 0..cases {
        let alpha = rng.random_range(2.5..6.0);
        let mut topo = base.clone().with_alpha(alpha);
        topo.mobiles = vec![Point::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))];
        let gains = gain_map(&topo)?;
        let b = density_bound(&topo, 0)?.b;
        let row = gains.row(0);
        let peak = row.iter().copied().fold(0.0, f64::max);
        let xi2 = peak * 10f64.powf(-rng.random_range(0.0..4.0));
        if b * xi2.powf(-2.0 / alpha) < 1.0 {
            continue;
        }
        let a = allocate_infinite(row, xi2, 180.0, 0.0)?;
        if error_sum(&a, row) > error_sum_bound(xi2, b, alpha)? * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    Ok(violations)
}

/// Dependence between the modulo noise and the symbols of the simulated DP system, in bits.
pub fn modulo_dependence(seed: u64, blocks: usize) -> Result<f64> {
    let net = build_network(&TopologyParams::default())?;
    let allocs = (0..net.gains.rows())
        .map(|i| allocate_limited(i, net.gains.row(i), 0.01, 6, 180.0, 2.0))
        .collect::<Result<Vec<_>>>()?;
    let cfg = LatticeConfig {
        blocks,
        residual: net.residual,
        seed,
        ..Default::default()
    };
    dependence_mi(&audit_pairs(&net.gains, &allocs, &cfg)?, 8)
}

pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let (recon, unit) = lq_residuals(seed, 200)?;
    out.push(outcome("lq reconstruction", recon < 1e-10, format!("{recon:.2e}")));
    out.push(outcome("lq unitarity", unit < 1e-10, format!("{unit:.2e}")));
    let spread = equal_error_spread(seed, 500)?;
    out.push(outcome("water filling equal error", spread < 1e-12, format!("{spread:.2e}")));
    let rt = budget_round_trip()?;
    out.push(outcome("budget inverse round trip", rt < 1e-9, format!("{rt:.2e}")));
    let mut v_ok = true;
    for &alpha in &[2.5, 3.0, 4.0, 6.0] {
        let cap = c0(alpha);
        for k in 0..2000 {
            let x = 1.0 + 0.01 * k as f64;
            v_ok &= V_of(x, alpha)? <= cap + 1e-12;
        }
        v_ok &= (V_of(1e6 + 0.5, alpha)? - 1.0).abs() < 1e-5;
    }
    out.push(outcome("floor factor cap and limit", v_ok, String::new()));
    let bad = error_sum_violations(seed, 1000)?;
    out.push(outcome("error sum below bound", bad == 0, format!("{bad} violations")));
    let net = build_network(&TopologyParams::default())?;
    let allocs = (0..net.gains.rows())
        .map(|i| allocate_limited(i, net.gains.row(i), 0.01, 6, 180.0, 2.0))
        .collect::<Result<Vec<_>>>()?;
    let cfg = LatticeConfig {
        blocks: 400,
        residual: net.residual,
        seed,
        ..Default::default()
    };
    let power = run_downlink(&net.gains, &allocs, &cfg)?.mean_power;
    out.push(outcome("transmit power", (power - 1.0).abs() < 0.01, format!("{power:.4}")));
    let dep = modulo_dependence(seed, 600)?;
    out.push(outcome("modulo noise independent of symbols", dep.abs() < 0.02, format!("{dep:.4} bits")));
    Ok(out)
}
