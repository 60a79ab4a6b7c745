//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ratebal_core::lattice::{cell_uniform, estimate_mi, mod_cell, CELL_HALF, CELL_PERIOD};
use ratebal_core::rng::{complex_normal, substream, Purpose};
use rand::Rng;

pub const GRID: f64 = 0.01;

/// Smallest error sum over bit splits on a 0.01-bit grid, by dynamic programming over antennas.
///
/// An antenna given `b ≥ Q` bits has error `σ²·2^(Q−b)`; otherwise it costs nothing and keeps `σ²`.
pub fn grid_error_sum(gains: &[f64], budget_bits: f64, overhead: f64) -> f64 {
    let units = (budget_bits / GRID + 1e-9).floor() as usize;
    let mut best = vec![0.0; units + 1];
    for &s2 in gains {
        let cost: Vec<f64> = (0..=units)
            .map(|b| {
                let bits = b as f64 * GRID;
                if bits >= overhead {
                    s2 * (overhead - bits).exp2()
                } else {
                    s2
                }
            })
            .collect();
        let next: Vec<f64> = (0..=units)
            .map(|u| (0..=u).map(|b| best[u - b] + cost[b]).fold(f64::INFINITY, f64::min))
            .collect();
        best = next;
    }
    best[units]
}

pub struct OracleCase {
    pub gains: Vec<f64>,
    pub budget_bits: f64,
    pub overhead: f64,
}

pub fn random_case<R: Rng>(rng: &mut R) -> OracleCase {
    let m = rng.random_range(1..=4);
    OracleCase {
        gains: (0..m).map(|_| 2f64.powf(-rng.random_range(0.0..10.0))).collect(),
        budget_bits: rng.random_range(0.05..12.0),
        overhead: if rng.random_bool(0.5) { 0.0 } else { 2.0 },
    }
}

/// Entropy in bits of a zero-mean Gaussian of variance `var` wrapped onto one period, by midpoint rule.
pub fn wrapped_entropy(var: f64) -> f64 {
    let n = 20_000;
    let dx = CELL_PERIOD / n as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
    let mut h = 0.0;
    for i in 0..n {
        let x = -CELL_HALF + (i as f64 + 0.5) * dx;
        let p: f64 = (-20..=20)
            .map(|k| {
                let t = x + k as f64 * CELL_PERIOD;
                norm * (-t * t / (2.0 * var)).exp()
            })
            .sum();
        if p > 0.0 {
            h -= p * p.log2() * dx;
        }
    }
    h
}

/// MI of `y = mod(v + z)` with `v` uniform on the cell and `z ~ CN(0, σ²)`. Real and imaginary
/// parts separate, so the 2D integral is twice the 1D one.
pub fn mod_gaussian_mi(sigma2: f64) -> f64 {
    2.0 * (CELL_PERIOD.log2() - wrapped_entropy(sigma2 / 2.0))
}

/// Estimated MI of the mod-cell Gaussian channel; uniform cell symbols have unit power.
pub fn simulated_mod_gaussian_mi(snr_db: f64, samples: usize, k: usize) -> f64 {
    let sigma2 = 10f64.powf(-snr_db / 10.0);
    let mut rng = substream(31, Purpose::Noise, snr_db as u64);
    let mut v = Vec::with_capacity(samples);
    let mut y = Vec::with_capacity(samples);
    for _ in 0..samples {
        let vi = cell_uniform(&mut rng);
        v.push(vi);
        y.push(mod_cell(vi + complex_normal(&mut rng, sigma2)));
    }
    estimate_mi(&v, &y, k).unwrap()
}

/// MI estimate between two independent uniform cell sequences.
pub fn independent_mi(samples: usize, k: usize) -> f64 {
    let mut rng = substream(32, Purpose::Noise, 0);
    let v: Vec<_> = (0..samples).map(|_| cell_uniform(&mut rng)).collect();
    let y: Vec<_> = (0..samples).map(|_| cell_uniform(&mut rng)).collect();
    estimate_mi(&v, &y, k).unwrap()
}
