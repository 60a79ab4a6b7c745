//! Shared fixtures for the kernel benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ratebal_core::allocator::allocate_limited;
use ratebal_core::experiment::{build_network, Network, TopologyParams};
use ratebal_core::fading::sample_downlink;
use ratebal_core::rng::complex_normal;
use ratebal_core::{CMatrix, FeedbackAllocation};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n × m` matrix of unit-variance complex Gaussians.
pub fn gaussian_matrix(n: usize, m: usize, seed: u64) -> CMatrix {
    let mut r = rng(seed);
    CMatrix::from_fn(n, m, |_, _| complex_normal(&mut r, 1.0))
}

/// The standard 55-site network with its computed residual interference.
pub fn standard_network() -> Network {
    build_network(&TopologyParams::default()).expect("default topology is valid")
}

/// Threshold-rule allocations for every mobile.
pub fn allocations(net: &Network, xi2: f64, max_fed: usize) -> Vec<FeedbackAllocation> {
    (0..net.gains.rows())
        .map(|i| allocate_limited(i, net.gains.row(i), xi2, max_fed, 180.0, 2.0).expect("positive xi2"))
        .collect()
}

pub fn channel(net: &Network, block: u64) -> CMatrix {
    sample_downlink(&net.gains, 1, block).h
}
