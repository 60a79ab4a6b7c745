use ratebal_core::allocator::allocate_limited;
use ratebal_core::experiment::{build_network, Network, TopologyParams};
use ratebal_core::{run_downlink, FeedbackAllocation, LatticeConfig, Scheme};

fn network() -> Network {
    build_network(&TopologyParams::default()).unwrap()
}

fn allocations(net: &Network, xi2: f64, fed: usize) -> Vec<FeedbackAllocation> {
    (0..net.gains.rows())
        .map(|i| allocate_limited(i, net.gains.row(i), xi2, fed, 180.0, 2.0).unwrap())
        .collect()
}

fn config(net: &Network, blocks: usize) -> LatticeConfig {
    LatticeConfig {
        blocks,
        residual: net.residual,
        seed: 9,
        ..Default::default()
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let net = network();
    let allocs = allocations(&net, 0.01, 3);
    let cfg = config(&net, 60);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_downlink(&net.gains, &allocs, &cfg).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(1));
    let other = run_downlink(&net.gains, &allocs, &LatticeConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(one.downlink_se, other.downlink_se);
}

#[test]
fn power_constraint_holds() {
    let net = network();
    let res = run_downlink(&net.gains, &allocations(&net, 0.01, 6), &config(&net, 200)).unwrap();
    assert!((res.mean_power - 1.0).abs() < 0.01, "{}", res.mean_power);
}

#[test]
fn vanishing_power_carries_nothing() {
    let net = network();
    let cfg = LatticeConfig { rho: 1e-6, ..config(&net, 100) };
    let res = run_downlink(&net.gains, &allocations(&net, 0.01, 3), &cfg).unwrap();
    assert!(res.downlink_se.abs() < 0.02, "{}", res.downlink_se);
}

#[test]
fn estimate_stays_below_effective_sinr_rate() {
    let net = network();
    for &(xi2, fed) in &[(0.1, 3), (0.01, 6), (0.003, 12)] {
        let res = run_downlink(&net.gains, &allocations(&net, xi2, fed), &config(&net, 150)).unwrap();
        assert!(res.downlink_se <= res.state_rate + 0.1, "{} vs {}", res.downlink_se, res.state_rate);
    }
}

#[test]
fn cooperation_beats_single_cell() {
    let net = network();
    let cfg = config(&net, 150);
    let empty: Vec<FeedbackAllocation> = (0..net.gains.rows())
        .map(|i| FeedbackAllocation::empty(i, 180.0, 2.0))
        .collect();
    let plain = run_downlink(&net.gains, &empty, &LatticeConfig { scheme: Scheme::NoCooperation, ..cfg }).unwrap();
    let coop = run_downlink(&net.gains, &allocations(&net, 0.01, 6), &cfg).unwrap();
    assert!(coop.downlink_se > plain.downlink_se + 1.0);
    assert_eq!(plain.feedback_se, 0.0);
}
