mod common;

use common::{grid_error_sum, random_case, GRID};
use ratebal_core::allocator::{allocate_finite, error_sum};
use ratebal_core::rng::{substream, Purpose};

#[test]
fn grid_oracle_reproduces_worked_examples() {
    assert!((grid_error_sum(&[1.0, 0.25], 4.0, 0.0) - 0.25).abs() < 1e-12);
    let tiny = 2f64.powi(-10);
    assert!((grid_error_sum(&[1.0, tiny], 4.0, 0.0) - (1.0 / 16.0 + tiny)).abs() < 1e-12);
}

#[test]
fn water_filling_matches_brute_force() {
    let mut rng = substream(41, Purpose::Model, 0);
    let slack = GRID.exp2();
    for case in 0..200 {
        let c = random_case(&mut rng);
        let a = allocate_finite(&c.gains, c.budget_bits / 180.0, 180.0, c.overhead).unwrap();
        let ours = error_sum(&a, &c.gains);
        let grid = grid_error_sum(&c.gains, c.budget_bits, c.overhead);
        assert!(ours <= grid * (1.0 + 1e-9), "case {case}: {ours} above grid {grid}");
        assert!(grid <= ours * slack * (1.0 + 1e-9), "case {case}: {ours} far below grid {grid}");
        assert!(a.total_bits() <= c.budget_bits + 1e-9);
    }
}
