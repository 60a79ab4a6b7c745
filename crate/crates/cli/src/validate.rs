use anyhow::Result;
use ratebal_core::invariants::run_all;

/// Prints one line per check and returns the number of failures.
pub fn run(seed: u64) -> Result<usize> {
    let mut failed = 0;
    for c in run_all(seed)? {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    Ok(failed)
}
