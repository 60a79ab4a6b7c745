//! Per-mobile feedback allocation: which antennas to quantize, at what resolution.

use crate::bounds::{xi_of_budget, BudgetInverse};
use crate::error::{Error, Result};
use crate::topology::descending_order;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackAllocation {
    pub mobile: usize,
    /// Fed antennas, strongest first.
    pub active: Vec<usize>,
    /// Bits per coherence block for each entry of `active`.
    pub bits: Vec<f64>,
    /// Water level λ′ in log₂ power; `+∞` when nothing is fed.
    pub water_level: f64,
    /// Common error variance of fed antennas, `2^(Q+λ′)`.
    pub xi2: f64,
    /// Activation threshold σ₀² of the threshold rule; `None` for water filling.
    pub activation_threshold: Option<f64>,
    pub overhead: f64,
    pub block_len: f64,
}

impl FeedbackAllocation {
    pub fn empty(mobile: usize, block_len: f64, overhead: f64) -> Self {
        Self {
            mobile,
            active: Vec::new(),
            bits: Vec::new(),
            water_level: f64::INFINITY,
            xi2: f64::INFINITY,
            activation_threshold: None,
            overhead,
            block_len,
        }
    }

    /// Error-free knowledge of every antenna with positive gain.
    pub fn perfect(mobile: usize, gain_row: &[f64], block_len: f64) -> Self {
        let active: Vec<usize> = descending_order(gain_row)
            .into_iter()
            .filter(|&j| gain_row[j] > 0.0)
            .collect();
        Self {
            mobile,
            bits: vec![f64::INFINITY; active.len()],
            active,
            water_level: f64::NEG_INFINITY,
            xi2: 0.0,
            activation_threshold: None,
            overhead: 0.0,
            block_len,
        }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn is_active(&self, antenna: usize) -> bool {
        self.active.contains(&antenna)
    }

    /// Bits per coherence block.
    pub fn total_bits(&self) -> f64 {
        self.bits.iter().sum()
    }

    /// Total rate `F_i` in bits per channel use.
    pub fn feedback_rate(&self) -> f64 {
        self.total_bits() / self.block_len
    }

    /// `λ_A`: log₂ of the weakest fed gain.
    pub fn activity_level(&self, gain_row: &[f64]) -> Option<f64> {
        self.active.last().map(|&j| gain_row[j].log2())
    }

    /// Per-antenna error variance: `ξ²` when fed, `σ²` otherwise.
    pub fn error_variances(&self, gain_row: &[f64]) -> Vec<f64> {
        let mut out = gain_row.to_vec();
        for &j in &self.active {
            out[j] = self.xi2.min(gain_row[j]);
        }
        out
    }

    /// The same allocation for a mobile whose gain row is this one rotated right by `shift`.
    pub fn rotated(&self, mobile: usize, shift: usize, antennas: usize) -> Self {
        let mut out = self.clone();
        out.mobile = mobile;
        for j in &mut out.active {
            *j = (*j + shift) % antennas;
        }
        out
    }

    pub fn to_text(&self) -> Result<String> {
        let dump = AllocationDump {
            mobile: self.mobile,
            water_level: self.water_level,
            xi2: self.xi2,
            feedback_rate: self.feedback_rate(),
            antennas: self
                .active
                .iter()
                .zip(&self.bits)
                .map(|(&antenna, &bits)| AntennaBits { antenna, bits })
                .collect(),
        };
        toml::to_string(&dump).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AllocationDump {
    mobile: usize,
    water_level: f64,
    xi2: f64,
    feedback_rate: f64,
    antennas: Vec<AntennaBits>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AntennaBits {
    antenna: usize,
    bits: f64,
}

fn check_budget(rate: f64, block_len: f64, overhead: f64) -> Result<()> {
    if !(rate >= 0.0) {
        return Err(Error::domain("feedback rate", "non-negative", rate));
    }
    if !(block_len >= 1.0) {
        return Err(Error::domain("T", "at least 1", block_len));
    }
    if !(overhead >= 0.0) {
        return Err(Error::domain("Q", "non-negative", overhead));
    }
    Ok(())
}

/// Water-filling allocation of `rate · block_len` bits over descending-gain prefixes.
pub fn allocate_finite(
    gain_row: &[f64],
    rate: f64,
    block_len: f64,
    overhead: f64,
) -> Result<FeedbackAllocation> {
    allocate_finite_for(0, gain_row, rate, block_len, overhead)
}

pub fn allocate_finite_for(
    mobile: usize,
    gain_row: &[f64],
    rate: f64,
    block_len: f64,
    overhead: f64,
) -> Result<FeedbackAllocation> {
    check_budget(rate, block_len, overhead)?;
    let order: Vec<usize> = descending_order(gain_row)
        .into_iter()
        .filter(|&j| gain_row[j] > 0.0)
        .collect();
    if order.is_empty() {
        return Err(Error::Empty("positive gains"));
    }
    let budget = rate * block_len;
    let total: f64 = gain_row.iter().sum();
    let mut best = FeedbackAllocation::empty(mobile, block_len, overhead);
    if budget <= overhead {
        return Ok(best);
    }
    let mut best_err = total;
    let mut log_sum = 0.0;
    let mut fed_power = 0.0;
    for (k, &j) in order.iter().enumerate() {
        let lg = gain_row[j].log2();
        log_sum += lg;
        fed_power += gain_row[j];
        let n = (k + 1) as f64;
        let level = (log_sum - budget) / n;
        // The weakest member of the prefix must still get more than Q bits.
        if lg - level <= overhead {
            continue;
        }
        let err = n * (overhead + level).exp2() + (total - fed_power);
        if err < best_err {
            best_err = err;
            best = FeedbackAllocation {
                mobile,
                active: order[..=k].to_vec(),
                bits: order[..=k].iter().map(|&a| gain_row[a].log2() - level).collect(),
                water_level: level,
                xi2: (overhead + level).exp2(),
                activation_threshold: None,
                overhead,
                block_len,
            };
        }
    }
    Ok(best)
}

/// Threshold rule: feed every antenna with `σ² > ξ²` at error `ξ²`.
pub fn allocate_infinite(
    gain_row: &[f64],
    xi2: f64,
    block_len: f64,
    overhead: f64,
) -> Result<FeedbackAllocation> {
    allocate_limited(0, gain_row, xi2, usize::MAX, block_len, overhead)
}

/// Threshold rule restricted to the `max_active` strongest antennas.
pub fn allocate_limited(
    mobile: usize,
    gain_row: &[f64],
    xi2: f64,
    max_active: usize,
    block_len: f64,
    overhead: f64,
) -> Result<FeedbackAllocation> {
    if !(xi2 > 0.0) {
        return Err(Error::domain("xi2", "positive", xi2));
    }
    check_budget(0.0, block_len, overhead)?;
    let active: Vec<usize> = descending_order(gain_row)
        .into_iter()
        .take(max_active)
        .filter(|&j| gain_row[j] > xi2)
        .collect();
    let level = xi2.log2() - overhead;
    Ok(FeedbackAllocation {
        mobile,
        bits: active
            .iter()
            .map(|&j| overhead + (gain_row[j] / xi2).log2())
            .collect(),
        active,
        water_level: level,
        xi2,
        activation_threshold: Some(xi2),
        overhead,
        block_len,
    })
}

/// Σ of fed errors plus unfed gains.
pub fn error_sum(allocation: &FeedbackAllocation, gain_row: &[f64]) -> f64 {
    allocation.error_variances(gain_row).iter().sum()
}

/// Predicted active-set size `⌊b·ξ^(−4/α)⌋` at the `ξ²` that spends budget `rate`,
/// capped at the number of antennas with positive gain.
pub fn antennas_for_budget(
    gain_row: &[f64],
    rate: f64,
    block_len: f64,
    overhead: f64,
    alpha: f64,
    b: f64,
) -> Result<usize> {
    if !(rate > 0.0) {
        return Err(Error::domain("feedback rate", "positive", rate));
    }
    let BudgetInverse { xi2, .. } = xi_of_budget(rate, b, block_len, alpha, overhead)?;
    let size = (b * xi2.powf(-2.0 / alpha)).floor().max(1.0) as usize;
    Ok(size.min(gain_row.iter().filter(|&&g| g > 0.0).count()))
}
