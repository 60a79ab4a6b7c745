//! Operational downlink: dithered feedback, successive scalar modulo precoding,
//! MMSE-scaled modulo reception and histogram estimates of mutual information.

use crate::allocator::FeedbackAllocation;
use crate::error::{Error, Result};
use crate::linalg::{dot, inner, CMatrix};
use crate::precoder::{interference_terms, lq_decompose, zf_precoder, PrecoderState};
use crate::quantizer::{
    dithered_quantize, escape_limit, model_quantize, step_for_error, FeedbackAccountant, QuantizerKind,
};
use crate::rng::{complex_normal, complex_uniform, substream, Purpose};
use crate::topology::{descending_order, GainMatrix};
use crate::fading::sample_downlink;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Half-width of the fundamental cell per real dimension, `√(3/2)`.
pub const CELL_HALF: f64 = 1.224_744_871_391_589;
/// Cell period per real dimension, `√6`.
pub const CELL_PERIOD: f64 = 2.0 * CELL_HALF;

/// Width of the state strata in dB.
pub const STRATUM_DB: f64 = 0.5;
/// Half-width, in standard deviations, of the histogram box for unfolded outputs.
const PLAIN_BOX: f64 = 6.0;

#[inline]
fn mod_real(x: f64) -> f64 {
    let r = (x + CELL_HALF).rem_euclid(CELL_PERIOD) - CELL_HALF;
    if r >= CELL_HALF {
        r - CELL_PERIOD
    } else {
        r
    }
}

/// Reduces real and imaginary parts to `[−√(3/2), √(3/2))`.
#[inline]
pub fn mod_cell(x: Complex64) -> Complex64 {
    Complex64::new(mod_real(x.re), mod_real(x.im))
}

/// Uniform draw on the fundamental cell.
pub fn cell_uniform<R: rand::Rng + ?Sized>(rng: &mut R) -> Complex64 {
    complex_uniform(rng, CELL_HALF)
}

/// Receiver scaling `a = √ρ·ℓ*/(ρ|ℓ|² + ρ·S + 1)`, so that `a·√ρ·ℓ → 1` at high SNR.
pub fn mmse_coefficient(l_ii: Complex64, rho: f64, error_budget: f64) -> Complex64 {
    rho.sqrt() * l_ii.conj() / (rho * l_ii.norm_sqr() + rho * error_budget + 1.0)
}

/// Successive modulo pre-cancellation, in user order:
/// `s_i = mod(v_i − a_i·√ρ·Σ_{j<i} ℓ_{i,j}·s_j − u_i)`.
pub fn precode_symbols(
    v: &[Complex64],
    state: &PrecoderState,
    a: &[Complex64],
    u: &[Complex64],
    rho: f64,
    s: &mut [Complex64],
) {
    let sr = rho.sqrt();
    for i in 0..v.len() {
        let known = dot(&state.l.row(i)[..i], &s[..i]);
        s[i] = mod_cell(v[i] - a[i] * sr * known - u[i]);
    }
}

/// Precoded symbols and the transmit vector `x = Q_Nᴴ·s`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBlock {
    pub s: Vec<Complex64>,
    pub x: Vec<Complex64>,
}

pub fn encode_block(
    v: &[Complex64],
    state: &PrecoderState,
    a: &[Complex64],
    u: &[Complex64],
    rho: f64,
) -> EncodedBlock {
    let mut s = vec![Complex64::new(0.0, 0.0); v.len()];
    precode_symbols(v, state, a, u, rho, &mut s);
    let mut x = vec![Complex64::new(0.0, 0.0); state.q.cols()];
    state.transmit(&s, &mut x);
    EncodedBlock { s, x }
}

/// `y′ = mod(a·y + u)`.
#[inline]
pub fn decode_symbol(y: Complex64, a: Complex64, u: Complex64) -> Complex64 {
    mod_cell(a * y + u)
}

/// K × K histogram over the square `[−half, half)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hist2d {
    k: usize,
    half: f64,
    counts: Vec<u64>,
    total: u64,
}

impl Hist2d {
    pub fn new(k: usize, half: f64) -> Self {
        Self {
            k,
            half,
            counts: vec![0; k * k],
            total: 0,
        }
    }

    #[inline]
    fn bin(&self, x: f64) -> usize {
        let b = ((x + self.half) / (2.0 * self.half) * self.k as f64).floor();
        b.clamp(0.0, (self.k - 1) as f64) as usize
    }

    #[inline]
    pub fn add(&mut self, z: Complex64) {
        let idx = self.bin(z.re) * self.k + self.bin(z.im);
        self.counts[idx] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &Hist2d) {
        debug_assert_eq!(self.k, other.k);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Differential entropy in bits: Miller–Madow corrected plug-in estimate plus log₂ bin area.
    pub fn entropy(&self) -> f64 {
        let n = self.total as f64;
        let mut h = 0.0;
        let mut occupied = 0usize;
        for &c in &self.counts {
            if c > 0 {
                let p = c as f64 / n;
                h -= p * p.log2();
                occupied += 1;
            }
        }
        let correction = (occupied.saturating_sub(1)) as f64 / (2.0 * n * std::f64::consts::LN_2);
        let width = 2.0 * self.half / self.k as f64;
        h + correction + (width * width).log2()
    }
}

fn check_bins(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::domain("K", "at least 2", k as f64));
    }
    Ok(())
}

/// `I = h(y′) − h(e)` with `e = mod(y′ − v)`, from K × K histograms over the cell.
pub fn estimate_mi(v: &[Complex64], y: &[Complex64], k: usize) -> Result<f64> {
    check_bins(k)?;
    if v.is_empty() || v.len() != y.len() {
        return Err(Error::Empty("paired samples"));
    }
    let mut hy = Hist2d::new(k, CELL_HALF);
    let mut he = Hist2d::new(k, CELL_HALF);
    for (&vi, &yi) in v.iter().zip(y) {
        hy.add(yi);
        he.add(mod_cell(yi - vi));
    }
    Ok(hy.entropy() - he.entropy())
}

/// Mutual information conditioned on a receiver-known state, stratified in 0.5 dB bins.
///
/// Each stratum keeps histograms of the output and of the additive noise; adjacent
/// strata are pooled until each holds enough samples for the plug-in estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMi {
    k: usize,
    half: f64,
    strata: BTreeMap<i64, (Hist2d, Hist2d)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalEstimate {
    pub mi: f64,
    pub strata: usize,
    pub samples: u64,
}

impl ConditionalMi {
    pub fn new(k: usize, half: f64) -> Self {
        Self {
            k,
            half,
            strata: BTreeMap::new(),
        }
    }

    /// Stratum key of a linear state value.
    pub fn key(state: f64) -> i64 {
        if state > 0.0 {
            (10.0 * state.log10() / STRATUM_DB).floor().max(-1000.0) as i64
        } else {
            -1000
        }
    }

    #[inline]
    pub fn add(&mut self, key: i64, y: Complex64, e: Complex64) {
        let (k, half) = (self.k, self.half);
        let entry = self
            .strata
            .entry(key)
            .or_insert_with(|| (Hist2d::new(k, half), Hist2d::new(k, half)));
        entry.0.add(y);
        entry.1.add(e);
    }

    pub fn merge(&mut self, other: &ConditionalMi) {
        for (&key, (y, e)) in &other.strata {
            match self.strata.get_mut(&key) {
                Some(s) => {
                    s.0.merge(y);
                    s.1.merge(e);
                }
                None => {
                    self.strata.insert(key, (y.clone(), e.clone()));
                }
            }
        }
    }

    pub fn samples(&self) -> u64 {
        self.strata.values().map(|s| s.0.total()).sum()
    }

    /// Pools adjacent strata until each has `min_samples`, then averages `h(y′) − h(e)`.
    pub fn estimate(&self, min_samples: u64) -> Result<ConditionalEstimate> {
        let total = self.samples();
        if total == 0 {
            return Err(Error::Empty("conditional MI samples"));
        }
        let mut groups: Vec<(Hist2d, Hist2d)> = Vec::new();
        let mut open: Option<(Hist2d, Hist2d)> = None;
        for (y, e) in self.strata.values() {
            let g = open.get_or_insert_with(|| (Hist2d::new(self.k, self.half), Hist2d::new(self.k, self.half)));
            g.0.merge(y);
            g.1.merge(e);
            if g.0.total() >= min_samples {
                groups.push(open.take().expect("open group"));
            }
        }
        if let Some(rest) = open {
            match groups.last_mut() {
                Some(last) => {
                    last.0.merge(&rest.0);
                    last.1.merge(&rest.1);
                }
                None => groups.push(rest),
            }
        }
        let mi = groups
            .iter()
            .map(|(y, e)| y.total() as f64 / total as f64 * (y.entropy() - e.entropy()))
            .sum();
        Ok(ConditionalEstimate {
            mi,
            strata: groups.len(),
            samples: total,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// LQ precoding with successive modulo pre-cancellation.
    DpModulo,
    /// Channel-inversion beams, each stream through its own modulo transceiver.
    ZfModulo,
    /// Each mobile served by its strongest antenna alone, no precoding or modulo.
    NoCooperation,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::DpModulo => "dp-modulo",
            Scheme::ZfModulo => "zf-modulo",
            Scheme::NoCooperation => "no-cooperation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeConfig {
    pub scheme: Scheme,
    pub quantizer: QuantizerKind,
    pub rho: f64,
    pub blocks: usize,
    /// Simulated channel uses per block; feedback accounting uses `block_len`.
    pub symbols_per_block: usize,
    /// Histogram bins per real dimension.
    pub bins: usize,
    pub block_len: f64,
    /// Unsimulated interference power per unit ρ.
    pub residual: f64,
    pub seed: u64,
    /// Independent block batches behind the standard error.
    pub batches: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::DpModulo,
            quantizer: QuantizerKind::DitheredScalar,
            rho: 1000.0,
            blocks: 1000,
            symbols_per_block: 32,
            bins: 32,
            block_len: 180.0,
            residual: 0.0,
            seed: 1,
            batches: 4,
        }
    }
}

impl LatticeConfig {
    fn validate(&self) -> Result<()> {
        check_bins(self.bins)?;
        if !(self.rho >= 0.0) {
            return Err(Error::domain("rho", "non-negative", self.rho));
        }
        if self.blocks == 0 || self.symbols_per_block == 0 {
            return Err(Error::Empty("blocks or symbols"));
        }
        if !(self.residual >= 0.0) {
            return Err(Error::domain("residual", "non-negative", self.residual));
        }
        Ok(())
    }

    fn histogram(&self) -> (usize, f64) {
        match self.scheme {
            Scheme::NoCooperation => (2 * self.bins, PLAIN_BOX),
            _ => (self.bins, CELL_HALF),
        }
    }

    /// Minimum samples per pooled stratum, `10·K²`.
    pub fn min_stratum(&self) -> u64 {
        let k = self.histogram().0 as u64;
        10 * k * k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// State-conditioned MI, pooled over users, bits per channel use.
    pub downlink_se: f64,
    pub std_error: f64,
    /// Unconditioned MI of all samples pooled.
    pub pooled_mi: f64,
    /// Unconditioned MI per user.
    pub per_user_mi: Vec<f64>,
    /// Huffman-coded feedback bits per channel use per user.
    pub feedback_se: f64,
    /// Feedback rate under the quantizer's analytical accounting rule.
    pub nominal_feedback_se: f64,
    /// Mean of `log₂(1 + state SINR)` over users and blocks.
    pub state_rate: f64,
    /// `E‖x‖²/N`.
    pub mean_power: f64,
    pub blocks: usize,
    pub samples: u64,
    pub strata: usize,
}

#[derive(Default)]
struct BlockTally {
    block: u64,
    nominal_bits: f64,
    state_rate: f64,
    power: f64,
}

struct Accumulator {
    cond: ConditionalMi,
    pooled: (Hist2d, Hist2d),
    per_user: Vec<(Hist2d, Hist2d)>,
    feedback: FeedbackAccountant,
    /// Floating-point sums per block, added in block order at the end.
    tallies: Vec<BlockTally>,
    symbols: u64,
    user_blocks: u64,
    /// Raw `(v, e)` pairs, kept only by [`audit_pairs`].
    audit: Option<Vec<(Complex64, Complex64)>>,
}

impl Accumulator {
    fn new(cfg: &LatticeConfig, users: usize) -> Self {
        let (k, half) = cfg.histogram();
        let pair = || (Hist2d::new(k, half), Hist2d::new(k, half));
        Self {
            cond: ConditionalMi::new(k, half),
            pooled: pair(),
            per_user: (0..users).map(|_| pair()).collect(),
            feedback: FeedbackAccountant::new(),
            tallies: Vec::new(),
            symbols: 0,
            user_blocks: 0,
            audit: None,
        }
    }

    fn merge(mut self, other: Accumulator) -> Self {
        self.cond.merge(&other.cond);
        self.pooled.0.merge(&other.pooled.0);
        self.pooled.1.merge(&other.pooled.1);
        for (a, b) in self.per_user.iter_mut().zip(&other.per_user) {
            a.0.merge(&b.0);
            a.1.merge(&b.1);
        }
        self.feedback.merge(&other.feedback);
        self.tallies.extend(other.tallies);
        self.symbols += other.symbols;
        self.user_blocks += other.user_blocks;
        self
    }

    /// `(nominal bits, state rate, power)` summed in block order.
    fn totals(&mut self) -> (f64, f64, f64) {
        self.tallies.sort_unstable_by_key(|t| t.block);
        self.tallies.iter().fold((0.0, 0.0, 0.0), |(b, r, p), t| {
            (b + t.nominal_bits, r + t.state_rate, p + t.power)
        })
    }

    #[inline]
    fn record(&mut self, user: usize, key: i64, y: Complex64, e: Complex64) {
        self.cond.add(key, y, e);
        self.pooled.0.add(y);
        self.pooled.1.add(e);
        self.per_user[user].0.add(y);
        self.per_user[user].1.add(e);
    }
}

/// Linear precoder for one block: `x = P·s`, effective gains and residual interference powers.
struct BlockPrecoder {
    p: CMatrix,
    /// Effective `ℓ_ii` (real, non-negative).
    gain: Vec<f64>,
    /// LQ state for successive cancellation, DP only.
    lq: Option<PrecoderState>,
}

/// One strongest antenna per mobile, all distinct; equal-gain ties are resolved by matching.
pub fn serving_antennas(gains: &GainMatrix) -> Result<Vec<usize>> {
    let (n, m) = (gains.rows(), gains.cols());
    let ties: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let row = gains.row(i);
            let order = descending_order(row);
            let peak = row[order[0]];
            order
                .into_iter()
                .take_while(|&j| row[j] >= peak * (1.0 - 1e-12))
                .collect()
        })
        .collect();
    fn augment(i: usize, ties: &[Vec<usize>], owner: &mut [usize], seen: &mut [bool]) -> bool {
        for &j in &ties[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j] == usize::MAX || augment(owner[j], ties, owner, seen) {
                owner[j] = i;
                return true;
            }
        }
        false
    }
    let mut owner = vec![usize::MAX; m];
    for i in 0..n {
        let mut seen = vec![false; m];
        if !augment(i, &ties, &mut owner, &mut seen) {
            return Err(Error::Config(format!("no free strongest antenna for mobile {i}")));
        }
    }
    let mut serve = vec![0; n];
    for (j, &i) in owner.iter().enumerate() {
        if i != usize::MAX {
            serve[i] = j;
        }
    }
    Ok(serve)
}

fn simulate_block(
    gains: &GainMatrix,
    allocations: &[FeedbackAllocation],
    cfg: &LatticeConfig,
    block: u64,
    acc: &mut Accumulator,
) -> Result<()> {
    let mut tally = BlockTally {
        block,
        ..Default::default()
    };
    simulate_block_into(gains, allocations, cfg, block, acc, &mut tally)?;
    acc.tallies.push(tally);
    Ok(())
}

fn simulate_block_into(
    gains: &GainMatrix,
    allocations: &[FeedbackAllocation],
    cfg: &LatticeConfig,
    block: u64,
    acc: &mut Accumulator,
    tally: &mut BlockTally,
) -> Result<()> {
    let (n, m) = (gains.rows(), gains.cols());
    let h = sample_downlink(gains, cfg.seed, block).h;
    let rho = cfg.rho;
    let sr = rho.sqrt();
    let noise_var = 1.0 + cfg.residual * rho;

    let mut sym_rng = substream(cfg.seed, Purpose::Symbols, block);
    let mut noise_rng = substream(cfg.seed, Purpose::Noise, block);
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    let mut u = vec![Complex64::new(0.0, 0.0); n];
    let mut s = vec![Complex64::new(0.0, 0.0); n];
    let mut x = vec![Complex64::new(0.0, 0.0); m];
    let mut y = vec![Complex64::new(0.0, 0.0); n];

    if cfg.scheme == Scheme::NoCooperation {
        let serve = serving_antennas(gains)?;
        let mut served = vec![usize::MAX; m];
        for (i, &j) in serve.iter().enumerate() {
            served[j] = i;
        }
        let mut a = vec![Complex64::new(0.0, 0.0); n];
        let mut scale = vec![0.0; n];
        let mut keys = vec![0i64; n];
        for i in 0..n {
            let hs = h[(i, serve[i])];
            let nominal: f64 = gains.row(i).iter().sum::<f64>() - gains.get(i, serve[i]) + cfg.residual;
            let interference: f64 = (0..m)
                .filter(|&j| j != serve[i] && served[j] != usize::MAX)
                .map(|j| h[(i, j)].norm_sqr())
                .sum();
            a[i] = mmse_coefficient(hs, rho, nominal);
            let beta = a[i] * sr * hs;
            scale[i] = (beta.norm_sqr() + a[i].norm_sqr() * (rho * interference + noise_var)).sqrt();
            let state = rho * hs.norm_sqr() / (rho * interference + noise_var);
            keys[i] = ConditionalMi::key(state);
            tally.state_rate += (1.0 + state).log2();
        }
        acc.user_blocks += n as u64;
        for _ in 0..cfg.symbols_per_block {
            for vi in v.iter_mut() {
                *vi = cell_uniform(&mut sym_rng);
            }
            x.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for (i, &j) in serve.iter().enumerate() {
                x[j] = v[i];
            }
            tally.power += x.iter().map(|z| z.norm_sqr()).sum::<f64>();
            h.mul_vec_into(&x, &mut y);
            for i in 0..n {
                let yi = sr * y[i] + complex_normal(&mut noise_rng, noise_var);
                let out = a[i] * yi;
                let e = out - a[i] * sr * h[(i, serve[i])] * v[i];
                if scale[i] > 0.0 {
                    acc.record(i, keys[i], out / scale[i], e / scale[i]);
                } else {
                    acc.record(i, keys[i], out, e);
                }
            }
            acc.symbols += n as u64;
        }
        return Ok(());
    }

    let q = match cfg.quantizer {
        QuantizerKind::DitheredScalar => {
            let mut rng = substream(cfg.seed, Purpose::Quantizer, block);
            dithered_quantize(&h, gains, allocations, &mut rng)?
        }
        QuantizerKind::RateDistortion => {
            let mut rng = substream(cfg.seed, Purpose::Model, block);
            model_quantize(&h, gains, allocations, &mut rng)?
        }
    };
    tally.nominal_bits += q.emitted_bits.iter().sum::<f64>();
    for (i, levels) in q.levels.iter().enumerate() {
        let step = step_for_error(allocations[i].xi2);
        for (rank, lv) in levels.iter().enumerate() {
            acc.feedback
                .record(rank, escape_limit(gains.get(i, lv.antenna), step), lv.levels);
        }
    }

    let budget = interference_terms(gains, allocations, cfg.residual);
    let pre = match cfg.scheme {
        Scheme::DpModulo => {
            let st = lq_decompose(&q.h_hat)?;
            BlockPrecoder {
                p: st.q.conj_transpose(),
                gain: st.diag.clone(),
                lq: Some(st),
            }
        }
        Scheme::ZfModulo => {
            let zf = zf_precoder(&q.h_hat)?;
            BlockPrecoder {
                p: zf.w,
                gain: zf.gains.iter().map(|g| g.sqrt()).collect(),
                lq: None,
            }
        }
        Scheme::NoCooperation => unreachable!(),
    };

    let mut a = vec![Complex64::new(0.0, 0.0); n];
    let mut keys = vec![0i64; n];
    let err = h.sub(&q.h_hat);
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..n {
        a[i] = mmse_coefficient(Complex64::new(pre.gain[i], 0.0), rho, budget[i]);
        // Instantaneous leakage ‖ε_i·P‖² of the CSI error through the precoder.
        let mut leak = 0.0;
        for k in 0..n {
            for (r, c) in col.iter_mut().enumerate() {
                *c = pre.p[(r, k)].conj();
            }
            leak += inner(err.row(i), &col).norm_sqr();
        }
        let state = rho * pre.gain[i] * pre.gain[i] / (rho * leak + noise_var);
        keys[i] = ConditionalMi::key(state);
        tally.state_rate += (1.0 + state).log2();
    }
    acc.user_blocks += n as u64;

    for _ in 0..cfg.symbols_per_block {
        for i in 0..n {
            v[i] = cell_uniform(&mut sym_rng);
            u[i] = cell_uniform(&mut sym_rng);
        }
        match &pre.lq {
            Some(st) => precode_symbols(&v, st, &a, &u, rho, &mut s),
            None => {
                for i in 0..n {
                    s[i] = mod_cell(v[i] - u[i]);
                }
            }
        }
        for (r, xr) in x.iter_mut().enumerate() {
            *xr = (0..n).map(|k| pre.p[(r, k)] * s[k]).sum();
        }
        tally.power += x.iter().map(|z| z.norm_sqr()).sum::<f64>();
        h.mul_vec_into(&x, &mut y);
        for i in 0..n {
            let yi = sr * y[i] + complex_normal(&mut noise_rng, noise_var);
            let out = decode_symbol(yi, a[i], u[i]);
            let e = mod_cell(out - v[i]);
            acc.record(i, keys[i], out, e);
            if let Some(a) = acc.audit.as_mut() {
                a.push((v[i], e));
            }
        }
        acc.symbols += n as u64;
    }
    Ok(())
}

fn run_range(
    gains: &GainMatrix,
    allocations: &[FeedbackAllocation],
    cfg: &LatticeConfig,
    blocks: std::ops::Range<u64>,
) -> Result<Accumulator> {
    let n = gains.rows();
    blocks
        .into_par_iter()
        .try_fold(
            || Accumulator::new(cfg, n),
            |mut acc, b| {
                simulate_block(gains, allocations, cfg, b, &mut acc)?;
                Ok(acc)
            },
        )
        .try_reduce(|| Accumulator::new(cfg, n), |a, b| Ok(a.merge(b)))
}

/// Symbol and modulo-noise pairs of every user, blocks in order; modulo schemes only.
pub fn audit_pairs(
    gains: &GainMatrix,
    allocations: &[FeedbackAllocation],
    cfg: &LatticeConfig,
) -> Result<Vec<(Complex64, Complex64)>> {
    cfg.validate()?;
    if cfg.scheme == Scheme::NoCooperation {
        return Err(Error::Config("audit needs a modulo scheme".into()));
    }
    if allocations.len() != gains.rows() || gains.rows() > gains.cols() {
        return Err(Error::Dimension("allocations do not match the gain matrix".into()));
    }
    let mut acc = Accumulator::new(cfg, gains.rows());
    acc.audit = Some(Vec::new());
    for b in 0..cfg.blocks as u64 {
        simulate_block(gains, allocations, cfg, b, &mut acc)?;
    }
    Ok(acc.audit.unwrap_or_default())
}

fn cell_index(z: Complex64, k: usize) -> usize {
    let bin = |x: f64| (((x + CELL_HALF) / CELL_PERIOD * k as f64).floor().max(0.0) as usize).min(k - 1);
    bin(z.re) * k + bin(z.im)
}

/// Plug-in MI in bits between two cell-valued variables, each partitioned into `k × k`
/// cells, with Miller–Madow correction of all three entropies.
pub fn dependence_mi(pairs: &[(Complex64, Complex64)], k: usize) -> Result<f64> {
    check_bins(k)?;
    if pairs.is_empty() {
        return Err(Error::Empty("paired samples"));
    }
    let cells = k * k;
    let mut joint = vec![0u64; cells * cells];
    let mut pa = vec![0u64; cells];
    let mut pb = vec![0u64; cells];
    for &(a, b) in pairs {
        let (i, j) = (cell_index(a, k), cell_index(b, k));
        joint[i * cells + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let n = pairs.len() as f64;
    let entropy = |counts: &[u64]| {
        let mut h = 0.0;
        let mut occupied = 0usize;
        for &c in counts.iter().filter(|&&c| c > 0) {
            let p = c as f64 / n;
            h -= p * p.log2();
            occupied += 1;
        }
        h + occupied.saturating_sub(1) as f64 / (2.0 * n * std::f64::consts::LN_2)
    };
    Ok(entropy(&pa) + entropy(&pb) - entropy(&joint))
}

/// End-to-end Monte Carlo of the downlink for a fixed feedback allocation per mobile.
pub fn run_downlink(
    gains: &GainMatrix,
    allocations: &[FeedbackAllocation],
    cfg: &LatticeConfig,
) -> Result<SimResult> {
    cfg.validate()?;
    let (n, m) = (gains.rows(), gains.cols());
    if n > m {
        return Err(Error::Dimension(format!("{n} mobiles exceed {m} antennas")));
    }
    if allocations.len() != n {
        return Err(Error::Dimension(format!("{} allocations for {n} mobiles", allocations.len())));
    }
    let batches = cfg.batches.clamp(1, cfg.blocks);
    let per = cfg.blocks.div_ceil(batches);
    let min = cfg.min_stratum();
    let mut batch_mi = Vec::with_capacity(batches);
    let mut total: Option<Accumulator> = None;
    for k in 0..batches {
        let lo = (k * per).min(cfg.blocks) as u64;
        let hi = ((k + 1) * per).min(cfg.blocks) as u64;
        if lo == hi {
            continue;
        }
        let acc = run_range(gains, allocations, cfg, lo..hi)?;
        batch_mi.push(acc.cond.estimate(min)?.mi);
        total = Some(match total {
            Some(t) => t.merge(acc),
            None => acc,
        });
    }
    let mut acc = total.ok_or(Error::Empty("blocks"))?;
    let (nominal_bits, state_rate, power) = acc.totals();
    let est = acc.cond.estimate(min)?;
    let std_error = if batch_mi.len() >= 2 {
        let b = batch_mi.len() as f64;
        let mean = batch_mi.iter().sum::<f64>() / b;
        (batch_mi.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0) / b).sqrt()
    } else {
        f64::NAN
    };
    let denom = cfg.block_len * cfg.blocks as f64 * n as f64;
    Ok(SimResult {
        downlink_se: est.mi,
        std_error,
        pooled_mi: acc.pooled.0.entropy() - acc.pooled.1.entropy(),
        per_user_mi: acc.per_user.iter().map(|(y, e)| y.entropy() - e.entropy()).collect(),
        feedback_se: acc.feedback.total_bits()? as f64 / denom,
        nominal_feedback_se: nominal_bits / denom,
        state_rate: state_rate / acc.user_blocks as f64,
        mean_power: power / (cfg.blocks * cfg.symbols_per_block) as f64 / n as f64,
        blocks: cfg.blocks,
        samples: est.samples,
        strata: est.strata,
    })
}
