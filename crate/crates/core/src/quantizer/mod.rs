//! CSI quantization: the rate-distortion statistical model and the dithered
//! scalar quantizer, plus feedback bit accounting.

pub mod huffman;
pub mod payload;

use crate::allocator::FeedbackAllocation;
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::rng::{complex_normal, complex_uniform};
use crate::topology::GainMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub use huffman::{entropy_code, EntropyCoded, HuffmanCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantizerKind {
    RateDistortion,
    DitheredScalar,
}

impl QuantizerKind {
    /// Per-coefficient rate overhead `Q` in bits.
    pub fn overhead(self) -> f64 {
        match self {
            QuantizerKind::RateDistortion => 0.0,
            QuantizerKind::DitheredScalar => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    pub kind: QuantizerKind,
    pub xi2: f64,
    /// Step size; `Δ²/6 = ξ²` for the scalar kind, unused otherwise.
    pub step: f64,
}

impl QuantizerSpec {
    pub fn new(kind: QuantizerKind, xi2: f64) -> Self {
        Self {
            kind,
            xi2,
            step: step_for_error(xi2),
        }
    }

    pub fn overhead(&self) -> f64 {
        self.kind.overhead()
    }
}

/// Step size whose dithered error variance (real plus imaginary) is `xi2`.
pub fn step_for_error(xi2: f64) -> f64 {
    (6.0 * xi2).sqrt()
}

/// Rate-distortion bits per coherence block for one complex Gaussian coefficient.
pub fn rd_feedback_bits(sigma2: f64, xi2: f64) -> f64 {
    if xi2 < sigma2 {
        (sigma2 / xi2).log2()
    } else {
        0.0
    }
}

/// Entropy bound for the dithered scalar quantizer: `2 + log₂(σ²/ξ²)`.
pub fn scalar_feedback_bound(sigma2: f64, xi2: f64) -> f64 {
    if xi2 < sigma2 {
        2.0 + (sigma2 / xi2).log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarQuantized {
    pub levels: (i64, i64),
    pub value: Complex64,
    pub dither: Complex64,
}

/// Subtractive-dither uniform quantization with a given dither.
pub fn scalar_quantize_with_dither(h: Complex64, step: f64, dither: Complex64) -> ScalarQuantized {
    let lr = ((h.re + dither.re) / step).round();
    let li = ((h.im + dither.im) / step).round();
    ScalarQuantized {
        levels: (lr as i64, li as i64),
        value: Complex64::new(step * lr - dither.re, step * li - dither.im),
        dither,
    }
}

pub fn scalar_quantize<R: Rng + ?Sized>(h: Complex64, step: f64, rng: &mut R) -> ScalarQuantized {
    let dither = complex_uniform(rng, 0.5 * step);
    scalar_quantize_with_dither(h, step, dither)
}

/// Quantized levels fed back by one mobile for one antenna.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntennaLevels {
    pub antenna: usize,
    pub levels: (i64, i64),
}

/// Transmitter-side channel knowledge for one coherence block.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedChannel {
    pub h_hat: CMatrix,
    /// Per-entry error variance `ξ²_{i,j}`.
    pub error_var: GainMatrix,
    /// Subtractive dither, scalar kind only.
    pub dither: Option<CMatrix>,
    /// Scalar kind only: levels per mobile in active-set order.
    pub levels: Vec<Vec<AntennaLevels>>,
    /// Per-mobile bits per block under the kind's accounting rule.
    pub emitted_bits: Vec<f64>,
}

fn check_shapes(h: &CMatrix, gains: &GainMatrix, allocations: &[FeedbackAllocation]) -> Result<()> {
    if h.rows() != gains.rows() || h.cols() != gains.cols() {
        return Err(Error::Dimension(format!(
            "channel {}x{} vs gains {}x{}",
            h.rows(),
            h.cols(),
            gains.rows(),
            gains.cols()
        )));
    }
    if allocations.len() != h.rows() {
        return Err(Error::Dimension(format!(
            "{} allocations for {} mobiles",
            allocations.len(),
            h.rows()
        )));
    }
    Ok(())
}

/// Statistical surrogate of an optimal quantizer.
///
/// Draws `Ĥ | H` from the Gaussian backward channel so that `Ĥ ~ CN(0, σ² − ξ²)`
/// and `ε = H − Ĥ` is independent of `Ĥ` with variance `ξ²`.
pub fn model_quantize<R: Rng + ?Sized>(
    h: &CMatrix,
    gains: &GainMatrix,
    allocations: &[FeedbackAllocation],
    rng: &mut R,
) -> Result<QuantizedChannel> {
    check_shapes(h, gains, allocations)?;
    let (n, m) = (h.rows(), h.cols());
    let mut h_hat = CMatrix::zeros(n, m);
    let mut error_var = Vec::with_capacity(n);
    let mut bits = Vec::with_capacity(n);
    for (i, alloc) in allocations.iter().enumerate() {
        let row = gains.row(i);
        let mut ev = row.to_vec();
        let mut b = 0.0;
        for &j in &alloc.active {
            let s2 = row[j];
            let xi2 = alloc.xi2.min(s2);
            ev[j] = xi2;
            if s2 <= 0.0 {
                continue;
            }
            let r = xi2 / s2;
            let mean = h[(i, j)] * (1.0 - r);
            h_hat[(i, j)] = mean + complex_normal(rng, (s2 - xi2) * r);
            b += rd_feedback_bits(s2, xi2);
        }
        error_var.push(ev);
        bits.push(b);
    }
    Ok(QuantizedChannel {
        h_hat,
        error_var: GainMatrix::from_rows(error_var),
        dither: None,
        levels: Vec::new(),
        emitted_bits: bits,
    })
}

/// Dithered scalar quantization of every active entry at step `√(6ξ²_i)`.
pub fn dithered_quantize<R: Rng + ?Sized>(
    h: &CMatrix,
    gains: &GainMatrix,
    allocations: &[FeedbackAllocation],
    rng: &mut R,
) -> Result<QuantizedChannel> {
    check_shapes(h, gains, allocations)?;
    let (n, m) = (h.rows(), h.cols());
    let mut h_hat = CMatrix::zeros(n, m);
    let mut dither = CMatrix::zeros(n, m);
    let mut error_var = Vec::with_capacity(n);
    let mut levels = Vec::with_capacity(n);
    let mut bits = Vec::with_capacity(n);
    for (i, alloc) in allocations.iter().enumerate() {
        let row = gains.row(i);
        let mut ev = row.to_vec();
        let mut lv = Vec::with_capacity(alloc.active.len());
        let mut b = 0.0;
        let step = step_for_error(alloc.xi2);
        for &j in &alloc.active {
            if step == 0.0 {
                h_hat[(i, j)] = h[(i, j)];
                ev[j] = 0.0;
                b = f64::INFINITY;
                continue;
            }
            let q = scalar_quantize(h[(i, j)], step, rng);
            h_hat[(i, j)] = q.value;
            dither[(i, j)] = q.dither;
            ev[j] = alloc.xi2;
            lv.push(AntennaLevels {
                antenna: j,
                levels: q.levels,
            });
            b += scalar_feedback_bound(row[j], alloc.xi2);
        }
        error_var.push(ev);
        levels.push(lv);
        bits.push(b);
    }
    Ok(QuantizedChannel {
        h_hat,
        error_var: GainMatrix::from_rows(error_var),
        dither: Some(dither),
        levels,
        emitted_bits: bits,
    })
}

/// Largest |level| coded without escape: `⌈8σ/Δ⌉`.
pub fn escape_limit(sigma2: f64, step: f64) -> i64 {
    ((8.0 * sigma2.sqrt() / step).ceil() as i64).max(1)
}

/// Accumulates level histograms per feedback stream and prices them with
/// two-pass Huffman codes.
///
/// Streams are keyed by the caller, typically the antenna's rank in the
/// mobile's descending-gain order, so that statistically identical streams of
/// different mobiles share one codebook.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedbackAccountant {
    streams: BTreeMap<usize, StreamStats>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct StreamStats {
    counts: BTreeMap<i64, u64>,
    limit: i64,
}

impl FeedbackAccountant {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, stream: usize, limit: i64, levels: (i64, i64)) {
        let s = self.streams.entry(stream).or_default();
        s.limit = s.limit.max(limit);
        *s.counts.entry(levels.0).or_default() += 1;
        *s.counts.entry(levels.1).or_default() += 1;
    }

    pub fn merge(&mut self, other: &FeedbackAccountant) {
        for (&k, o) in &other.streams {
            let s = self.streams.entry(k).or_default();
            s.limit = s.limit.max(o.limit);
            for (&l, &c) in &o.counts {
                *s.counts.entry(l).or_default() += c;
            }
        }
    }

    /// Total Huffman-coded bits over all recorded streams.
    pub fn total_bits(&self) -> Result<u64> {
        self.streams
            .values()
            .map(|s| huffman::entropy_code_counts(&s.counts, s.limit).map(|c| c.bits))
            .sum()
    }

    /// Per-stream coding results, keyed as recorded.
    pub fn per_stream(&self) -> Result<BTreeMap<usize, EntropyCoded>> {
        self.streams
            .iter()
            .map(|(&k, s)| Ok((k, huffman::entropy_code_counts(&s.counts, s.limit)?)))
            .collect()
    }
}
