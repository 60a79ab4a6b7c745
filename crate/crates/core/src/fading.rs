//! Rayleigh block fading and coherence-block sizing.

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::rng::{complex_normal, substream, Purpose};
use crate::topology::GainMatrix;
use num_complex::Complex64;
use std::io::{Read, Write};

pub const DEFAULT_SENSITIVITY_FACTOR: f64 = 40.0;

/// Block-fading dimensions derived from Doppler and delay spread.
///
/// Coherence time is `1/(k·f_d)` and coherence bandwidth `1/(k·t_d)`; their
/// product is the number of channel uses per block for any OFDM numerology,
/// so absolute symbol duration never enters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceSpec {
    pub doppler_hz: f64,
    pub delay_spread_s: f64,
    pub sensitivity_factor: f64,
    pub coherence_time_s: f64,
    pub coherence_bandwidth_hz: f64,
    /// Channel uses per coherence block.
    pub symbols: u64,
}

pub fn coherence_block(
    doppler_hz: f64,
    delay_spread_s: f64,
    sensitivity_factor: f64,
) -> Result<CoherenceSpec> {
    for (name, v) in [
        ("doppler_hz", doppler_hz),
        ("delay_spread_s", delay_spread_s),
        ("sensitivity_factor", sensitivity_factor),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::domain(name, "positive and finite", v));
        }
    }
    let coherence_time_s = 1.0 / (sensitivity_factor * doppler_hz);
    let coherence_bandwidth_hz = 1.0 / (sensitivity_factor * delay_spread_s);
    let exact = coherence_time_s * coherence_bandwidth_hz;
    let symbols = exact.round();
    if symbols < 1.0 {
        return Err(Error::CoherenceTooShort(exact));
    }
    Ok(CoherenceSpec {
        doppler_hz,
        delay_spread_s,
        sensitivity_factor,
        coherence_time_s,
        coherence_bandwidth_hz,
        symbols: symbols as u64,
    })
}

/// One coherence block's channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: CMatrix,
    pub block: u64,
    pub seed: u64,
}

/// Fills an `rows × cols` matrix with `CN(0, gains[i][j])` draws.
fn draw(gains: &GainMatrix, seed: u64, purpose: Purpose, block: u64) -> CMatrix {
    let mut rng = substream(seed, purpose, block);
    CMatrix::from_fn(gains.rows(), gains.cols(), |i, j| {
        // Always consume the draw so masked entries do not shift the stream.
        let z = complex_normal(&mut rng, 1.0);
        z * gains.get(i, j).sqrt()
    })
}

/// Downlink channel `H` (N × M) for coherence block `block`.
pub fn sample_downlink(gains: &GainMatrix, seed: u64, block: u64) -> ChannelRealization {
    ChannelRealization {
        h: draw(gains, seed, Purpose::Downlink, block),
        block,
        seed,
    }
}

/// Uplink channel `H_UL` (M × N); `gains_ul` is indexed antenna × mobile.
pub fn sample_uplink(gains_ul: &GainMatrix, seed: u64, block: u64) -> CMatrix {
    draw(gains_ul, seed, Purpose::Uplink, block)
}

/// Writes realizations as `N, M, blocks` (u64 LE) then interleaved re/im f64 LE, row-major.
pub fn write_realizations<W: Write>(mut w: W, blocks: &[ChannelRealization]) -> Result<()> {
    let (n, m) = blocks
        .first()
        .map(|b| (b.h.rows(), b.h.cols()))
        .unwrap_or((0, 0));
    for v in [n as u64, m as u64, blocks.len() as u64] {
        w.write_all(&v.to_le_bytes())?;
    }
    for b in blocks {
        if b.h.rows() != n || b.h.cols() != m {
            return Err(Error::Dimension("realizations differ in shape".into()));
        }
        for z in b.h.as_slice() {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads the format written by [`write_realizations`].
pub fn read_realizations<R: Read>(mut r: R) -> Result<Vec<CMatrix>> {
    let mut word = [0u8; 8];
    let mut next = |r: &mut R| -> Result<[u8; 8]> {
        r.read_exact(&mut word)?;
        Ok(word)
    };
    let n = u64::from_le_bytes(next(&mut r)?) as usize;
    let m = u64::from_le_bytes(next(&mut r)?) as usize;
    let count = u64::from_le_bytes(next(&mut r)?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut h = CMatrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                let re = f64::from_le_bytes(next(&mut r)?);
                let im = f64::from_le_bytes(next(&mut r)?);
                h[(i, j)] = Complex64::new(re, im);
            }
        }
        out.push(h);
    }
    Ok(out)
}
