//! Byte layout of one mobile's feedback message.
//!
//! ```text
//! u32 mobile, u16 antenna count
//! per antenna:
//!   u16 antenna, f64 step, u32 level count, i64 escape limit,
//!   u16 codebook size, codebook entries (i64 level | ESCAPE_TAG, u8 length),
//!   u32 coded bit count, coded levels (re, im interleaved), zero padded to a byte
//! ```
//! All integers and floats are little-endian.

use super::huffman::{entropy_code, BitReader, BitWriter, HuffmanCode, Symbol};
use crate::error::{Error, Result};
use std::collections::BTreeMap;

const ESCAPE_TAG: i64 = i64::MIN;

#[derive(Debug, Clone, PartialEq)]
pub struct AntennaFeedback {
    pub antenna: u16,
    pub step: f64,
    pub limit: i64,
    /// Real and imaginary levels interleaved.
    pub levels: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPayload {
    pub mobile: u32,
    pub antennas: Vec<AntennaFeedback>,
}

/// Serialized payload plus the number of bits spent on coded levels alone.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPayload {
    pub bytes: Vec<u8>,
    pub level_bits: u64,
}

impl FeedbackPayload {
    pub fn encode(&self) -> Result<EncodedPayload> {
        let mut out = Vec::new();
        out.extend(self.mobile.to_le_bytes());
        out.extend((self.antennas.len() as u16).to_le_bytes());
        let mut level_bits = 0;
        for a in &self.antennas {
            out.extend(a.antenna.to_le_bytes());
            out.extend(a.step.to_le_bytes());
            out.extend((a.levels.len() as u32).to_le_bytes());
            out.extend(a.limit.to_le_bytes());
            if a.levels.is_empty() {
                out.extend(0u16.to_le_bytes());
                out.extend(0u32.to_le_bytes());
                continue;
            }
            let coded = entropy_code(&a.levels, a.limit)?;
            let lengths = coded.code.lengths();
            out.extend((lengths.len() as u16).to_le_bytes());
            for (s, &len) in lengths {
                let tag = match *s {
                    Symbol::Level(l) => l,
                    Symbol::Escape => ESCAPE_TAG,
                };
                out.extend(tag.to_le_bytes());
                out.push(len as u8);
            }
            let mut w = BitWriter::new();
            coded.code.encode(&a.levels, &mut w)?;
            let bits = w.bits_written();
            level_bits += bits;
            out.extend((bits as u32).to_le_bytes());
            out.extend(w.into_bytes());
        }
        Ok(EncodedPayload {
            bytes: out,
            level_bits,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let mobile = u32::from_le_bytes(cur.take()?);
        let count = u16::from_le_bytes(cur.take()?);
        let mut antennas = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let antenna = u16::from_le_bytes(cur.take()?);
            let step = f64::from_le_bytes(cur.take()?);
            let n = u32::from_le_bytes(cur.take()?) as usize;
            let limit = i64::from_le_bytes(cur.take()?);
            let entries = u16::from_le_bytes(cur.take()?);
            let mut lengths = BTreeMap::new();
            for _ in 0..entries {
                let tag = i64::from_le_bytes(cur.take()?);
                let [len] = cur.take::<1>()?;
                let s = if tag == ESCAPE_TAG {
                    Symbol::Escape
                } else {
                    Symbol::Level(tag)
                };
                lengths.insert(s, len as u32);
            }
            let bits = u32::from_le_bytes(cur.take()?) as usize;
            let body = cur.slice(bits.div_ceil(8))?;
            let levels = if n == 0 {
                Vec::new()
            } else {
                HuffmanCode::from_lengths(lengths, limit).decode(&mut BitReader::new(body), n)?
            };
            antennas.push(AntennaFeedback {
                antenna,
                step,
                limit,
                levels,
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Parse("trailing bytes after payload".into()));
        }
        Ok(Self { mobile, antennas })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn slice(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or(Error::Parse("payload truncated".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.slice(N)?.try_into().expect("slice length"))
    }
}
