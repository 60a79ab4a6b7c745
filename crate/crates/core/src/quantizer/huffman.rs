//! Two-pass canonical Huffman coding of quantizer levels.

use crate::error::{Error, Result};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

/// Raw width of an escaped level, after zigzag mapping.
pub const ESCAPE_RAW_BITS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Level(i64),
    Escape,
}

/// Prefix code over a truncated level alphabet plus an escape symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct HuffmanCode {
    /// Largest |level| coded directly; anything beyond goes through `Escape`.
    pub limit: i64,
    lengths: BTreeMap<Symbol, u32>,
    codes: BTreeMap<Symbol, u64>,
}

impl HuffmanCode {
    pub fn symbol_for(&self, level: i64) -> Symbol {
        if level.abs() <= self.limit {
            Symbol::Level(level)
        } else {
            Symbol::Escape
        }
    }

    /// Builds the code from level occurrence counts.
    pub fn from_counts(counts: &BTreeMap<i64, u64>, limit: i64) -> Result<Self> {
        let mut sym_counts: BTreeMap<Symbol, u64> = BTreeMap::new();
        for (&level, &c) in counts {
            if c == 0 {
                continue;
            }
            let s = if level.abs() <= limit {
                Symbol::Level(level)
            } else {
                Symbol::Escape
            };
            *sym_counts.entry(s).or_default() += c;
        }
        if sym_counts.is_empty() {
            return Err(Error::Empty("level stream"));
        }
        let lengths = code_lengths(&sym_counts);
        let codes = canonical_codes(&lengths);
        Ok(Self {
            limit,
            lengths,
            codes,
        })
    }

    pub fn from_lengths(lengths: BTreeMap<Symbol, u32>, limit: i64) -> Self {
        let codes = canonical_codes(&lengths);
        Self {
            limit,
            lengths,
            codes,
        }
    }

    pub fn lengths(&self) -> &BTreeMap<Symbol, u32> {
        &self.lengths
    }

    /// Bits spent on one level, including the raw escape payload.
    pub fn cost(&self, level: i64) -> Option<u64> {
        let s = self.symbol_for(level);
        let len = *self.lengths.get(&s)? as u64;
        Some(if s == Symbol::Escape {
            len + ESCAPE_RAW_BITS as u64
        } else {
            len
        })
    }

    /// Total bits for a stream summarised by its level counts.
    pub fn total_bits(&self, counts: &BTreeMap<i64, u64>) -> Option<u64> {
        counts
            .iter()
            .try_fold(0u64, |acc, (&l, &c)| Some(acc + c * self.cost(l)?))
    }

    pub fn encode(&self, levels: &[i64], out: &mut BitWriter) -> Result<()> {
        for &l in levels {
            let s = self.symbol_for(l);
            let (Some(&len), Some(&code)) = (self.lengths.get(&s), self.codes.get(&s)) else {
                return Err(Error::Config(format!("level {l} missing from codebook")));
            };
            out.write(code, len);
            if s == Symbol::Escape {
                out.write(zigzag(l), ESCAPE_RAW_BITS);
            }
        }
        Ok(())
    }

    pub fn decode(&self, input: &mut BitReader<'_>, count: usize) -> Result<Vec<i64>> {
        let table: BTreeMap<(u32, u64), Symbol> = self
            .lengths
            .iter()
            .map(|(&s, &len)| ((len, self.codes[&s]), s))
            .collect();
        let max_len = self.lengths.values().copied().max().unwrap_or(0);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut code = 0u64;
            let mut len = 0u32;
            let sym = loop {
                code = (code << 1) | input.read(1)?;
                len += 1;
                if let Some(&s) = table.get(&(len, code)) {
                    break s;
                }
                if len > max_len {
                    return Err(Error::Parse("invalid prefix code".into()));
                }
            };
            out.push(match sym {
                Symbol::Level(l) => l,
                Symbol::Escape => unzigzag(input.read(ESCAPE_RAW_BITS)?),
            });
        }
        Ok(out)
    }
}

/// Huffman code lengths; a single-symbol alphabet gets a 1-bit code.
fn code_lengths(counts: &BTreeMap<Symbol, u64>) -> BTreeMap<Symbol, u32> {
    let symbols: Vec<Symbol> = counts.keys().copied().collect();
    if symbols.len() == 1 {
        return BTreeMap::from([(symbols[0], 1)]);
    }
    // Nodes: leaves 0..n, internal nodes appended; parent links give depths.
    let n = symbols.len();
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = symbols
        .iter()
        .enumerate()
        .map(|(i, s)| Reverse((counts[s], i)))
        .collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((c1, a)) = heap.pop().unwrap();
        let Reverse((c2, b)) = heap.pop().unwrap();
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((c1 + c2, next)));
        next += 1;
    }
    symbols
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut depth = 0;
            let mut node = i;
            while parent[node] != usize::MAX {
                node = parent[node];
                depth += 1;
            }
            (s, depth)
        })
        .collect()
}

fn canonical_codes(lengths: &BTreeMap<Symbol, u32>) -> BTreeMap<Symbol, u64> {
    let mut order: Vec<(u32, Symbol)> = lengths.iter().map(|(&s, &l)| (l, s)).collect();
    order.sort();
    let mut codes = BTreeMap::new();
    let mut code = 0u64;
    let mut prev_len = order.first().map_or(0, |x| x.0);
    for (len, s) in order {
        code <<= len - prev_len;
        prev_len = len;
        codes.insert(s, code);
        code += 1;
    }
    codes
}

fn zigzag(v: i64) -> u64 {
    (((v << 1) ^ (v >> 63)) as u64) & ((1u64 << ESCAPE_RAW_BITS) - 1)
}

fn unzigzag(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

/// Result of coding one level stream.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyCoded {
    pub code: HuffmanCode,
    pub symbols: u64,
    pub bits: u64,
    /// Empirical entropy of the coded symbol stream, in bits per symbol.
    pub entropy: f64,
}

impl EntropyCoded {
    pub fn bits_per_symbol(&self) -> f64 {
        self.bits as f64 / self.symbols as f64
    }
}

pub fn count_levels(levels: &[i64]) -> BTreeMap<i64, u64> {
    let mut counts = BTreeMap::new();
    for &l in levels {
        *counts.entry(l).or_insert(0) += 1;
    }
    counts
}

/// Codes a level stream with a codebook trained on the same stream.
pub fn entropy_code(levels: &[i64], limit: i64) -> Result<EntropyCoded> {
    if levels.is_empty() {
        return Err(Error::Empty("level stream"));
    }
    entropy_code_counts(&count_levels(levels), limit)
}

/// As [`entropy_code`], from a histogram of the stream.
pub fn entropy_code_counts(counts: &BTreeMap<i64, u64>, limit: i64) -> Result<EntropyCoded> {
    let code = HuffmanCode::from_counts(counts, limit)?;
    let symbols: u64 = counts.values().sum();
    let bits = code.total_bits(counts).expect("code covers its own stream");
    let mut sym_counts: BTreeMap<Symbol, u64> = BTreeMap::new();
    for (&l, &c) in counts {
        *sym_counts.entry(code.symbol_for(l)).or_default() += c;
    }
    let n = symbols as f64;
    let entropy = sym_counts
        .values()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    Ok(EntropyCoded {
        code,
        symbols,
        bits,
        entropy,
    })
}

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    filled: u32,
    written: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `n` bits of `value`, most significant first.
    pub fn write(&mut self, value: u64, n: u32) {
        for k in (0..n).rev() {
            self.acc = (self.acc << 1) | ((value >> k) & 1);
            self.filled += 1;
            self.written += 1;
            if self.filled == 8 {
                self.bytes.push(self.acc as u8);
                self.acc = 0;
                self.filled = 0;
            }
        }
    }

    pub fn bits_written(&self) -> u64 {
        self.written
    }

    /// Pads with zeros to the next byte boundary.
    pub fn align(&mut self) {
        if self.filled > 0 {
            let pad = 8 - self.filled;
            self.acc <<= pad;
            self.bytes.push(self.acc as u8);
            self.acc = 0;
            self.filled = 0;
        }
    }

    pub fn write_bytes(&mut self, b: &[u8]) {
        self.align();
        self.bytes.extend_from_slice(b);
        self.written += 8 * b.len() as u64;
    }

    pub fn into_bytes(mut self) -> Vec<u8> {
        self.align();
        self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn read(&mut self, n: u32) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..n {
            let byte = *self
                .bytes
                .get(self.pos / 8)
                .ok_or(Error::Parse("payload truncated".into()))?;
            v = (v << 1) | ((byte >> (7 - self.pos % 8)) & 1) as u64;
            self.pos += 1;
        }
        Ok(v)
    }

    pub fn align(&mut self) {
        self.pos = self.pos.div_ceil(8) * 8;
    }

    pub fn read_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.align();
        let start = self.pos / 8;
        let out = self
            .bytes
            .get(start..start + n)
            .ok_or(Error::Parse("payload truncated".into()))?;
        self.pos += 8 * n;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_stream_costs_one_bit() {
        let coded = entropy_code(&[3; 100], 8).unwrap();
        assert_eq!(coded.bits, 100);
        assert_eq!(coded.entropy, 0.0);
    }

    #[test]
    fn dyadic_distribution_is_coded_at_entropy() {
        let mut levels = vec![0; 8];
        levels.extend([1; 4]);
        levels.extend([-1; 2]);
        levels.extend([2; 2]);
        let coded = entropy_code(&levels, 8).unwrap();
        assert!((coded.bits_per_symbol() - coded.entropy).abs() < 1e-12);
        assert!((coded.entropy - 1.75).abs() < 1e-12);
    }

    #[test]
    fn escape_round_trip() {
        let levels = vec![0, 1, -1, 0, 500, -77, 0, 2];
        let coded = entropy_code(&levels, 4).unwrap();
        let mut w = BitWriter::new();
        coded.code.encode(&levels, &mut w).unwrap();
        assert_eq!(w.bits_written(), coded.bits);
        let bytes = w.into_bytes();
        let back = coded.code.decode(&mut BitReader::new(&bytes), levels.len()).unwrap();
        assert_eq!(back, levels);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(entropy_code(&[], 4).is_err());
    }

    #[test]
    fn zigzag_inverts() {
        for v in [-5i64, -1, 0, 1, 7, 1 << 20, -(1 << 20)] {
            assert_eq!(unzigzag(zigzag(v)), v);
        }
    }
}
