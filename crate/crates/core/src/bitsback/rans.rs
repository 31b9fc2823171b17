//! rANS with a 64-bit state and 32-bit renormalization words.
//!
//! The stream is a stack: `encode` pushes, `decode` pops the most recently
//! pushed symbol. Serialized as the final state (u64 LE) followed by the
//! emitted words (u32 LE) in emission order; decoding consumes words from
//! the end.

use crate::error::{Error, Result};

/// Lower bound of the normalized state interval `[L, L·2³²)`.
pub const RANS_L: u64 = 1 << 31;
/// Probability precision: frequencies sum to `2^PRECISION`.
pub const PRECISION: u32 = 31;
const TOTAL: u64 = 1 << PRECISION;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rans64 {
    state: u64,
    words: Vec<u32>,
}

impl Default for Rans64 {
    fn default() -> Self {
        Self::new()
    }
}

impl Rans64 {
    pub fn new() -> Self {
        Self {
            state: RANS_L,
            words: Vec::new(),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || !(bytes.len() - 8).is_multiple_of(4) {
            return Err(Error::TruncatedPayload {
                expected: 8 + (bytes.len().saturating_sub(8)).div_ceil(4) * 4,
                found: bytes.len(),
            });
        }
        let state = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        if !(RANS_L..RANS_L << 32).contains(&state) {
            return Err(Error::CorruptStream(format!("state {state:#x} outside the normalized range")));
        }
        let words = bytes[8..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { state, words })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&self.state.to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn byte_len(&self) -> usize {
        8 + 4 * self.words.len()
    }

    pub fn bit_len(&self) -> u64 {
        8 * self.byte_len() as u64
    }

    /// Information content held by the coder, in bits.
    pub fn content_bits(&self) -> f64 {
        (self.state as f64).log2() + 32.0 * self.words.len() as f64
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    /// True when the coder is back at its initial empty state.
    pub fn is_empty(&self) -> bool {
        self.state == RANS_L && self.words.is_empty()
    }

    /// Pushes the symbol occupying `[start, start + freq)` of `2^PRECISION`.
    pub fn encode(&mut self, start: u64, freq: u64) {
        debug_assert!(freq > 0 && start + freq <= TOTAL);
        let x_max = ((RANS_L >> PRECISION) << 32) * freq;
        let mut x = self.state;
        if x >= x_max {
            self.words.push(x as u32);
            x >>= 32;
        }
        self.state = ((x / freq) << PRECISION) + (x % freq) + start;
    }

    /// Cumulative value identifying the symbol on top of the stack.
    pub fn peek(&self) -> u64 {
        self.state & (TOTAL - 1)
    }

    /// Pops the symbol `[start, start + freq)` previously identified by `peek`.
    pub fn decode_advance(&mut self, start: u64, freq: u64) -> Result<()> {
        let cum = self.peek();
        debug_assert!(start <= cum && cum < start + freq);
        let mut x = freq * (self.state >> PRECISION) + cum - start;
        if x < RANS_L {
            let w = self.words.pop().ok_or(Error::StreamExhausted)?;
            x = (x << 32) | u64::from(w);
        }
        self.state = x;
        Ok(())
    }

    /// Pushes a `k`-bit value with a flat distribution.
    pub fn encode_bits(&mut self, value: u32, k: u32) {
        debug_assert!(k <= PRECISION && u64::from(value) < 1u64 << k);
        let shift = PRECISION - k;
        self.encode(u64::from(value) << shift, 1 << shift);
    }

    pub fn decode_bits(&mut self, k: u32) -> Result<u32> {
        let shift = PRECISION - k;
        let v = self.peek() >> shift;
        self.decode_advance(v << shift, 1 << shift)?;
        Ok(v as u32)
    }

    /// Pushes a run `[c, c + count)` of a near-uniform distribution over `r` values.
    pub fn encode_uniform_run(&mut self, c: u64, count: u64, r: u64) {
        let (start, freq) = uniform_interval(c, count, r);
        self.encode(start, freq);
    }

    pub fn encode_uniform(&mut self, c: u64, r: u64) {
        self.encode_uniform_run(c, 1, r);
    }

    /// Index under the near-uniform distribution over `r` values on top of
    /// the stack, without popping it.
    pub fn peek_uniform(&self, r: u64) -> u64 {
        uniform_symbol(self.peek(), r)
    }

    pub fn decode_uniform(&mut self, r: u64) -> Result<u64> {
        let c = self.peek_uniform(r);
        self.decode_uniform_run(c, 1, r)?;
        Ok(c)
    }

    pub fn decode_uniform_run(&mut self, c: u64, count: u64, r: u64) -> Result<()> {
        let (start, freq) = uniform_interval(c, count, r);
        self.decode_advance(start, freq)
    }
}

/// `⌊c·2^P / r⌋`, the quantized cdf of the near-uniform distribution.
#[inline]
fn uniform_cdf(c: u64, r: u64) -> u64 {
    ((u128::from(c) << PRECISION) / u128::from(r)) as u64
}

#[inline]
fn uniform_interval(c: u64, count: u64, r: u64) -> (u64, u64) {
    debug_assert!((1..=TOTAL).contains(&r) && count >= 1 && c + count <= r);
    let start = uniform_cdf(c, r);
    (start, uniform_cdf(c + count, r) - start)
}

/// Inverse of `uniform_cdf`: the `c` with `cdf(c) ≤ s < cdf(c + 1)`.
#[inline]
fn uniform_symbol(s: u64, r: u64) -> u64 {
    (((u128::from(s) + 1) * u128::from(r) - 1) >> PRECISION) as u64
}
