//! Adaptive binary arithmetic coder with 12-bit probabilities.
//!
//! The coder keeps a 32-bit `low`/`range` pair and renormalizes byte-wise
//! whenever `range` drops below 2^24, so every coding step splits a range of
//! at least 2^24 and neither sub-interval can be empty. Carries out of `low`
//! are propagated into bytes already written. Only integer arithmetic is used,
//! so the byte stream is identical on every platform.

use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 12;
pub const PROB_ONE: u32 = 1 << PROB_BITS;
pub const ADAPT_SHIFT: u32 = 5;
const HALF: u32 = PROB_ONE / 2;
const RENORM: u32 = 1 << 24;

/// Adaptive estimate of `P(bit = 0) = p / 4096`, kept within `[1, 4095]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinProbability(u16);

impl Default for BinProbability {
    fn default() -> Self {
        BinProbability(HALF as u16)
    }
}

impl BinProbability {
    pub fn p(self) -> u32 {
        self.0 as u32
    }

    /// Probability (in `[0, 1]`) this state assigns to `bit`.
    pub fn probability_of(self, bit: bool) -> f64 {
        let p0 = self.p() as f64 / PROB_ONE as f64;
        if bit {
            1.0 - p0
        } else {
            p0
        }
    }

    pub fn update(&mut self, bit: bool) {
        let p = self.p();
        let next = if bit { p - (p >> ADAPT_SHIFT) } else { p + ((PROB_ONE - p) >> ADAPT_SHIFT) };
        self.0 = next as u16;
    }
}

/// Where a bin takes its probability from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinContext {
    /// Index into a table of adaptive states.
    Adaptive(usize),
    /// Fixed `P = 1/2`, no adaptation.
    Bypass,
}

#[derive(Debug, Clone)]
pub struct ArithEncoder {
    low: u64,
    range: u32,
    out: Vec<u8>,
}

impl Default for ArithEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl ArithEncoder {
    pub fn new() -> Self {
        ArithEncoder {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    fn carry(&mut self) {
        for byte in self.out.iter_mut().rev() {
            let (v, overflow) = byte.overflowing_add(1);
            *byte = v;
            if !overflow {
                return;
            }
        }
        unreachable!("carry past the first byte of the stream");
    }

    fn code(&mut self, bit: bool, p0: u32) {
        let bound = (self.range >> PROB_BITS) * p0;
        if bit {
            self.low += bound as u64;
            self.range -= bound;
        } else {
            self.range = bound;
        }
        if self.low >> 32 != 0 {
            self.carry();
            self.low &= 0xFFFF_FFFF;
        }
        while self.range < RENORM {
            self.out.push((self.low >> 24) as u8);
            self.low = (self.low << 8) & 0xFFFF_FFFF;
            self.range <<= 8;
        }
    }

    pub fn encode(&mut self, bit: bool, state: &mut BinProbability) {
        self.code(bit, state.p());
        state.update(bit);
    }

    pub fn encode_bypass(&mut self, bit: bool) {
        self.code(bit, HALF);
    }

    /// Terminates the stream with the fewest bytes (1 to 4) that pin a value
    /// inside the final interval once the decoder pads with zeros.
    pub fn finish(mut self) -> Vec<u8> {
        let end = self.low + self.range as u64;
        for k in 1..=4u32 {
            let shift = 32 - 8 * k;
            let mask = (1u64 << shift) - 1;
            let mut v = (self.low + mask) & !mask;
            if v < end {
                if v >> 32 != 0 {
                    self.carry();
                    v &= 0xFFFF_FFFF;
                }
                for i in 0..k {
                    self.out.push((v >> (24 - 8 * i)) as u8);
                }
                break;
            }
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct ArithDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    padded: usize,
    code: u32,
    range: u32,
}

impl<'a> ArithDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Truncated("arithmetic-coded stream"));
        }
        let mut d = ArithDecoder {
            data,
            pos: 0,
            padded: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        if let Some(&b) = self.data.get(self.pos) {
            self.pos += 1;
            Ok(b)
        } else if self.padded < 3 {
            // The encoder's flush omits at most three trailing zero bytes.
            self.padded += 1;
            Ok(0)
        } else {
            Err(Error::Truncated("arithmetic-coded stream"))
        }
    }

    fn decode_with(&mut self, p0: u32) -> Result<bool> {
        let bound = (self.range >> PROB_BITS) * p0;
        let bit = if self.code < bound {
            self.range = bound;
            false
        } else {
            self.code -= bound;
            self.range -= bound;
            true
        };
        while self.range < RENORM {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(bit)
    }

    pub fn decode(&mut self, state: &mut BinProbability) -> Result<bool> {
        let bit = self.decode_with(state.p())?;
        state.update(bit);
        Ok(bit)
    }

    pub fn decode_bypass(&mut self) -> Result<bool> {
        self.decode_with(HALF)
    }

    /// Bytes of the input not yet consumed.
    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
}

fn state_for(states: &mut [BinProbability], index: usize) -> Result<&mut BinProbability> {
    let n = states.len();
    states
        .get_mut(index)
        .ok_or_else(|| Error::Usage(format!("context {index} out of {n}")))
}

/// Codes a bin sequence with `n_contexts` fresh adaptive states.
pub fn ac_encode(bins: &[(bool, BinContext)], n_contexts: usize) -> Result<Vec<u8>> {
    let mut states = vec![BinProbability::default(); n_contexts];
    let mut enc = ArithEncoder::new();
    for &(bit, ctx) in bins {
        match ctx {
            BinContext::Adaptive(i) => enc.encode(bit, state_for(&mut states, i)?),
            BinContext::Bypass => enc.encode_bypass(bit),
        }
    }
    Ok(enc.finish())
}

/// Inverse of [`ac_encode`] given the same context sequence.
pub fn ac_decode(bytes: &[u8], contexts: &[BinContext], n_contexts: usize) -> Result<Vec<bool>> {
    let mut states = vec![BinProbability::default(); n_contexts];
    let mut dec = ArithDecoder::new(bytes)?;
    contexts
        .iter()
        .map(|&ctx| match ctx {
            BinContext::Adaptive(i) => dec.decode(state_for(&mut states, i)?),
            BinContext::Bypass => dec.decode_bypass(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probability_stays_in_range() {
        let mut s = BinProbability::default();
        for _ in 0..10_000 {
            s.update(false);
        }
        assert!(s.p() >= 1 && s.p() <= 4095);
        for _ in 0..10_000 {
            s.update(true);
        }
        assert!(s.p() >= 1 && s.p() <= 4095);
    }

    #[test]
    fn empty_stream() {
        let bytes = ac_encode(&[], 1).unwrap();
        assert_eq!(bytes.len(), 1);
        assert!(ac_decode(&bytes, &[], 1).unwrap().is_empty());
    }

    #[test]
    fn random_bins_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bins: Vec<(bool, BinContext)> = (0..10_000)
            .map(|_| {
                let ctx = if rng.random_bool(0.2) {
                    BinContext::Bypass
                } else {
                    BinContext::Adaptive(rng.random_range(0..8))
                };
                (rng.random_bool(0.3), ctx)
            })
            .collect();
        let bytes = ac_encode(&bins, 8).unwrap();
        let ctxs: Vec<BinContext> = bins.iter().map(|b| b.1).collect();
        let back = ac_decode(&bytes, &ctxs, 8).unwrap();
        assert_eq!(back, bins.iter().map(|b| b.0).collect::<Vec<_>>());
    }

    #[test]
    fn zero_run_close_to_adaptive_ideal() {
        let mut ideal = 0.0;
        let mut s = BinProbability::default();
        for _ in 0..10_000 {
            ideal -= s.probability_of(false).log2();
            s.update(false);
        }
        let bins = vec![(false, BinContext::Adaptive(0)); 10_000];
        let bits = ac_encode(&bins, 1).unwrap().len() as f64 * 8.0;
        assert!(bits <= 1.15 * ideal, "{bits} bits vs ideal {ideal}");
    }

    #[test]
    fn truncation_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bins: Vec<(bool, BinContext)> =
            (0..2000).map(|_| (rng.random_bool(0.5), BinContext::Bypass)).collect();
        let bytes = ac_encode(&bins, 0).unwrap();
        let ctxs = vec![BinContext::Bypass; bins.len()];
        let cut = &bytes[..bytes.len() - 8];
        assert!(matches!(ac_decode(cut, &ctxs, 0), Err(Error::Truncated(_))));
        assert!(matches!(ac_decode(&[], &ctxs, 0), Err(Error::Truncated(_))));
    }
}
