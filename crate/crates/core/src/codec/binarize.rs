//! Symbol binarization: zero flag, bypass sign, order-0 Exp-Golomb magnitude.
//!
//! Context layout per map: slot 0 is the zero flag, slots 1..=5 are the
//! Exp-Golomb prefix bins at depth 0, 1, 2, 3 and ≥4. Sign and suffix bins
//! are bypass-coded.

use super::arith::{ArithDecoder, ArithEncoder, BinContext, BinProbability};
use crate::error::{Error, Result};
use crate::quantization::{Symbols, MAX_SYMBOL};

pub const PREFIX_DEPTHS: usize = 5;
pub const CONTEXTS_PER_MAP: usize = 1 + PREFIX_DEPTHS;
/// Longest prefix a legal symbol needs (|k| - 1 ≤ 2^15 - 2).
const MAX_PREFIX: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    Zero,
    Sign,
    Prefix(usize),
    Suffix,
}

impl BinKind {
    pub fn context(self, map: usize) -> BinContext {
        match self {
            BinKind::Zero => BinContext::Adaptive(map * CONTEXTS_PER_MAP),
            BinKind::Prefix(depth) => {
                BinContext::Adaptive(map * CONTEXTS_PER_MAP + 1 + depth.min(PREFIX_DEPTHS - 1))
            }
            BinKind::Sign | BinKind::Suffix => BinContext::Bypass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bin {
    pub bit: bool,
    pub kind: BinKind,
}

fn check_symbol(k: i32) -> Result<()> {
    if k == i32::MIN || k.abs() > MAX_SYMBOL {
        return Err(Error::Stream(format!("symbol {k} outside ±{MAX_SYMBOL}")));
    }
    Ok(())
}

/// Bins of one symbol, in coding order.
pub fn binarize(k: i32) -> Result<Vec<Bin>> {
    check_symbol(k)?;
    let mut bins = vec![Bin { bit: k == 0, kind: BinKind::Zero }];
    if k == 0 {
        return Ok(bins);
    }
    bins.push(Bin { bit: k < 0, kind: BinKind::Sign });
    let v = k.unsigned_abs() - 1;
    let len = (v + 1).ilog2() as usize;
    for depth in 0..len {
        bins.push(Bin { bit: false, kind: BinKind::Prefix(depth) });
    }
    bins.push(Bin { bit: true, kind: BinKind::Prefix(len) });
    let rest = v + 1 - (1 << len);
    for i in (0..len).rev() {
        bins.push(Bin { bit: (rest >> i) & 1 == 1, kind: BinKind::Suffix });
    }
    Ok(bins)
}

fn put(enc: &mut ArithEncoder, states: &mut [BinProbability], bin: Bin, map: usize) {
    match bin.kind.context(map) {
        BinContext::Adaptive(i) => enc.encode(bin.bit, &mut states[i]),
        BinContext::Bypass => enc.encode_bypass(bin.bit),
    }
}

fn get(dec: &mut ArithDecoder<'_>, states: &mut [BinProbability], kind: BinKind, map: usize) -> Result<bool> {
    match kind.context(map) {
        BinContext::Adaptive(i) => dec.decode(&mut states[i]),
        BinContext::Bypass => dec.decode_bypass(),
    }
}

/// Codes symbols in storage order (batch, map, row, column).
pub fn encode_symbols(symbols: &Symbols) -> Result<Vec<u8>> {
    let [_, m, h, w] = symbols.shape;
    let plane = h * w;
    let mut states = vec![BinProbability::default(); m * CONTEXTS_PER_MAP];
    let mut enc = ArithEncoder::new();
    for (i, &k) in symbols.data.iter().enumerate() {
        let map = (i / plane.max(1)) % m.max(1);
        for bin in binarize(k)? {
            put(&mut enc, &mut states, bin, map);
        }
    }
    Ok(enc.finish())
}

fn decode_one(dec: &mut ArithDecoder<'_>, states: &mut [BinProbability], map: usize) -> Result<i32> {
    if get(dec, states, BinKind::Zero, map)? {
        return Ok(0);
    }
    let negative = get(dec, states, BinKind::Sign, map)?;
    let mut len = 0;
    while !get(dec, states, BinKind::Prefix(len), map)? {
        len += 1;
        if len > MAX_PREFIX {
            return Err(Error::Stream("Exp-Golomb prefix too long".into()));
        }
    }
    let mut rest = 0u32;
    for _ in 0..len {
        rest = (rest << 1) | u32::from(get(dec, states, BinKind::Suffix, map)?);
    }
    let magnitude = (1u32 << len) + rest;
    if magnitude > MAX_SYMBOL as u32 {
        return Err(Error::Stream(format!("decoded magnitude {magnitude} out of range")));
    }
    let k = magnitude as i32;
    Ok(if negative { -k } else { k })
}

/// Inverse of [`encode_symbols`] for a known symbol shape.
pub fn decode_symbols(bytes: &[u8], shape: [usize; 4]) -> Result<Symbols> {
    let [n, m, h, w] = shape;
    let plane = h * w;
    let mut states = vec![BinProbability::default(); m * CONTEXTS_PER_MAP];
    let mut dec = ArithDecoder::new(bytes)?;
    let total = n * m * plane;
    let mut data = Vec::with_capacity(total);
    for i in 0..total {
        let map = (i / plane) % m;
        data.push(decode_one(&mut dec, &mut states, map)?);
    }
    if dec.remaining() != 0 {
        return Err(Error::Stream(format!("{} unused payload bytes", dec.remaining())));
    }
    Symbols::new(shape, data)
}
