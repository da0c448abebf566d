//! Byte-oriented range coder with 16-bit probability resolution.
//!
//! Symbols are coded against per-symbol integer-support PMFs. Floating-point
//! probabilities are quantized to a 16-bit cumulative table (every bin keeps
//! at least one count, so any in-support symbol stays codable). The coder is
//! the carry-propagating low/range construction: the encoder defers carry
//! resolution through a cache byte, the decoder mirrors the renormalization
//! byte-for-byte, so `decode(encode(s)) == s` exactly.

use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoderError {
    #[error("symbol {symbol} at index {index} is outside its pmf support")]
    SymbolOutsideSupport { index: usize, symbol: i32 },
    #[error("pmf at index {index} is empty or has no positive mass")]
    InvalidPmf { index: usize },
    #[error("pmf support of {0} bins exceeds the 16-bit total")]
    SupportTooLarge(usize),
    #[error("byte stream truncated at position {position}")]
    Truncated { position: usize },
    #[error("corrupted coder state at byte position {position}")]
    InvalidState { position: usize },
    #[error("{symbols} symbols but {pmfs} pmfs")]
    LengthMismatch { symbols: usize, pmfs: usize },
}

/// A probability mass function over the integer support
/// `min ..= min + probs.len() - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    pub min: i32,
    pub probs: Vec<f64>,
}

impl Pmf {
    pub fn new(min: i32, probs: Vec<f64>) -> Self {
        Self { min, probs }
    }

    pub fn contains(&self, symbol: i32) -> bool {
        symbol >= self.min && ((symbol - self.min) as usize) < self.probs.len()
    }
}

pub const PMF_TOTAL_BITS: u32 = 16;
pub const PMF_TOTAL: u32 = 1 << PMF_TOTAL_BITS;

/// PMF with frequencies rescaled to sum to `PMF_TOTAL`; every bin is >= 1.
#[derive(Debug, Clone)]
pub struct QuantizedPmf {
    pub min: i32,
    /// `cdf[i]..cdf[i+1]` is the frequency interval of symbol `min + i`.
    pub cdf: Vec<u32>,
}

impl QuantizedPmf {
    /// Deterministic 16-bit quantization: proportional rounding with a floor
    /// of one count per bin, drift settled on the heaviest bin.
    pub fn build(pmf: &Pmf, index: usize) -> Result<Self, CoderError> {
        let k = pmf.probs.len();
        if k == 0 {
            return Err(CoderError::InvalidPmf { index });
        }
        if k as u32 > PMF_TOTAL {
            return Err(CoderError::SupportTooLarge(k));
        }
        let mut total_mass = 0.0f64;
        for &p in &pmf.probs {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(CoderError::InvalidPmf { index });
            }
            total_mass += p;
        }
        if total_mass <= 0.0 {
            return Err(CoderError::InvalidPmf { index });
        }
        let mut freqs: Vec<u32> = Vec::with_capacity(k);
        let scale = PMF_TOTAL as f64 / total_mass;
        let mut sum: u64 = 0;
        for &p in &pmf.probs {
            let f = (libm::round(p * scale) as u64).clamp(1, PMF_TOTAL as u64) as u32;
            freqs.push(f);
            sum += f as u64;
        }
        // Settle rounding drift. Adding goes to the heaviest bin; removal
        // walks the heaviest bins down without ever emptying one.
        if sum < PMF_TOTAL as u64 {
            let idx = argmax(&freqs);
            freqs[idx] += (PMF_TOTAL as u64 - sum) as u32;
        } else {
            let mut excess = sum - PMF_TOTAL as u64;
            while excess > 0 {
                let idx = argmax(&freqs);
                let take = excess.min((freqs[idx] - 1) as u64);
                if take == 0 {
                    // All bins at 1 yet sum > total: impossible since k <= total.
                    return Err(CoderError::InvalidPmf { index });
                }
                freqs[idx] -= take as u32;
                excess -= take;
            }
        }
        let mut cdf = Vec::with_capacity(k + 1);
        let mut acc = 0u32;
        cdf.push(0);
        for &f in &freqs {
            acc += f;
            cdf.push(acc);
        }
        debug_assert_eq!(acc, PMF_TOTAL);
        Ok(Self { min: pmf.min, cdf })
    }

    #[inline]
    fn interval(&self, symbol: i32) -> Option<(u32, u32)> {
        if symbol < self.min {
            return None;
        }
        let i = (symbol - self.min) as usize;
        if i + 1 >= self.cdf.len() {
            return None;
        }
        Some((self.cdf[i], self.cdf[i + 1] - self.cdf[i]))
    }

    /// Symbol whose cumulative interval contains `freq`.
    #[inline]
    fn lookup(&self, freq: u32) -> i32 {
        let i = self.cdf.partition_point(|&c| c <= freq) - 1;
        self.min + i as i32
    }
}

fn argmax(freqs: &[u32]) -> usize {
    let mut best = 0;
    for (i, &f) in freqs.iter().enumerate() {
        if f > freqs[best] {
            best = i;
        }
    }
    best
}

const RENORM_LIMIT: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
    symbols_coded: usize,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new(), symbols_coded: 0 }
    }

    pub fn encode_symbol(&mut self, symbol: i32, pmf: &QuantizedPmf) -> Result<(), CoderError> {
        let (cum, freq) = pmf
            .interval(symbol)
            .ok_or(CoderError::SymbolOutsideSupport { index: self.symbols_coded, symbol })?;
        debug_assert!(freq > 0);
        self.range >>= PMF_TOTAL_BITS;
        self.low += cum as u64 * self.range as u64;
        self.range *= freq;
        while self.range < RENORM_LIMIT {
            self.shift_low();
            self.range <<= 8;
        }
        self.symbols_coded += 1;
        Ok(())
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            self.out.push(self.cache.wrapping_add(carry));
            for _ in 1..self.cache_size {
                self.out.push(0xFFu8.wrapping_add(carry));
            }
            self.cache = (self.low >> 24) as u8;
            self.cache_size = 0;
        }
        self.cache_size += 1;
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    bytes: &'a [u8],
    pos: usize,
    started: bool,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { code: 0, range: u32::MAX, bytes, pos: 0, started: false }
    }

    fn next_byte(&mut self) -> Result<u8, CoderError> {
        let b = *self.bytes.get(self.pos).ok_or(CoderError::Truncated { position: self.pos })?;
        self.pos += 1;
        Ok(b)
    }

    fn start(&mut self) -> Result<(), CoderError> {
        // First byte is the encoder's empty cache; must be zero.
        if self.next_byte()? != 0 {
            return Err(CoderError::InvalidState { position: 0 });
        }
        for _ in 0..4 {
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        self.started = true;
        Ok(())
    }

    pub fn decode_symbol(&mut self, pmf: &QuantizedPmf) -> Result<i32, CoderError> {
        if !self.started {
            self.start()?;
        }
        self.range >>= PMF_TOTAL_BITS;
        let freq = self.code / self.range;
        if freq >= PMF_TOTAL {
            return Err(CoderError::InvalidState { position: self.pos });
        }
        let symbol = pmf.lookup(freq);
        let i = (symbol - pmf.min) as usize;
        let cum = pmf.cdf[i];
        let width = pmf.cdf[i + 1] - cum;
        self.code -= cum * self.range;
        self.range *= width;
        while self.range < RENORM_LIMIT {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(symbol)
    }
}

/// Encodes `symbols[i]` against `pmfs[i]`. The PMFs are quantized to 16 bits
/// internally; the byte overhead over the ideal code length is a handful of
/// flush bytes plus the quantization loss.
pub fn range_encode(symbols: &[i32], pmfs: &[Pmf]) -> Result<Vec<u8>, CoderError> {
    if symbols.len() != pmfs.len() {
        return Err(CoderError::LengthMismatch { symbols: symbols.len(), pmfs: pmfs.len() });
    }
    let mut enc = RangeEncoder::new();
    for (i, (&s, pmf)) in symbols.iter().zip(pmfs).enumerate() {
        if !pmf.contains(s) {
            return Err(CoderError::SymbolOutsideSupport { index: i, symbol: s });
        }
        let q = QuantizedPmf::build(pmf, i)?;
        enc.encode_symbol(s, &q)?;
    }
    Ok(enc.finish())
}

/// Inverse of [`range_encode`] given the same PMF sequence.
pub fn range_decode(bytes: &[u8], pmfs: &[Pmf]) -> Result<Vec<i32>, CoderError> {
    let mut dec = RangeDecoder::new(bytes);
    let mut out = Vec::with_capacity(pmfs.len());
    for (i, pmf) in pmfs.iter().enumerate() {
        let q = QuantizedPmf::build(pmf, i)?;
        out.push(dec.decode_symbol(&q)?);
    }
    Ok(out)
}

/// Upper bound, in bytes, accepted on a coded stream relative to its ideal
/// length: fixed flush/header slack plus 1% for pmf quantization.
pub fn overhead_bound_bytes(ideal_bits: f64) -> f64 {
    32.0 + 0.01 * (ideal_bits / 8.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn uniform_pmf(n: usize) -> Pmf {
        Pmf::new(0, vec![1.0 / n as f64; n])
    }

    #[test]
    fn empty_sequence_round_trips() {
        let bytes = range_encode(&[], &[]).unwrap();
        assert!(bytes.len() <= 8, "flush-only stream, got {} bytes", bytes.len());
        let decoded = range_decode(&bytes, &[]).unwrap();
        assert!(decoded.is_empty());
    }

    #[test]
    fn uniform_256_codes_one_byte_per_symbol() {
        let n = 10_000;
        let pmf = uniform_pmf(256);
        let symbols: Vec<i32> = (0..n).map(|i| ((i * 31 + 7) % 256) as i32).collect();
        let pmfs = vec![pmf; n];
        let bytes = range_encode(&symbols, &pmfs).unwrap();
        assert!(bytes.len() >= n, "beat entropy: {}", bytes.len());
        assert!(bytes.len() <= n + 64, "overhead too high: {}", bytes.len());
        assert_eq!(range_decode(&bytes, &pmfs).unwrap(), symbols);
    }

    #[test]
    fn length_stays_within_ideal_plus_overhead() {
        // Skewed pmfs with varying supports.
        let mut symbols = Vec::new();
        let mut pmfs = Vec::new();
        let mut state = 1u64;
        let mut ideal_bits = 0.0f64;
        for i in 0..5000usize {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let k = 2 + (state >> 33) as usize % 40;
            let probs: Vec<f64> =
                (0..k).map(|j| 1.0 / (1 + (i + j) % 17) as f64).collect();
            let total: f64 = probs.iter().sum();
            let sym = ((state >> 20) as usize % k) as i32 - 3;
            ideal_bits += -(probs[(sym + 3) as usize] / total).log2();
            symbols.push(sym);
            pmfs.push(Pmf::new(-3, probs));
        }
        let bytes = range_encode(&symbols, &pmfs).unwrap();
        let bound = ideal_bits / 8.0 + overhead_bound_bytes(ideal_bits);
        assert!((bytes.len() as f64) <= bound, "{} > {}", bytes.len(), bound);
        assert_eq!(range_decode(&bytes, &pmfs).unwrap(), symbols);
    }

    #[test]
    fn out_of_support_symbol_is_an_encode_error() {
        let pmfs = vec![uniform_pmf(4)];
        let err = range_encode(&[9], &pmfs).unwrap_err();
        assert_eq!(err, CoderError::SymbolOutsideSupport { index: 0, symbol: 9 });
    }

    #[test]
    fn truncation_is_a_decode_error_with_position() {
        let pmf = uniform_pmf(256);
        let symbols: Vec<i32> = (0..100).map(|i| (i % 256) as i32).collect();
        let pmfs = vec![pmf; 100];
        let bytes = range_encode(&symbols, &pmfs).unwrap();
        let cut = &bytes[..bytes.len() / 3];
        match range_decode(cut, &pmfs) {
            Err(CoderError::Truncated { position }) => assert_eq!(position, cut.len()),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_pmfs_are_rejected() {
        assert!(range_encode(&[0], &[Pmf::new(0, vec![])]).is_err());
        assert!(range_encode(&[0], &[Pmf::new(0, vec![0.0, 0.0])]).is_err());
        assert!(range_encode(&[0], &[Pmf::new(0, vec![f64::NAN, 1.0])]).is_err());
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let err = range_encode(&[1, 2], &[uniform_pmf(4)]).unwrap_err();
        assert_eq!(err, CoderError::LengthMismatch { symbols: 2, pmfs: 1 });
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn round_trip_recovers_every_symbol(
            seed in 0u64..1_000_000,
            n in 1usize..200,
        ) {
            let mut state = seed.wrapping_add(1);
            let mut bump = move || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                state >> 16
            };
            let mut symbols = Vec::with_capacity(n);
            let mut pmfs = Vec::with_capacity(n);
            for _ in 0..n {
                let k = 1 + (bump() % 64) as usize;
                let min = (bump() % 1000) as i32 - 500;
                let probs: Vec<f64> = (0..k).map(|_| 1e-9 + (bump() % 1000) as f64).collect();
                symbols.push(min + (bump() % k as u64) as i32);
                pmfs.push(Pmf::new(min, probs));
            }
            let bytes = range_encode(&symbols, &pmfs).unwrap();
            prop_assert_eq!(range_decode(&bytes, &pmfs).unwrap(), symbols);
        }
    }
}
