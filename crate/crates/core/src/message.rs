//! The k-bit payload and its hex wire format.
//!
//! Hex is most-significant-bit first: bit 0 of the message is the MSB of
//! the first hex digit, so k must be a multiple of 4 and a message is
//! exactly k/4 digits.

use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMessage {
    bits: Vec<u8>,
}

impl BitMessage {
    pub fn new(bits: Vec<u8>) -> Result<BitMessage, Error> {
        if bits.len() % 4 != 0 || bits.is_empty() {
            return Err(Error::PayloadLength {
                expected: "a positive multiple of 4".into(),
                got: bits.len(),
            });
        }
        if let Some(&b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Malformed(format!("message bits must be 0/1, got {b}")));
        }
        Ok(BitMessage { bits })
    }

    /// Deterministic random message of length k.
    pub fn random(k: usize, rng: &mut impl rand::Rng) -> Result<BitMessage, Error> {
        BitMessage::new((0..k).map(|_| rng.gen_range(0..=1u8)).collect())
    }

    pub fn from_hex(hex: &str, k: usize) -> Result<BitMessage, Error> {
        if k % 4 != 0 {
            return Err(Error::Malformed(format!("k={k} is not a multiple of 4")));
        }
        if hex.len() != k / 4 {
            return Err(Error::PayloadLength { expected: format!("{} hex digits", k / 4), got: hex.len() });
        }
        let mut bits = Vec::with_capacity(k);
        for ch in hex.chars() {
            let v = ch
                .to_digit(16)
                .ok_or_else(|| Error::Malformed(format!("invalid hex digit {ch:?}")))? as u8;
            for shift in (0..4).rev() {
                bits.push((v >> shift) & 1);
            }
        }
        BitMessage::new(bits)
    }

    pub fn to_hex(&self) -> String {
        self.bits
            .chunks(4)
            .map(|nib| {
                let v = nib.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
                char::from_digit(v, 16).unwrap()
            })
            .collect()
    }

    pub fn k(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Bits as 0.0/1.0 for loss targets.
    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }

    /// Threshold probabilities at 0.5 into a message.
    pub fn from_probs(probs: &[f64]) -> Result<BitMessage, Error> {
        BitMessage::new(probs.iter().map(|&p| if p >= 0.5 { 1 } else { 0 }).collect())
    }
}
