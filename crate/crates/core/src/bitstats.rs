//! Per-bit-position probability of a '1' over static weight words.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitDistribution {
    pub word_width: u32,
    /// Index 0 is the least-significant bit.
    pub p_one: Vec<f64>,
    /// Exact set-bit counts behind `p_one`.
    pub ones: Vec<u64>,
    pub n_words: u64,
}

impl BitDistribution {
    fn from_counts(word_width: u32, ones: Vec<u64>, n_words: u64) -> Self {
        let p_one = ones.iter().map(|&k| k as f64 / n_words as f64).collect();
        BitDistribution {
            word_width,
            p_one,
            ones,
            n_words,
        }
    }

    /// Pools two distributions of the same width.
    pub fn merge(&self, other: &BitDistribution) -> Result<BitDistribution> {
        if self.word_width != other.word_width {
            return Err(Error::invalid("cannot merge distributions of different widths"));
        }
        let ones = self.ones.iter().zip(&other.ones).map(|(a, b)| a + b).collect();
        Ok(Self::from_counts(self.word_width, ones, self.n_words + other.n_words))
    }
}

pub fn bit_distribution(words: &[u32], width: u32) -> Result<BitDistribution> {
    if width != 8 && width != 32 {
        return Err(Error::invalid(format!("word width must be 8 or 32, got {width}")));
    }
    if words.is_empty() {
        return Err(Error::Empty("word array"));
    }
    let mask = if width == 32 { u32::MAX } else { (1u32 << width) - 1 };
    let mut ones = vec![0u64; width as usize];
    for &w in words {
        let mut bits = w & mask;
        while bits != 0 {
            ones[bits.trailing_zeros() as usize] += 1;
            bits &= bits - 1;
        }
    }
    Ok(BitDistribution::from_counts(width, ones, words.len() as u64))
}

pub fn mean_rho(dist: &BitDistribution) -> f64 {
    dist.p_one.iter().sum::<f64>() / dist.p_one.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_zero_words() {
        let d = bit_distribution(&[0; 17], 8).unwrap();
        assert!(d.p_one.iter().all(|&p| p == 0.0));
        assert_eq!(d.n_words, 17);
    }

    #[test]
    fn complementary_pair_is_half() {
        let d = bit_distribution(&[0xFF, 0x00], 8).unwrap();
        assert!(d.p_one.iter().all(|&p| p == 0.5));
        assert_eq!(mean_rho(&d), 0.5);
    }

    #[test]
    fn mean_of_zero_and_one() {
        let d = BitDistribution::from_counts(8, vec![0, 1], 1);
        assert_eq!(mean_rho(&d), 0.5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(bit_distribution(&[], 8).is_err());
        assert!(bit_distribution(&[1], 16).is_err());
    }

    #[test]
    fn high_bits_beyond_width_ignored() {
        let d = bit_distribution(&[0x100], 8).unwrap();
        assert!(d.p_one.iter().all(|&p| p == 0.0));
    }

    proptest! {
        #[test]
        fn complement_flips_probabilities(words in prop::collection::vec(any::<u8>(), 1..200)) {
            let w: Vec<u32> = words.iter().map(|&b| b as u32).collect();
            let inv: Vec<u32> = words.iter().map(|&b| (!b) as u32).collect();
            let a = bit_distribution(&w, 8).unwrap();
            let b = bit_distribution(&inv, 8).unwrap();
            for i in 0..8 {
                prop_assert_eq!(a.ones[i] + b.ones[i], a.n_words);
                prop_assert!((a.p_one[i] + b.p_one[i] - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn concatenation_is_weighted_average(
            a in prop::collection::vec(any::<u32>(), 1..100),
            b in prop::collection::vec(any::<u32>(), 1..100),
        ) {
            let da = bit_distribution(&a, 32).unwrap();
            let db = bit_distribution(&b, 32).unwrap();
            let joined: Vec<u32> = a.iter().chain(&b).copied().collect();
            let dj = bit_distribution(&joined, 32).unwrap();
            prop_assert_eq!(&dj, &da.merge(&db).unwrap());
            let (na, nb) = (a.len() as f64, b.len() as f64);
            for i in 0..32 {
                let avg = (da.p_one[i] * na + db.p_one[i] * nb) / (na + nb);
                prop_assert!((dj.p_one[i] - avg).abs() < 1e-12);
            }
        }

        #[test]
        fn numerators_are_recoverable(words in prop::collection::vec(any::<u8>(), 1..64)) {
            let w: Vec<u32> = words.iter().map(|&b| b as u32).collect();
            let d = bit_distribution(&w, 8).unwrap();
            for i in 0..8 {
                let k = (d.p_one[i] * d.n_words as f64).round() as u64;
                prop_assert_eq!(k, d.ones[i]);
                let brute = words.iter().filter(|&&x| x >> i & 1 == 1).count() as u64;
                prop_assert_eq!(k, brute);
            }
        }
    }
}
