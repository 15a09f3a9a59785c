//! Arbitrary-width bit words stored as little-endian `u64` limbs.

use std::fmt;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Word {
    width: usize,
    limbs: Vec<u64>,
}

impl Word {
    pub fn zero(width: usize) -> Self {
        Word {
            width,
            limbs: vec![0; width.div_ceil(64)],
        }
    }

    /// Bits of `limbs` above `width` are cleared.
    pub fn from_limbs(width: usize, mut limbs: Vec<u64>) -> Self {
        limbs.resize(width.div_ceil(64), 0);
        mask_tail(&mut limbs, width);
        Word { width, limbs }
    }

    pub fn from_u64(width: usize, value: u64) -> Self {
        Self::from_limbs(width, vec![value])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn limbs(&self) -> &[u64] {
        &self.limbs
    }

    pub fn limbs_mut(&mut self) -> &mut [u64] {
        &mut self.limbs
    }

    pub fn bit(&self, i: usize) -> bool {
        self.limbs[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set_bit(&mut self, i: usize, v: bool) {
        let m = 1u64 << (i % 64);
        if v {
            self.limbs[i / 64] |= m;
        } else {
            self.limbs[i / 64] &= !m;
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.limbs.iter().map(|l| l.count_ones()).sum()
    }

    /// Low 64 bits.
    pub fn as_u64(&self) -> u64 {
        self.limbs.first().copied().unwrap_or(0)
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Word<{}>(0x", self.width)?;
        for l in self.limbs.iter().rev() {
            write!(f, "{l:016x}")?;
        }
        write!(f, ")")
    }
}

pub(crate) fn mask_tail(limbs: &mut [u64], width: usize) {
    let rem = width % 64;
    if rem != 0 {
        if let Some(last) = limbs.last_mut() {
            *last &= (1u64 << rem) - 1;
        }
    }
}

pub(crate) fn invert_in_place(limbs: &mut [u64], width: usize) {
    for l in limbs.iter_mut() {
        *l = !*l;
    }
    mask_tail(limbs, width);
}

/// `dst = rotl(src, s)` over `width` bits. `dst` and `src` have equal length.
pub(crate) fn rotate_left_into(src: &[u64], width: usize, s: usize, dst: &mut [u64]) {
    let s = if width == 0 { 0 } else { s % width };
    dst.fill(0);
    if s == 0 {
        dst.copy_from_slice(src);
        return;
    }
    // dst = (src << s) | (src >> (width - s)), masked.
    shl_or(src, s, dst);
    shr_or(src, width - s, dst);
    mask_tail(dst, width);
}

pub(crate) fn rotate_right_into(src: &[u64], width: usize, s: usize, dst: &mut [u64]) {
    let s = if width == 0 { 0 } else { s % width };
    rotate_left_into(src, width, (width - s) % width.max(1), dst);
}

fn shl_or(src: &[u64], s: usize, dst: &mut [u64]) {
    let (limb, bit) = (s / 64, s % 64);
    for i in (limb..dst.len()).rev() {
        let j = i - limb;
        let mut v = src[j] << bit;
        if bit != 0 && j > 0 {
            v |= src[j - 1] >> (64 - bit);
        }
        dst[i] |= v;
    }
}

fn shr_or(src: &[u64], s: usize, dst: &mut [u64]) {
    let (limb, bit) = (s / 64, s % 64);
    let n = src.len();
    for i in 0..n.saturating_sub(limb) {
        let j = i + limb;
        let mut v = src[j] >> bit;
        if bit != 0 && j + 1 < n {
            v |= src[j + 1] << (64 - bit);
        }
        dst[i] |= v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rotl_ref(w: &Word, s: usize) -> Word {
        let mut out = Word::zero(w.width());
        for i in 0..w.width() {
            out.set_bit((i + s) % w.width(), w.bit(i));
        }
        out
    }

    #[test]
    fn rotate_small() {
        let w = Word::from_u64(8, 0b1000_0001);
        let mut dst = vec![0];
        rotate_left_into(w.limbs(), 8, 1, &mut dst);
        assert_eq!(dst[0], 0b0000_0011);
    }

    #[test]
    fn invert_masks_tail() {
        let mut l = vec![0u64];
        invert_in_place(&mut l, 8);
        assert_eq!(l[0], 0xFF);
    }

    proptest! {
        #[test]
        fn rotation_matches_bitwise_reference(
            width in 1usize..300,
            seed in prop::collection::vec(any::<u64>(), 5),
            s in 0usize..300,
        ) {
            let w = Word::from_limbs(width, seed);
            let mut dst = vec![0u64; w.limbs().len()];
            rotate_left_into(w.limbs(), width, s, &mut dst);
            prop_assert_eq!(&Word::from_limbs(width, dst.clone()), &rotl_ref(&w, s % width));
            let mut back = vec![0u64; dst.len()];
            rotate_right_into(&dst, width, s, &mut back);
            prop_assert_eq!(back.as_slice(), w.limbs());
        }
    }
}
