//! Packed binary tensors and XNOR/popcount arithmetic.
//!
//! A bit `b` stands for the signed value `2b - 1`, so `0 <-> -1` and
//! `1 <-> +1`. The signed dot product of two length-`n` vectors is then
//! `2 * popcount(a XNOR b) - n`.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

const WORD_BITS: usize = 64;

fn words_for(len: usize) -> usize {
    len.div_ceil(WORD_BITS)
}

fn tail_mask(len: usize) -> u64 {
    match len % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// Packed `{0,1}` tensor in row-major order.
///
/// Padding bits past `len` in the last word are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryTensor {
    shape: Vec<usize>,
    len: usize,
    words: Vec<u64>,
}

impl BinaryTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        let mut t = Self::zeros(shape);
        t.words.iter_mut().for_each(|w| *w = u64::MAX);
        t.clear_tail();
        t
    }

    /// Builds a tensor from an iterator of bits; the iterator must yield
    /// exactly `product(shape)` items.
    pub fn from_bits<I>(shape: &[usize], bits: I) -> Result<Self>
    where
        I: IntoIterator<Item = bool>,
    {
        let mut t = Self::zeros(shape);
        let mut n = 0;
        for bit in bits {
            if n == t.len {
                return Err(Error::LengthMismatch {
                    expected: t.len,
                    actual: n + 1,
                });
            }
            if bit {
                t.words[n / WORD_BITS] |= 1 << (n % WORD_BITS);
            }
            n += 1;
        }
        Error::check_len(t.len, n)?;
        Ok(t)
    }

    /// 1-D tensor from a slice of `0`/`1` values.
    pub fn from_bit_values(values: &[u8]) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("bit value {v} is not 0 or 1")));
        }
        Self::from_bits(&[values.len()], values.iter().map(|&v| v == 1))
    }

    pub fn from_signed(v: &SignedVector) -> Self {
        Self::from_bits(&[v.len()], v.values().iter().map(|&s| s > 0))
            .expect("length matches by construction")
    }

    /// Uniformly random bits.
    pub fn random<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        t.words.iter_mut().for_each(|w| *w = rng.random());
        t.clear_tail();
        t
    }

    /// Low `len` bits of `word`, as a 1-D tensor.
    pub fn from_word(word: u64, len: usize) -> Self {
        assert!(len <= WORD_BITS);
        let mut t = Self::zeros(&[len]);
        if len > 0 {
            t.words[0] = word;
            t.clear_tail();
        }
        t
    }

    fn clear_tail(&mut self) {
        if let Some(last) = self.words.last_mut() {
            *last &= tail_mask(self.len);
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if bit {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        Error::check_len(self.len, shape.iter().product())?;
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Flattened 1-D view of the same bits.
    pub fn flatten(self) -> Self {
        let len = self.len;
        self.reshape(&[len]).expect("same length")
    }

    /// Element-wise XNOR; the result keeps `self`'s shape.
    pub fn xnor(&self, other: &Self) -> Result<Self> {
        Error::check_len(self.len, other.len)?;
        let mut out = Self {
            shape: self.shape.clone(),
            len: self.len,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| !(a ^ b))
                .collect(),
        };
        out.clear_tail();
        Ok(out)
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        Error::check_len(self.len, other.len)?;
        Ok(Self {
            shape: self.shape.clone(),
            len: self.len,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        })
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// `popcount(self XNOR other)` without materialising the XNOR.
    pub fn xnor_count(&self, other: &Self) -> Result<usize> {
        Error::check_len(self.len, other.len)?;
        let n = self.words.len();
        if n == 0 {
            return Ok(0);
        }
        let full: usize = self.words[..n - 1]
            .iter()
            .zip(&other.words[..n - 1])
            .map(|(a, b)| (!(a ^ b)).count_ones() as usize)
            .sum();
        let last = !(self.words[n - 1] ^ other.words[n - 1]) & tail_mask(self.len);
        Ok(full + last.count_ones() as usize)
    }

    /// Bits `[start, end)` as a new 1-D tensor.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len {
            return Err(Error::invalid(format!(
                "slice {start}..{end} out of range for length {}",
                self.len
            )));
        }
        let len = end - start;
        let mut words = vec![0u64; words_for(len)];
        for (i, w) in words.iter_mut().enumerate() {
            let bit = start + i * WORD_BITS;
            let (wi, off) = (bit / WORD_BITS, bit % WORD_BITS);
            let lo = self.words[wi] >> off;
            let hi = if off > 0 && wi + 1 < self.words.len() {
                self.words[wi + 1] << (WORD_BITS - off)
            } else {
                0
            };
            *w = lo | hi;
        }
        let mut out = Self {
            shape: vec![len],
            len,
            words,
        };
        out.clear_tail();
        Ok(out)
    }

    /// Concatenates tensors into one 1-D tensor.
    pub fn concat<'a, I>(parts: I) -> Self
    where
        I: IntoIterator<Item = &'a BinaryTensor>,
    {
        let mut w = BitWriter::default();
        for p in parts {
            w.extend(p);
        }
        w.finish()
    }

    /// Extends a 1-D tensor to `len` bits, filling new positions with `fill`.
    pub fn padded(&self, len: usize, fill: bool) -> Self {
        assert!(len >= self.len);
        let mut w = BitWriter::default();
        w.extend(self);
        for _ in self.len..len {
            w.push(fill);
        }
        w.finish()
    }

    pub fn to_signed(&self) -> SignedVector {
        SignedVector(self.iter().map(|b| if b { 1 } else { -1 }).collect())
    }
}

impl fmt::Debug for BinaryTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryTensor{:?}[", self.shape)?;
        for (i, b) in self.iter().take(128).enumerate() {
            if i > 0 && i % 8 == 0 {
                f.write_str("_")?;
            }
            f.write_str(if b { "1" } else { "0" })?;
        }
        if self.len > 128 {
            f.write_str("...")?;
        }
        f.write_str("]")
    }
}

/// Appends bits into packed words.
#[derive(Default)]
pub(crate) struct BitWriter {
    words: Vec<u64>,
    len: usize,
}

impl BitWriter {
    pub(crate) fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(WORD_BITS) {
            self.words.push(0);
        }
        if bit {
            *self.words.last_mut().unwrap() |= 1 << (self.len % WORD_BITS);
        }
        self.len += 1;
    }

    pub(crate) fn extend(&mut self, t: &BinaryTensor) {
        let off = self.len % WORD_BITS;
        if off == 0 {
            self.words.extend_from_slice(&t.words);
            self.len += t.len;
            return;
        }
        let mut remaining = t.len;
        for &w in &t.words {
            let take = remaining.min(WORD_BITS);
            *self.words.last_mut().unwrap() |= w << off;
            if take > WORD_BITS - off {
                self.words.push(w >> (WORD_BITS - off));
            }
            self.len += take;
            remaining -= take;
        }
    }

    pub(crate) fn finish(self) -> BinaryTensor {
        let mut t = BinaryTensor {
            shape: vec![self.len],
            len: self.len,
            words: self.words,
        };
        t.words.truncate(words_for(t.len));
        t.clear_tail();
        t
    }
}

/// Vector of `-1`/`+1` values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedVector(Vec<i8>);

impl SignedVector {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::invalid(format!("signed value {v} is not -1 or +1")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Direct signed dot product.
    pub fn dot(&self, other: &Self) -> Result<i64> {
        Error::check_len(self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| i64::from(a) * i64::from(b))
            .sum())
    }
}

/// How a popcount of exactly half the vector length is resolved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// `d > n/2`; a tie yields 0.
    #[default]
    Strict,
    /// `d >= n/2`; a tie yields 1, as with `Sign(0) = +1`.
    High,
}

impl TieRule {
    /// Whether `doubled / 2` clears half of `len`, i.e. `doubled > len` (or `>=`).
    pub fn fires_doubled(self, doubled: u64, len: u64) -> bool {
        match self {
            TieRule::Strict => doubled > len,
            TieRule::High => doubled >= len,
        }
    }

    /// Whether `matches` out of `len` XNOR bits is a majority.
    pub fn fires(self, matches: usize, len: usize) -> bool {
        self.fires_doubled(2 * matches as u64, len as u64)
    }
}

/// Binarises real values: `x >= 0` maps to 1, `x < 0` to 0.
pub fn binarize<T: Real>(values: &[T], shape: &[usize]) -> Result<BinaryTensor> {
    Error::check_len(shape.iter().product(), values.len())?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite element at index {i}")));
    }
    BinaryTensor::from_bits(shape, values.iter().map(|v| *v >= T::zero()))
}

pub fn popcount(a: &BinaryTensor) -> usize {
    a.count_ones()
}

/// Signed dot product of two binary vectors via `2 * popcount(a XNOR b) - n`.
pub fn xnor_popcount_dot(a: &BinaryTensor, b: &BinaryTensor) -> Result<i64> {
    let matches = a.xnor_count(b)? as i64;
    Ok(2 * matches - a.len() as i64)
}

/// Unsplit reference activation: 1 iff `popcount(a XNOR b) > n/2`.
pub fn golden_activation(a: &BinaryTensor, b: &BinaryTensor) -> Result<bool> {
    golden_activation_with(a, b, TieRule::Strict)
}

pub fn golden_activation_with(a: &BinaryTensor, b: &BinaryTensor, tie: TieRule) -> Result<bool> {
    Ok(tie.fires(a.xnor_count(b)?, a.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bits(v: &[u8]) -> BinaryTensor {
        BinaryTensor::from_bit_values(v).unwrap()
    }

    fn vec_of(word: u64, len: usize) -> BinaryTensor {
        BinaryTensor::from_word(word, len)
    }

    #[test]
    fn binarize_examples() {
        let t = binarize(&[0.3f64, -0.1, 0.0], &[3]).unwrap();
        assert_eq!(t, bits(&[1, 0, 1]));
        let t = binarize(&[0.0f32; 6], &[2, 3]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.count_ones(), 6);
        let t = binarize(&[-5.0f64, 7.0, -0.001, 2.0], &[4]).unwrap();
        assert_eq!(t, bits(&[0, 1, 0, 1]));
    }

    #[test]
    fn binarize_rejects_non_finite() {
        assert!(binarize(&[1.0f64, f64::NAN], &[2]).is_err());
        assert!(binarize(&[f32::INFINITY], &[1]).is_err());
        assert!(binarize(&[1.0f64], &[2]).is_err());
    }

    #[test]
    fn worked_example() {
        let a = bits(&[1, 0, 0, 1]);
        let b = bits(&[0, 1, 1, 1]);
        assert_eq!(a.xnor(&b).unwrap(), bits(&[0, 0, 0, 1]));
        assert_eq!(popcount(&a.xnor(&b).unwrap()), 1);
        assert_eq!(xnor_popcount_dot(&a, &b).unwrap(), -2);
        let sa = SignedVector::new(vec![1, -1, -1, 1]).unwrap();
        let sb = SignedVector::new(vec![-1, 1, 1, 1]).unwrap();
        assert_eq!(sa.dot(&sb).unwrap(), -2);
    }

    #[test]
    fn dot_of_identical_vectors_is_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for len in [1, 63, 64, 65, 300] {
            let a = BinaryTensor::random(&[len], &mut rng);
            assert_eq!(xnor_popcount_dot(&a, &a).unwrap(), len as i64);
        }
    }

    #[test]
    fn dot_exhaustive_len6() {
        for x in 0u64..64 {
            for y in 0u64..64 {
                let (a, b) = (vec_of(x, 6), vec_of(y, 6));
                let direct: i64 = (0..6)
                    .map(|i| {
                        let sa = if x >> i & 1 == 1 { 1 } else { -1 };
                        let sb = if y >> i & 1 == 1 { 1 } else { -1 };
                        sa * sb
                    })
                    .sum();
                assert_eq!(xnor_popcount_dot(&a, &b).unwrap(), direct);
            }
        }
    }

    #[test]
    fn dot_length_mismatch() {
        assert!(matches!(
            xnor_popcount_dot(&bits(&[1, 0]), &bits(&[1])),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(golden_activation(&bits(&[1, 0]), &bits(&[1])).is_err());
    }

    #[test]
    fn popcount_examples() {
        assert_eq!(popcount(&bits(&[0, 0, 0, 1])), 1);
        assert_eq!(popcount(&BinaryTensor::zeros(&[100])), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = BinaryTensor::random(&[64], &mut rng);
        let naive = (0..64).filter(|&i| a.get(i)).count();
        assert_eq!(popcount(&a), naive);
    }

    #[test]
    fn golden_examples() {
        let ones = BinaryTensor::ones(&[4]);
        assert!(golden_activation(&bits(&[1, 1, 1, 0]), &ones).unwrap());
        assert!(!golden_activation(&bits(&[1, 1, 0, 0]), &ones).unwrap());
        assert!(golden_activation_with(&bits(&[1, 1, 0, 0]), &ones, TieRule::High).unwrap());
    }

    #[test]
    fn golden_agrees_with_dot_sign_exhaustive_len8() {
        for x in 0u64..256 {
            for y in 0u64..256 {
                let (a, b) = (vec_of(x, 8), vec_of(y, 8));
                let dot = xnor_popcount_dot(&a, &b).unwrap();
                let g = golden_activation(&a, &b).unwrap();
                if dot != 0 {
                    assert_eq!(g, dot > 0);
                } else {
                    assert!(!g);
                }
            }
        }
    }

    #[test]
    fn slice_and_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = BinaryTensor::random(&[200], &mut rng);
        for (s, e) in [(0, 200), (3, 70), (64, 128), (63, 65), (199, 200), (10, 10)] {
            let sl = a.slice(s, e).unwrap();
            assert_eq!(sl.len(), e - s);
            assert!((s..e).all(|i| sl.get(i - s) == a.get(i)));
        }
        let parts = [a.slice(0, 37).unwrap(), a.slice(37, 101).unwrap(), a.slice(101, 200).unwrap()];
        assert_eq!(BinaryTensor::concat(&parts), a);
        assert!(a.slice(5, 201).is_err());
    }

    #[test]
    fn padded_fills() {
        let a = bits(&[1, 0, 1]);
        let p = a.padded(70, true);
        assert_eq!(p.len(), 70);
        assert_eq!(p.count_ones(), 69);
        assert_eq!(a.padded(5, false), bits(&[1, 0, 1, 0, 0]));
    }

    #[test]
    fn signed_vector_validation() {
        assert!(SignedVector::new(vec![1, 0]).is_err());
        assert!(SignedVector::new(vec![-1, 1, 1]).is_ok());
    }

    proptest! {
        #[test]
        fn dot_matches_signed(seed in any::<u64>(), len in 1usize..=4096) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = BinaryTensor::random(&[len], &mut rng);
            let b = BinaryTensor::random(&[len], &mut rng);
            let dot = xnor_popcount_dot(&a, &b).unwrap();
            prop_assert_eq!(dot, a.to_signed().dot(&b.to_signed()).unwrap());
            prop_assert!(dot.unsigned_abs() as usize <= len);
            prop_assert_eq!(dot.rem_euclid(2), (len % 2) as i64);
            prop_assert_eq!(golden_activation(&a, &b).unwrap(), dot > 0);
        }

        #[test]
        fn signed_round_trip(values in proptest::collection::vec(prop_oneof![Just(-1i8), Just(1i8)], 0..300)) {
            let s = SignedVector::new(values).unwrap();
            let t = BinaryTensor::from_signed(&s);
            prop_assert_eq!(t.to_signed(), s.clone());
            // binarize is idempotent on +-1 tensors
            let reals: Vec<f64> = s.values().iter().map(|&v| f64::from(v)).collect();
            prop_assert_eq!(binarize(&reals, &[reals.len()]).unwrap(), t);
        }
    }
}
