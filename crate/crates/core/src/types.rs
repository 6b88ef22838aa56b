//! Vocabulary, sequences, categorical distributions and the seeded generator
//! shared by every other module.

use std::fmt;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the total mass of a [`Categorical`].
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Largest supported vocabulary; keeps every conditional enumerable.
pub const MAX_VOCAB: usize = 16;

pub type Token = usize;

/// `size` ordinary tokens `0..size`, plus the absorbing mask at index `size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidVocabulary(format!(
                "size must be at least 2, got {size}"
            )));
        }
        if size > MAX_VOCAB {
            return Err(Error::InvalidVocabulary(format!(
                "size must be at most {MAX_VOCAB}, got {size}"
            )));
        }
        Ok(Vocabulary { size })
    }

    /// Number of ordinary tokens.
    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn mask_id(&self) -> Token {
        self.size
    }

    #[inline]
    pub fn is_mask(&self, token: Token) -> bool {
        token == self.size
    }

    /// Size of the corrupted alphabet (ordinary tokens plus mask).
    #[inline]
    pub fn corrupted_size(&self) -> usize {
        self.size + 1
    }

    pub fn check_clean(&self, token: Token) -> Result<()> {
        if token < self.size {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                token,
                alphabet: self.size,
            })
        }
    }

    pub fn check_corrupted(&self, token: Token) -> Result<()> {
        if token <= self.size {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                token,
                alphabet: self.size + 1,
            })
        }
    }
}

/// A fixed-length token sequence. Clean sequences hold ordinary tokens only;
/// corrupted sequences may also hold the mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sequence(pub Vec<Token>);

impl Sequence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sequence(tokens)
    }

    pub fn masked(vocab: Vocabulary, dim: usize) -> Self {
        Sequence(vec![vocab.mask_id(); dim])
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn is_clean(&self, vocab: Vocabulary) -> bool {
        self.0.iter().all(|&x| x < vocab.size())
    }

    pub fn masked_positions(&self, vocab: Vocabulary) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &x)| vocab.is_mask(x))
            .map(|(i, _)| i)
            .collect()
    }
}

impl Deref for Sequence {
    type Target = Vec<Token>;
    fn deref(&self) -> &Vec<Token> {
        &self.0
    }
}

impl DerefMut for Sequence {
    fn deref_mut(&mut self) -> &mut Vec<Token> {
        &mut self.0
    }
}

impl AsRef<[Token]> for Sequence {
    fn as_ref(&self) -> &[Token] {
        &self.0
    }
}

impl From<Vec<Token>> for Sequence {
    fn from(v: Vec<Token>) -> Self {
        Sequence(v)
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        f.write_str("]")
    }
}

/// A probability vector indexed by token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Validates without renormalizing: entries must be finite and
    /// nonnegative and sum to one within [`MASS_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {p} is negative or not finite"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "mass {total} differs from 1"
            )));
        }
        Ok(Categorical { probs })
    }

    /// Divides nonnegative weights by their sum.
    pub fn normalize(weights: &[f64]) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "weight {w} is negative or not finite"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::AllZeroWeights);
        }
        Ok(Categorical {
            probs: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn point(len: usize, index: usize) -> Self {
        assert!(index < len, "point mass index {index} outside support {len}");
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        Categorical { probs }
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0);
        Categorical {
            probs: vec![1.0 / len as f64; len],
        }
    }

    /// Symmetric Dirichlet draw.
    pub fn dirichlet(len: usize, concentration: f64, rng: &mut SeededRng) -> Result<Self> {
        use rand_distr::{Distribution, Gamma};
        let gamma = Gamma::new(concentration, 1.0).map_err(|e| {
            Error::InvalidDistribution(format!("concentration {concentration}: {e}"))
        })?;
        let weights: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
        Self::normalize(&weights)
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, index: usize) -> f64 {
        self.probs.get(index).copied().unwrap_or(0.0)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// Inverse-CDF draw using one uniform from `rng`.
    pub fn sample(&self, rng: &mut SeededRng) -> usize {
        let u = rng.next_f64();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_positive = i;
                if u < acc {
                    return i;
                }
            }
        }
        // rounding left u above the accumulated mass
        last_positive
    }
}

/// Counter-based SplitMix64 generator.
///
/// Draw `n` (0-based) is `mix(seed + (n + 1) * 0x9E3779B97F4A7C15)` with the
/// standard SplitMix64 finalizer, so streams are reproducible in any language
/// with wrapping 64-bit arithmetic. Floats take the top 53 bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
    counter: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { seed, counter: 0 }
    }

    /// Generator for worker `index` of a parallel job seeded with `seed`.
    pub fn for_worker(seed: u64, index: u64) -> Self {
        SeededRng::new(seed.wrapping_add(index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit words drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        let mut z = self
            .seed
            .wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }
}

impl rand_core::RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        (SeededRng::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        SeededRng::next_u64(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = SeededRng::next_u64(self).to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
