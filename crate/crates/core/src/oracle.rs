//! Tabular data laws and exact conditionals by enumeration.
//!
//! Every query reduces to one primitive: weight each clean sequence `x_0` by
//! `p*(x_0)` times a per-position evidence factor, then marginalize. A
//! position can be unconstrained, pinned to a clean value, observed through
//! the forward kernel at time `t`, or both pinned and observed.

use std::collections::HashMap;
use std::sync::Mutex;

use rand_distr::{Distribution, Gamma};

use crate::decode::{DraftModel, IndependentModel, TargetModel};
use crate::error::{Error, Result};
use crate::forward::KernelSchedule;
use crate::types::{Categorical, SeededRng, Sequence, Token, Vocabulary};

pub const MAX_DIM: usize = 8;
pub const MAX_TABLE: usize = 1_000_000;

/// Explicit joint law over `V^d`, indexed big-endian (position 0 is the most
/// significant digit).
#[derive(Debug, Clone, PartialEq)]
pub struct DataLaw {
    vocab: Vocabulary,
    dim: usize,
    table: Vec<f64>,
    cdf: Vec<f64>,
}

fn table_len(vocab: Vocabulary, dim: usize) -> Result<usize> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::TooLarge(format!(
            "sequence length {dim} outside 1..={MAX_DIM}"
        )));
    }
    let mut n: usize = 1;
    for _ in 0..dim {
        n = n.saturating_mul(vocab.size());
    }
    if n > MAX_TABLE {
        return Err(Error::TooLarge(format!(
            "{}^{dim} = {n} sequences exceeds {MAX_TABLE}",
            vocab.size()
        )));
    }
    Ok(n)
}

impl DataLaw {
    /// Takes a dense table; mass must already be 1.
    pub fn from_table(vocab: Vocabulary, dim: usize, table: Vec<f64>) -> Result<Self> {
        let n = table_len(vocab, dim)?;
        if table.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: table.len(),
            });
        }
        // reuse the categorical checks on the whole table
        let table = Categorical::new(table)?.into_probs();
        let mut acc = 0.0;
        let cdf = table
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(DataLaw {
            vocab,
            dim,
            table,
            cdf,
        })
    }

    pub fn uniform(vocab: Vocabulary, dim: usize) -> Result<Self> {
        let n = table_len(vocab, dim)?;
        Self::from_table(vocab, dim, vec![1.0 / n as f64; n])
    }

    /// Sparse sequence → probability pairs; unlisted sequences get zero mass.
    pub fn from_entries(vocab: Vocabulary, dim: usize, entries: &[(Vec<Token>, f64)]) -> Result<Self> {
        let n = table_len(vocab, dim)?;
        let mut table = vec![0.0; n];
        for (seq, p) in entries {
            if seq.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    actual: seq.len(),
                });
            }
            for &x in seq {
                vocab.check_clean(x)?;
            }
            table[encode(vocab.size(), seq)] += p;
        }
        Self::from_table(vocab, dim, table)
    }

    /// Independent positions with the given per-position marginals.
    pub fn product(vocab: Vocabulary, marginals: &[Categorical]) -> Result<Self> {
        let dim = marginals.len();
        let n = table_len(vocab, dim)?;
        for m in marginals {
            if m.len() != vocab.size() {
                return Err(Error::SupportMismatch {
                    left: m.len(),
                    right: vocab.size(),
                });
            }
        }
        let table = (0..n)
            .map(|code| {
                decode(vocab.size(), dim, code)
                    .iter()
                    .zip(marginals)
                    .map(|(&x, m)| m.prob(x))
                    .product()
            })
            .collect();
        Self::from_table(vocab, dim, table)
    }

    /// First-order Markov chain with initial law and transition rows.
    pub fn markov(
        vocab: Vocabulary,
        dim: usize,
        initial: &Categorical,
        transition: &[Categorical],
    ) -> Result<Self> {
        let n = table_len(vocab, dim)?;
        if initial.len() != vocab.size() || transition.len() != vocab.size() {
            return Err(Error::SupportMismatch {
                left: transition.len(),
                right: vocab.size(),
            });
        }
        if let Some(row) = transition.iter().find(|r| r.len() != vocab.size()) {
            return Err(Error::SupportMismatch {
                left: row.len(),
                right: vocab.size(),
            });
        }
        let table = (0..n)
            .map(|code| {
                let x = decode(vocab.size(), dim, code);
                let mut p = initial.prob(x[0]);
                for w in x.windows(2) {
                    p *= transition[w[0]].prob(w[1]);
                }
                p
            })
            .collect();
        Self::from_table(vocab, dim, table)
    }

    /// Dirichlet(concentration, …) draw over all `S^d` sequences.
    pub fn random(vocab: Vocabulary, dim: usize, concentration: f64, seed: u64) -> Result<Self> {
        let n = table_len(vocab, dim)?;
        let gamma = Gamma::new(concentration, 1.0).map_err(|e| {
            Error::InvalidDistribution(format!("concentration {concentration}: {e}"))
        })?;
        let mut rng = SeededRng::new(seed);
        let weights: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng)).collect();
        Self::from_table(vocab, dim, Categorical::normalize(&weights)?.into_probs())
    }

    #[inline]
    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn encode(&self, seq: &[Token]) -> usize {
        encode(self.vocab.size(), seq)
    }

    pub fn decode(&self, code: usize) -> Sequence {
        Sequence(decode(self.vocab.size(), self.dim, code))
    }

    /// Sequences with positive mass, in code order.
    pub fn support(&self) -> impl Iterator<Item = (Sequence, f64)> + '_ {
        self.table
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(c, &p)| (self.decode(c), p))
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Sequence {
        let u = rng.next_f64();
        let code = self.cdf.partition_point(|&c| c <= u).min(self.table.len() - 1);
        // skip zero-mass cells that share a cdf value with the hit
        let code = (code..self.table.len())
            .find(|&c| self.table[c] > 0.0)
            .or_else(|| (0..code).rev().find(|&c| self.table[c] > 0.0))
            .unwrap_or(code);
        self.decode(code)
    }

    fn check_sequence(&self, x: &[Token], corrupted: bool) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        for &tok in x {
            if corrupted {
                self.vocab.check_corrupted(tok)?;
            } else {
                self.vocab.check_clean(tok)?;
            }
        }
        Ok(())
    }

    fn check_schedule(&self, sched: &KernelSchedule, t: usize) -> Result<()> {
        if sched.vocab() != self.vocab {
            return Err(Error::SupportMismatch {
                left: sched.vocab().size(),
                right: self.vocab.size(),
            });
        }
        sched.check_time(t)
    }

    /// Unnormalized weights over all clean sequences under `evidence`.
    pub fn evidence_weights(
        &self,
        sched: &KernelSchedule,
        t: usize,
        evidence: &[Evidence],
    ) -> Result<Vec<f64>> {
        if evidence.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                actual: evidence.len(),
            });
        }
        let s = self.vocab.size();
        let factors: Vec<Vec<f64>> = evidence
            .iter()
            .map(|e| (0..s).map(|v| e.factor(v, sched, t)).collect())
            .collect();
        let mut digits = vec![0usize; self.dim];
        let mut out = vec![0.0; self.table.len()];
        for (code, &p) in self.table.iter().enumerate() {
            if code > 0 {
                // increment the big-endian counter
                let mut j = self.dim;
                while j > 0 {
                    j -= 1;
                    digits[j] += 1;
                    if digits[j] < s {
                        break;
                    }
                    digits[j] = 0;
                }
            }
            if p == 0.0 {
                continue;
            }
            let mut w = p;
            for (j, &x) in digits.iter().enumerate() {
                w *= factors[j][x];
                if w == 0.0 {
                    break;
                }
            }
            out[code] = w;
        }
        Ok(out)
    }

    /// Normalized law of position `i` under `evidence`.
    pub fn conditional(
        &self,
        sched: &KernelSchedule,
        t: usize,
        evidence: &[Evidence],
        i: usize,
    ) -> Result<Categorical> {
        if i >= self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                actual: i + 1,
            });
        }
        let weights = self.evidence_weights(sched, t, evidence)?;
        let s = self.vocab.size();
        let stride = s.pow((self.dim - 1 - i) as u32);
        let mut marg = vec![0.0; s];
        for (code, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                marg[(code / stride) % s] += w;
            }
        }
        Categorical::normalize(&marg).map_err(|_| zero_event(evidence))
    }

    /// Normalized joint law of `positions` under `evidence`.
    pub fn joint_conditional(
        &self,
        sched: &KernelSchedule,
        t: usize,
        evidence: &[Evidence],
        positions: &[usize],
    ) -> Result<JointLaw> {
        check_positions(positions, self.dim)?;
        let weights = self.evidence_weights(sched, t, evidence)?;
        let s = self.vocab.size();
        let mut probs = vec![0.0; s.pow(positions.len() as u32)];
        let mut digits = vec![0; self.dim];
        for (code, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                fill_digits(s, code, &mut digits);
                let sub: usize = positions.iter().fold(0, |acc, &p| acc * s + digits[p]);
                probs[sub] += w;
            }
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(zero_event(evidence));
        }
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(JointLaw {
            vocab_size: s,
            positions: positions.to_vec(),
            probs,
        })
    }
}

fn zero_event(evidence: &[Evidence]) -> Error {
    Error::ZeroProbabilityEvent(format!("evidence {evidence:?} has zero mass"))
}

fn check_positions(positions: &[usize], dim: usize) -> Result<()> {
    if positions.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    for w in positions.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::invariant("positions", "must be strictly ascending"));
        }
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= dim) {
        return Err(Error::LengthMismatch {
            expected: dim,
            actual: p + 1,
        });
    }
    Ok(())
}

pub(crate) fn encode(s: usize, seq: &[Token]) -> usize {
    seq.iter().fold(0, |acc, &x| acc * s + x)
}

pub(crate) fn decode(s: usize, dim: usize, code: usize) -> Vec<Token> {
    let mut out = vec![0; dim];
    fill_digits(s, code, &mut out);
    out
}

fn fill_digits(s: usize, mut code: usize, out: &mut [Token]) {
    for slot in out.iter_mut().rev() {
        *slot = code % s;
        code /= s;
    }
}

/// What is known about one position of the clean sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Evidence {
    /// Integrated out.
    Free,
    /// Clean value known.
    Clean(Token),
    /// Corrupted value observed at time `t`.
    Observed(Token),
    /// Clean value known and its corrupted value observed.
    CleanObserved(Token, Token),
}

impl Evidence {
    #[inline]
    fn factor(&self, v: Token, sched: &KernelSchedule, t: usize) -> f64 {
        match *self {
            Evidence::Free => 1.0,
            Evidence::Clean(c) => (v == c) as u8 as f64,
            Evidence::Observed(o) => sched.likelihood(o, v, t),
            Evidence::CleanObserved(c, o) => {
                if v == c {
                    sched.likelihood(o, v, t)
                } else {
                    0.0
                }
            }
        }
    }

    fn key(&self, s: u128) -> u128 {
        match *self {
            Evidence::Free => 0,
            Evidence::Clean(c) => 1 + c as u128,
            Evidence::Observed(o) => 1 + s + o as u128,
            Evidence::CleanObserved(c, o) => 2 + 2 * s + c as u128 * (s + 1) + o as u128,
        }
    }
}

fn evidence_key(evidence: &[Evidence], s: usize) -> u128 {
    let s = s as u128;
    let base = 2 + 2 * s + s * (s + 1);
    evidence.iter().fold(0u128, |acc, e| acc * base + e.key(s))
}

/// Joint law over a set of positions, indexed big-endian over those positions.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLaw {
    pub vocab_size: usize,
    pub positions: Vec<usize>,
    pub probs: Vec<f64>,
}

impl JointLaw {
    pub fn prob_of(&self, tokens: &[Token]) -> f64 {
        assert_eq!(tokens.len(), self.positions.len());
        self.probs[encode(self.vocab_size, tokens)]
    }

    /// Probability of the values a full sequence takes on `positions`.
    pub fn prob_of_sequence(&self, seq: &[Token]) -> f64 {
        let sub: Vec<Token> = self.positions.iter().map(|&p| seq[p]).collect();
        self.prob_of(&sub)
    }

    pub fn outcome(&self, index: usize) -> Vec<Token> {
        decode(self.vocab_size, self.positions.len(), index)
    }
}

/// `X^{(i)}`: clean values before the pivot, corrupted values from it on.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HybridContext {
    pub clean_prefix: Vec<Token>,
    pub corrupted_suffix: Vec<Token>,
    pub t: usize,
}

impl HybridContext {
    pub fn new(clean_prefix: Vec<Token>, corrupted_suffix: Vec<Token>, t: usize) -> Self {
        HybridContext {
            clean_prefix,
            corrupted_suffix,
            t,
        }
    }

    /// Splits a decoding state at `pivot`.
    pub fn split(state: &[Token], pivot: usize, t: usize) -> Self {
        HybridContext::new(state[..pivot].to_vec(), state[pivot..].to_vec(), t)
    }

    #[inline]
    pub fn pivot(&self) -> usize {
        self.clean_prefix.len()
    }

    pub fn dim(&self) -> usize {
        self.clean_prefix.len() + self.corrupted_suffix.len()
    }

    pub fn validate(&self, vocab: Vocabulary, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                actual: self.dim(),
            });
        }
        if self.corrupted_suffix.is_empty() {
            return Err(Error::invariant("context.pivot", "pivot must be a position"));
        }
        for &x in &self.clean_prefix {
            vocab.check_clean(x)?;
        }
        for &x in &self.corrupted_suffix {
            vocab.check_corrupted(x)?;
        }
        Ok(())
    }

    pub fn evidence(&self) -> Vec<Evidence> {
        self.clean_prefix
            .iter()
            .map(|&c| Evidence::Clean(c))
            .chain(self.corrupted_suffix.iter().map(|&o| Evidence::Observed(o)))
            .collect()
    }
}

/// Draft conditioning: verified clean prefix of length `m`, corrupted
/// values strictly after `m`. Position `m` itself is not observed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DraftContext {
    pub clean_prefix: Vec<Token>,
    pub corrupted_tail: Vec<Token>,
    pub t: usize,
}

impl DraftContext {
    pub fn new(clean_prefix: Vec<Token>, corrupted_tail: Vec<Token>, t: usize) -> Self {
        DraftContext {
            clean_prefix,
            corrupted_tail,
            t,
        }
    }

    pub fn split(state: &[Token], m: usize, t: usize) -> Self {
        DraftContext::new(state[..m].to_vec(), state[m + 1..].to_vec(), t)
    }

    #[inline]
    pub fn verified_prefix_len(&self) -> usize {
        self.clean_prefix.len()
    }

    pub fn dim(&self) -> usize {
        self.clean_prefix.len() + 1 + self.corrupted_tail.len()
    }

    pub fn validate(&self, vocab: Vocabulary, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                actual: self.dim(),
            });
        }
        for &x in &self.clean_prefix {
            vocab.check_clean(x)?;
        }
        for &x in &self.corrupted_tail {
            vocab.check_corrupted(x)?;
        }
        Ok(())
    }

    pub fn evidence(&self) -> Vec<Evidence> {
        self.clean_prefix
            .iter()
            .map(|&c| Evidence::Clean(c))
            .chain(std::iter::once(Evidence::Free))
            .chain(self.corrupted_tail.iter().map(|&o| Evidence::Observed(o)))
            .collect()
    }
}

fn observed(xt: &[Token]) -> Vec<Evidence> {
    xt.iter().map(|&o| Evidence::Observed(o)).collect()
}

/// `p*(x)`.
pub fn joint_prob(law: &DataLaw, x: &Sequence) -> Result<f64> {
    law.check_sequence(x, false)?;
    Ok(law.table[law.encode(x)])
}

/// `p*(X_0^i | X_t = xt)`: the per-position posterior the mean-field
/// predictor uses.
pub fn independent_posterior(
    law: &DataLaw,
    sched: &KernelSchedule,
    xt: &Sequence,
    i: usize,
    t: usize,
) -> Result<Categorical> {
    law.check_schedule(sched, t)?;
    law.check_sequence(xt, true)?;
    law.conditional(sched, t, &observed(xt), i)
}

/// `p*(X_0^i | X_t^{≥i}, X_0^{<i}, t)` with `i` the context pivot.
pub fn prefix_posterior(law: &DataLaw, sched: &KernelSchedule, ctx: &HybridContext) -> Result<Categorical> {
    law.check_schedule(sched, ctx.t)?;
    ctx.validate(law.vocab, law.dim)?;
    law.conditional(sched, ctx.t, &ctx.evidence(), ctx.pivot())
}

/// `ρ(X_0^i | X̂_0^{<m}, X_t^{>m}, t)`. Clean values at `m..i` are integrated
/// out, so every position of a window shares one context.
pub fn draft_law(
    law: &DataLaw,
    sched: &KernelSchedule,
    ctx: &DraftContext,
    i: usize,
) -> Result<Categorical> {
    law.check_schedule(sched, ctx.t)?;
    ctx.validate(law.vocab, law.dim)?;
    if i < ctx.verified_prefix_len() || i >= law.dim {
        return Err(Error::invariant(
            "draft.position",
            format!("position {i} outside {}..{}", ctx.verified_prefix_len(), law.dim),
        ));
    }
    law.conditional(sched, ctx.t, &ctx.evidence(), i)
}

/// `p*(x_J | X_t = xt, t)` for the ascending positions `J`.
pub fn clean_posterior_joint(
    law: &DataLaw,
    sched: &KernelSchedule,
    xt: &Sequence,
    t: usize,
    positions: &[usize],
) -> Result<JointLaw> {
    law.check_schedule(sched, t)?;
    law.check_sequence(xt, true)?;
    law.joint_conditional(sched, t, &observed(xt), positions)
}

/// Product of per-position independent posteriors over `positions`.
pub fn mean_field_joint(
    law: &DataLaw,
    sched: &KernelSchedule,
    xt: &Sequence,
    t: usize,
    positions: &[usize],
) -> Result<JointLaw> {
    check_positions(positions, law.dim)?;
    let marginals = positions
        .iter()
        .map(|&i| independent_posterior(law, sched, xt, i, t))
        .collect::<Result<Vec<_>>>()?;
    let s = law.vocab.size();
    let n = s.pow(positions.len() as u32);
    let probs = (0..n)
        .map(|code| {
            decode(s, positions.len(), code)
                .iter()
                .zip(&marginals)
                .map(|(&x, m)| m.prob(x))
                .product()
        })
        .collect();
    Ok(JointLaw {
        vocab_size: s,
        positions: positions.to_vec(),
        probs,
    })
}

/// Law of the tokens a later pass writes at `positions` when they are pushed
/// back through `Q̄_t` from `committed` and redrawn from the exact posterior,
/// averaged over the re-corruption draw.
pub fn regeneration_law(
    law: &DataLaw,
    sched: &KernelSchedule,
    committed: &Sequence,
    positions: &[usize],
    t: usize,
) -> Result<JointLaw> {
    law.check_schedule(sched, t)?;
    law.check_sequence(committed, false)?;
    check_positions(positions, law.dim)?;
    let s = law.vocab.size();
    let a = sched.alphabet_size();
    let mut probs = vec![0.0; s.pow(positions.len() as u32)];
    let mut z = vec![0; positions.len()];
    for code in 0..a.pow(positions.len() as u32) {
        fill_digits(a, code, &mut z);
        let weight: f64 = positions
            .iter()
            .zip(&z)
            .map(|(&p, &o)| sched.likelihood(o, committed[p], t))
            .product();
        if weight == 0.0 {
            continue;
        }
        let mut state = committed.clone();
        for (&p, &o) in positions.iter().zip(&z) {
            state[p] = o;
        }
        let joint = clean_posterior_joint(law, sched, &state, t, positions)?;
        probs.iter_mut().zip(&joint.probs).for_each(|(a, b)| *a += weight * b);
    }
    Ok(JointLaw {
        vocab_size: s,
        positions: positions.to_vec(),
        probs,
    })
}

/// Probability of the event described by a hybrid context.
pub fn context_mass(law: &DataLaw, sched: &KernelSchedule, ctx: &HybridContext) -> Result<f64> {
    law.check_schedule(sched, ctx.t)?;
    ctx.validate(law.vocab, law.dim)?;
    Ok(law.evidence_weights(sched, ctx.t, &ctx.evidence())?.iter().sum())
}

/// Largest entrywise deviation among the three forms of the prefix-conditioned
/// posterior at position `i`:
///
/// * `p(X_0^i | X_t, X_0^{<i})`, conditioning on the full corrupted sequence,
/// * `p(X_0^i | X_t^{≥i}, X_0^{<i})`, dropping the corrupted prefix,
/// * the normalized product `p(X_0^i | X_t) · p(X_0^i | X_t^{>i}, X_0^{<i}) / p(X_0^i | X_t^{-i})`.
pub fn lemma1_identity_gap(
    law: &DataLaw,
    sched: &KernelSchedule,
    xt: &Sequence,
    x0_prefix: &[Token],
    i: usize,
    t: usize,
) -> Result<f64> {
    law.check_schedule(sched, t)?;
    law.check_sequence(xt, true)?;
    if x0_prefix.len() != i || i >= law.dim {
        return Err(Error::LengthMismatch {
            expected: i,
            actual: x0_prefix.len(),
        });
    }
    for &x in x0_prefix {
        law.vocab.check_clean(x)?;
    }
    let d = law.dim;
    let full: Vec<Evidence> = (0..d)
        .map(|j| {
            if j < i {
                Evidence::CleanObserved(x0_prefix[j], xt[j])
            } else {
                Evidence::Observed(xt[j])
            }
        })
        .collect();
    let lhs = law.conditional(sched, t, &full, i)?;
    let ctx = HybridContext::new(x0_prefix.to_vec(), xt[i..].to_vec(), t);
    let dropped = prefix_posterior(law, sched, &ctx)?;

    let all_observed = law.conditional(sched, t, &observed(xt), i)?;
    let suffix_and_prefix: Vec<Evidence> = (0..d)
        .map(|j| match j.cmp(&i) {
            std::cmp::Ordering::Less => Evidence::Clean(x0_prefix[j]),
            std::cmp::Ordering::Equal => Evidence::Free,
            std::cmp::Ordering::Greater => Evidence::Observed(xt[j]),
        })
        .collect();
    let correction_num = law.conditional(sched, t, &suffix_and_prefix, i)?;
    let leave_one_out: Vec<Evidence> = (0..d)
        .map(|j| if j == i { Evidence::Free } else { Evidence::Observed(xt[j]) })
        .collect();
    let correction_den = law.conditional(sched, t, &leave_one_out, i)?;

    let mut rhs = Vec::with_capacity(law.vocab.size());
    for v in 0..law.vocab.size() {
        let den = correction_den.prob(v);
        if den > 0.0 {
            rhs.push(all_observed.prob(v) * correction_num.prob(v) / den);
        } else if lhs.prob(v) > 0.0 {
            return Err(Error::DegenerateFactor { token: v });
        } else {
            rhs.push(0.0);
        }
    }
    let rhs = Categorical::normalize(&rhs)?;
    let gap = (0..law.vocab.size())
        .map(|v| {
            let a = (lhs.prob(v) - dropped.prob(v)).abs();
            let b = (lhs.prob(v) - rhs.prob(v)).abs();
            a.max(b)
        })
        .fold(0.0, f64::max);
    Ok(gap)
}

/// Exact oracle provider: serves the target, draft and mean-field
/// conditionals of a [`DataLaw`] under a schedule, memoizing each
/// `(evidence, t, position)` query.
#[derive(Debug)]
pub struct Oracle {
    law: DataLaw,
    sched: KernelSchedule,
    cache: Mutex<HashMap<(u128, usize, usize), Categorical>>,
}

impl Oracle {
    pub fn new(law: DataLaw, sched: KernelSchedule) -> Result<Self> {
        if law.vocab != sched.vocab() {
            return Err(Error::SupportMismatch {
                left: law.vocab.size(),
                right: sched.vocab().size(),
            });
        }
        Ok(Oracle {
            law,
            sched,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn law(&self) -> &DataLaw {
        &self.law
    }

    pub fn schedule(&self) -> &KernelSchedule {
        &self.sched
    }

    fn cached(&self, evidence: &[Evidence], t: usize, i: usize) -> Result<Categorical> {
        let key = (evidence_key(evidence, self.law.vocab.size()), t, i);
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        self.sched.check_time(t)?;
        let dist = self.law.conditional(&self.sched, t, evidence, i)?;
        self.cache.lock().unwrap().insert(key, dist.clone());
        Ok(dist)
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

impl TargetModel for Oracle {
    fn vocab(&self) -> Vocabulary {
        self.law.vocab
    }

    fn dim(&self) -> usize {
        self.law.dim
    }

    fn target(&self, ctx: &HybridContext) -> Result<Categorical> {
        ctx.validate(self.law.vocab, self.law.dim)?;
        self.cached(&ctx.evidence(), ctx.t, ctx.pivot())
    }
}

impl DraftModel for Oracle {
    fn vocab(&self) -> Vocabulary {
        self.law.vocab
    }

    fn dim(&self) -> usize {
        self.law.dim
    }

    fn draft(&self, ctx: &DraftContext, position: usize) -> Result<Categorical> {
        ctx.validate(self.law.vocab, self.law.dim)?;
        if position < ctx.verified_prefix_len() || position >= self.law.dim {
            return Err(Error::invariant(
                "draft.position",
                format!("position {position} is inside the verified prefix"),
            ));
        }
        self.cached(&ctx.evidence(), ctx.t, position)
    }
}

impl IndependentModel for Oracle {
    fn independent(&self, xt: &Sequence, t: usize, position: usize) -> Result<Categorical> {
        self.law.check_sequence(xt, true)?;
        self.cached(&observed(xt), t, position)
    }
}
