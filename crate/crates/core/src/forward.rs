//! Forward corruption chain: per-step kernels `Q_t`, cumulative products
//! `Q̄_t = Q_1 ⋯ Q_t`, the closed-form posterior `q(x_{t-1} | x_t, x_0)`, and
//! position-wise forward sampling.
//!
//! Matrices are dense and row-stochastic. Absorbing kernels act on the
//! corrupted alphabet (ordinary tokens plus mask); uniform kernels act on the
//! ordinary tokens only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Categorical, SeededRng, Sequence, Token, Vocabulary, MASS_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Absorbing,
    Uniform,
}

/// Dense square row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    n: usize,
    data: Vec<f64>,
}

impl TransitionKernel {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        TransitionKernel { n, data }
    }

    /// Builds from rows, checking stochasticity.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: row.len(),
                });
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > MASS_TOLERANCE {
                return Err(Error::InvalidDistribution(format!(
                    "kernel row {i} is not stochastic"
                )));
            }
            data.extend(row);
        }
        Ok(TransitionKernel { n, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.n + to]
    }

    #[inline]
    pub fn row(&self, from: usize) -> &[f64] {
        &self.data[from * self.n..(from + 1) * self.n]
    }

    pub fn column(&self, to: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, to)).collect()
    }

    pub fn matmul(&self, rhs: &TransitionKernel) -> TransitionKernel {
        assert_eq!(self.n, rhs.n);
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += a * rhs.get(k, j);
                }
            }
        }
        TransitionKernel { n, data }
    }

    pub fn max_abs_diff(&self, other: &TransitionKernel) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Constant per-step beta whose `T`-fold survival product equals
/// `1 - terminal_rate`.
pub fn constant_beta(steps: usize, terminal_rate: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&terminal_rate) {
        return Err(Error::InvalidBeta {
            step: steps,
            value: terminal_rate,
        });
    }
    if steps == 0 {
        return Err(Error::TimeOutOfRange { t: 0, min: 1, max: usize::MAX });
    }
    Ok(1.0 - (1.0 - terminal_rate).powf(1.0 / steps as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSchedule {
    kind: KernelKind,
    vocab: Vocabulary,
    betas: Vec<f64>,
    kernels: Vec<TransitionKernel>,
    // cumulative[t] = Q_1 ⋯ Q_t, cumulative[0] = I
    cumulative: Vec<TransitionKernel>,
}

impl KernelSchedule {
    /// `Q_t` keeps an ordinary token with probability `1 - β_t` and sends it to
    /// mask otherwise; mask is absorbing.
    pub fn absorbing(vocab: Vocabulary, betas: &[f64]) -> Result<Self> {
        Self::build(KernelKind::Absorbing, vocab, betas, |beta| {
            let n = vocab.corrupted_size();
            let mask = vocab.mask_id();
            let mut rows = vec![vec![0.0; n]; n];
            for (x, row) in rows.iter_mut().enumerate().take(vocab.size()) {
                row[x] = 1.0 - beta;
                row[mask] += beta;
            }
            rows[mask][mask] = 1.0;
            rows
        })
    }

    /// `Q_t = (1 - β_t) I + β_t 𝟙𝟙ᵀ / S` over the ordinary tokens.
    pub fn uniform(vocab: Vocabulary, betas: &[f64]) -> Result<Self> {
        Self::build(KernelKind::Uniform, vocab, betas, |beta| {
            let s = vocab.size();
            let off = beta / s as f64;
            (0..s)
                .map(|i| {
                    (0..s)
                        .map(|j| if i == j { 1.0 - beta + off } else { off })
                        .collect()
                })
                .collect()
        })
    }

    pub fn new(kind: KernelKind, vocab: Vocabulary, betas: &[f64]) -> Result<Self> {
        match kind {
            KernelKind::Absorbing => Self::absorbing(vocab, betas),
            KernelKind::Uniform => Self::uniform(vocab, betas),
        }
    }

    /// Constant-beta schedule reaching `terminal_rate` total corruption at `T`.
    pub fn with_terminal_rate(
        kind: KernelKind,
        vocab: Vocabulary,
        steps: usize,
        terminal_rate: f64,
    ) -> Result<Self> {
        let beta = constant_beta(steps, terminal_rate)?;
        Self::new(kind, vocab, &vec![beta; steps])
    }

    fn build(
        kind: KernelKind,
        vocab: Vocabulary,
        betas: &[f64],
        kernel_rows: impl Fn(f64) -> Vec<Vec<f64>>,
    ) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::TimeOutOfRange { t: 0, min: 1, max: usize::MAX });
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(0.0..=1.0).contains(&b) || b.is_nan() {
                return Err(Error::InvalidBeta { step: i + 1, value: b });
            }
        }
        let kernels = betas
            .iter()
            .map(|&b| TransitionKernel::from_rows(kernel_rows(b)))
            .collect::<Result<Vec<_>>>()?;
        let n = kernels[0].dim();
        let mut cumulative = vec![TransitionKernel::identity(n)];
        for k in &kernels {
            let next = cumulative.last().unwrap().matmul(k);
            cumulative.push(next);
        }
        Ok(KernelSchedule {
            kind,
            vocab,
            betas: betas.to_vec(),
            kernels,
            cumulative,
        })
    }

    #[inline]
    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    #[inline]
    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    /// Number of diffusion steps `T`.
    #[inline]
    pub fn steps(&self) -> usize {
        self.kernels.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Size of the alphabet the kernels act on.
    #[inline]
    pub fn alphabet_size(&self) -> usize {
        self.kernels[0].dim()
    }

    /// `Q_t`, `1 ≤ t ≤ T`.
    pub fn kernel(&self, t: usize) -> Result<&TransitionKernel> {
        self.check_time(t)?;
        Ok(&self.kernels[t - 1])
    }

    /// `Q̄_t`, `0 ≤ t ≤ T`, with `Q̄_0 = I`.
    pub fn cumulative(&self, t: usize) -> Result<&TransitionKernel> {
        if t > self.steps() {
            return Err(Error::TimeOutOfRange {
                t,
                min: 0,
                max: self.steps(),
            });
        }
        Ok(&self.cumulative[t])
    }

    pub fn check_time(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimeOutOfRange {
                t,
                min: 1,
                max: self.steps(),
            });
        }
        Ok(())
    }

    /// `q(x_t = observed | x_0 = clean)`; accepts `t = 0`.
    #[inline]
    pub fn likelihood(&self, observed: Token, clean: Token, t: usize) -> f64 {
        if observed >= self.alphabet_size() {
            return 0.0;
        }
        self.cumulative[t].get(clean, observed)
    }

    /// Probability an ordinary token is still itself at `t` under the
    /// absorbing kernel (`∏ (1 - β)`).
    pub fn survival(&self, t: usize) -> Result<f64> {
        if t > self.steps() {
            return Err(Error::TimeOutOfRange { t, min: 0, max: self.steps() });
        }
        Ok(self.betas[..t].iter().map(|b| 1.0 - b).product())
    }

    /// The tokens a decoder must fill in: mask positions for absorbing kernels,
    /// every position for uniform kernels; positions before `prompt_len` are
    /// never predicted.
    pub fn unresolved_positions(&self, xt: &Sequence, prompt_len: usize) -> Vec<usize> {
        (prompt_len.min(xt.len())..xt.len())
            .filter(|&i| match self.kind {
                KernelKind::Absorbing => self.vocab.is_mask(xt[i]),
                KernelKind::Uniform => true,
            })
            .collect()
    }

    fn check_clean(&self, x0: Token) -> Result<()> {
        self.vocab.check_clean(x0)
    }

    fn check_observed(&self, xt: Token) -> Result<()> {
        if xt < self.alphabet_size() {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                token: xt,
                alphabet: self.alphabet_size(),
            })
        }
    }
}

/// Row `x0` of `Q̄_t`.
pub fn marginal(x0: Token, t: usize, sched: &KernelSchedule) -> Result<Categorical> {
    sched.check_time(t)?;
    sched.check_clean(x0)?;
    Categorical::new(sched.cumulative[t].row(x0).to_vec())
}

/// Independent per-position draw of `x_t` given clean `x0`.
pub fn sample_forward(
    x0: &Sequence,
    t: usize,
    sched: &KernelSchedule,
    rng: &mut SeededRng,
) -> Result<Sequence> {
    sample_forward_response(x0, t, 0, sched, rng)
}

/// Like [`sample_forward`] but leaves the first `prompt_len` positions clean.
pub fn sample_forward_response(
    x0: &Sequence,
    t: usize,
    prompt_len: usize,
    sched: &KernelSchedule,
    rng: &mut SeededRng,
) -> Result<Sequence> {
    sched.check_time(t)?;
    let mut out = Vec::with_capacity(x0.len());
    for (i, &x) in x0.iter().enumerate() {
        sched.check_clean(x)?;
        if i < prompt_len {
            out.push(x);
        } else {
            out.push(draw_row(sched.cumulative[t].row(x), rng));
        }
    }
    Ok(Sequence(out))
}

/// One draw from `q(x_t | x0_i)`.
pub fn recorrupt_position(
    x0_i: Token,
    t: usize,
    sched: &KernelSchedule,
    rng: &mut SeededRng,
) -> Result<Token> {
    sched.check_time(t)?;
    sched.check_clean(x0_i)?;
    Ok(draw_row(sched.cumulative[t].row(x0_i), rng))
}

/// `q(x_{t-1} | x_t, x_0) ∝ (column x_t of Q_t) ⊙ (row x_0 of Q̄_{t-1})`.
pub fn forward_posterior(
    xt: Token,
    x0: Token,
    t: usize,
    sched: &KernelSchedule,
) -> Result<Categorical> {
    sched.check_time(t)?;
    sched.check_clean(x0)?;
    sched.check_observed(xt)?;
    let q_t = &sched.kernels[t - 1];
    let prev = sched.cumulative[t - 1].row(x0);
    let evidence = sched.cumulative[t].get(x0, xt);
    if evidence <= 0.0 {
        return Err(Error::ZeroProbabilityEvent(format!(
            "x_t = {xt} is unreachable from x_0 = {x0} at t = {t}"
        )));
    }
    let weights: Vec<f64> = (0..q_t.dim()).map(|v| q_t.get(v, xt) * prev[v]).collect();
    Categorical::normalize(&weights)
}

fn draw_row(row: &[f64], rng: &mut SeededRng) -> Token {
    let u = rng.next_f64();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}
