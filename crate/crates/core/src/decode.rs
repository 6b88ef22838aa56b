//! Decoding regimes over a corrupted sequence: mean-field (independent),
//! prefix-conditioned sequential, and speculative draft/verify with residual
//! correction, plus the multi-pass driver with low-confidence re-corruption
//! and the plug-in reverse transition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{forward_posterior, recorrupt_position, KernelSchedule};
use crate::oracle::{DraftContext, HybridContext};
use crate::types::{Categorical, SeededRng, Sequence, Token, Vocabulary};

/// Prefix-conditioned target `π(X_0^i | X_t^{≥i}, X_0^{<i}, t)`.
pub trait TargetModel {
    fn vocab(&self) -> Vocabulary;
    fn dim(&self) -> usize;
    fn target(&self, ctx: &HybridContext) -> Result<Categorical>;
}

/// Draft `ρ(X_0^i | X̂_0^{<m}, X_t^{>m}, t)` for any `i ≥ m`.
pub trait DraftModel {
    fn vocab(&self) -> Vocabulary;
    fn dim(&self) -> usize;
    fn draft(&self, ctx: &DraftContext, position: usize) -> Result<Categorical>;
}

/// Mean-field predictor `p(X_0^i | X_t, t)`.
pub trait IndependentModel {
    fn independent(&self, xt: &Sequence, t: usize, position: usize) -> Result<Categorical>;
}

#[derive(Clone, Copy)]
pub struct PredictorPair<'a> {
    pub target: &'a dyn TargetModel,
    pub draft: &'a dyn DraftModel,
}

impl<'a> PredictorPair<'a> {
    pub fn new(target: &'a dyn TargetModel, draft: &'a dyn DraftModel) -> Result<Self> {
        if target.vocab() != draft.vocab() {
            return Err(Error::SupportMismatch {
                left: target.vocab().size(),
                right: draft.vocab().size(),
            });
        }
        if target.dim() != draft.dim() {
            return Err(Error::LengthMismatch {
                expected: target.dim(),
                actual: draft.dim(),
            });
        }
        Ok(PredictorPair { target, draft })
    }

    pub fn vocab(&self) -> Vocabulary {
        self.target.vocab()
    }
}

/// Fixed per-position distributions that ignore context. Serves as target,
/// draft or mean-field predictor when the law under test is not tabular.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionTable {
    vocab: Vocabulary,
    dists: Vec<Categorical>,
}

impl PositionTable {
    pub fn new(vocab: Vocabulary, dists: Vec<Categorical>) -> Result<Self> {
        if dists.is_empty() {
            return Err(Error::invariant("table", "needs at least one position"));
        }
        if let Some(d) = dists.iter().find(|d| d.len() != vocab.size()) {
            return Err(Error::SupportMismatch {
                left: d.len(),
                right: vocab.size(),
            });
        }
        Ok(PositionTable { vocab, dists })
    }

    /// The same distribution at each of `dim` positions.
    pub fn repeated(vocab: Vocabulary, dist: Categorical, dim: usize) -> Result<Self> {
        Self::new(vocab, vec![dist; dim])
    }

    pub fn dist(&self, position: usize) -> &Categorical {
        &self.dists[position]
    }
}

impl TargetModel for PositionTable {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }
    fn dim(&self) -> usize {
        self.dists.len()
    }
    fn target(&self, ctx: &HybridContext) -> Result<Categorical> {
        ctx.validate(self.vocab, self.dists.len())?;
        Ok(self.dists[ctx.pivot()].clone())
    }
}

impl DraftModel for PositionTable {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }
    fn dim(&self) -> usize {
        self.dists.len()
    }
    fn draft(&self, ctx: &DraftContext, position: usize) -> Result<Categorical> {
        ctx.validate(self.vocab, self.dists.len())?;
        Ok(self.dists[position].clone())
    }
}

impl IndependentModel for PositionTable {
    fn independent(&self, _xt: &Sequence, _t: usize, position: usize) -> Result<Categorical> {
        Ok(self.dists[position].clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Independent,
    Sequential,
    #[default]
    Speculative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    /// Speculative window `k`.
    #[serde(default = "defaults::window")]
    pub window: usize,
    /// Generation passes.
    #[serde(default = "defaults::n_steps")]
    pub n_steps: usize,
    /// Positions re-corrupted after each non-final pass.
    #[serde(default)]
    pub remask_budget: usize,
    /// Timestep for re-corruption and later passes; `None` reuses the first
    /// pass's timestep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorrupt_t: Option<usize>,
    #[serde(default)]
    pub mode: DecodeMode,
    /// Leading positions that are never corrupted or decoded.
    #[serde(default)]
    pub prompt_len: usize,
}

mod defaults {
    pub fn window() -> usize {
        4
    }
    pub fn n_steps() -> usize {
        1
    }
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            window: defaults::window(),
            n_steps: defaults::n_steps(),
            remask_budget: 0,
            recorrupt_t: None,
            mode: DecodeMode::default(),
            prompt_len: 0,
        }
    }
}

impl DecodeConfig {
    pub fn with_window(window: usize) -> Self {
        DecodeConfig {
            window,
            ..Default::default()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.window == 0 {
            return Err(Error::invariant("decode.window", "must be at least 1"));
        }
        if self.n_steps == 0 {
            return Err(Error::invariant("decode.n_steps", "must be at least 1"));
        }
        if self.remask_budget > dim {
            return Err(Error::invariant(
                "decode.remask_budget",
                format!("{} exceeds sequence length {dim}", self.remask_budget),
            ));
        }
        if self.prompt_len > dim {
            return Err(Error::invariant(
                "decode.prompt_len",
                format!("{} exceeds sequence length {dim}", self.prompt_len),
            ));
        }
        if self.recorrupt_t == Some(0) {
            return Err(Error::invariant("decode.recorrupt_t", "must be at least 1"));
        }
        Ok(())
    }
}

/// One draft/verify round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub positions: Vec<usize>,
    pub drafts: Vec<Token>,
    /// One flag per verified draft token: true, …, true[, false].
    pub accepted: Vec<bool>,
    /// Committed values for `positions[..committed.len()]`.
    pub committed: Vec<Token>,
    pub confidences: Vec<f64>,
}

impl RoundRecord {
    pub fn committed_len(&self) -> usize {
        self.committed.len()
    }

    pub fn rejected(&self) -> bool {
        self.accepted.last() == Some(&false)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpecTrace {
    pub rounds: Vec<RoundRecord>,
    pub draft_passes: usize,
    pub verify_passes: usize,
    /// Draft tokens put through the acceptance test.
    pub proposals_total: usize,
    pub accepts_total: usize,
    /// Draft tokens sampled, including those discarded after a rejection.
    pub drafted_total: usize,
}

impl SpecTrace {
    fn push(&mut self, round: RoundRecord) {
        self.draft_passes += 1;
        self.verify_passes += 1;
        self.drafted_total += round.drafts.len();
        self.proposals_total += round.accepted.len();
        self.accepts_total += round.accepted.iter().filter(|&&a| a).count();
        self.rounds.push(round);
    }

    pub fn committed_total(&self) -> usize {
        self.rounds.iter().map(RoundRecord::committed_len).sum()
    }

    /// `(position, confidence)` for every committed token.
    pub fn confidences(&self) -> Vec<(usize, f64)> {
        self.rounds
            .iter()
            .flat_map(|r| r.positions.iter().copied().zip(r.confidences.iter().copied()))
            .collect()
    }

    /// Accept flags form a run of trues optionally closed by one false;
    /// confidences lie in `[0, 1]`.
    pub fn is_well_formed(&self) -> bool {
        self.rounds.iter().all(|r| {
            let n = r.accepted.len();
            let prefix_ok = r.accepted.iter().take(n.saturating_sub(1)).all(|&a| a);
            let len_ok = r.committed.len() == n && r.confidences.len() == n;
            let conf_ok = r.confidences.iter().all(|c| (0.0..=1.0).contains(c));
            prefix_ok && len_ok && conf_ok && n >= 1 && n <= r.positions.len()
        })
    }
}

/// `[π - ρ]_+` normalized.
pub fn residual_distribution(pi: &Categorical, rho: &Categorical) -> Result<Categorical> {
    if pi.len() != rho.len() {
        return Err(Error::SupportMismatch {
            left: pi.len(),
            right: rho.len(),
        });
    }
    let positive: Vec<f64> = pi
        .probs()
        .iter()
        .zip(rho.probs())
        .map(|(p, r)| (p - r).max(0.0))
        .collect();
    if positive.iter().sum::<f64>() <= 0.0 {
        return Err(Error::ZeroRejectionMass);
    }
    Categorical::normalize(&positive)
}

/// Masked positions at or after `prompt_len`.
fn masked_after(xt: &Sequence, vocab: Vocabulary, prompt_len: usize) -> Vec<usize> {
    xt.masked_positions(vocab)
        .into_iter()
        .filter(|&i| i >= prompt_len)
        .collect()
}

fn check_positions(positions: &[usize], dim: usize) -> Result<()> {
    for w in positions.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::invariant("positions", "must be strictly ascending"));
        }
    }
    match positions.last() {
        Some(&p) if p >= dim => Err(Error::LengthMismatch {
            expected: dim,
            actual: p + 1,
        }),
        _ => Ok(()),
    }
}

/// Mean-field decoding: every masked position drawn independently from
/// `p(X_0^i | X_t)`.
pub fn decode_independent(
    xt: &Sequence,
    t: usize,
    model: &dyn IndependentModel,
    vocab: Vocabulary,
    rng: &mut SeededRng,
) -> Result<Sequence> {
    decode_independent_at(xt, &xt.masked_positions(vocab), t, model, rng)
}

pub fn decode_independent_at(
    xt: &Sequence,
    positions: &[usize],
    t: usize,
    model: &dyn IndependentModel,
    rng: &mut SeededRng,
) -> Result<Sequence> {
    check_positions(positions, xt.len())?;
    let mut out = xt.clone();
    for &i in positions {
        out[i] = model.independent(xt, t, i)?.sample(rng);
    }
    Ok(out)
}

/// Left-to-right decoding with the target conditioned on committed tokens.
pub fn decode_sequential(
    xt: &Sequence,
    t: usize,
    target: &dyn TargetModel,
    rng: &mut SeededRng,
) -> Result<Sequence> {
    decode_sequential_at(xt, &xt.masked_positions(target.vocab()), t, target, rng)
}

pub fn decode_sequential_at(
    xt: &Sequence,
    positions: &[usize],
    t: usize,
    target: &dyn TargetModel,
    rng: &mut SeededRng,
) -> Result<Sequence> {
    check_positions(positions, xt.len())?;
    let mut state = xt.clone();
    for &i in positions {
        let pi = target.target(&HybridContext::split(&state, i, t))?;
        state[i] = pi.sample(rng);
    }
    Ok(state)
}

/// One draft pass over `window` followed by left-to-right verification.
///
/// Draft laws share the context frozen at the first window position. Each
/// verified target sees the already verified tokens as clean prefix. The
/// first rejection commits a residual draw and ends the round; later window
/// positions stay untouched in `state`.
pub fn speculative_round(
    state: &mut Sequence,
    window: &[usize],
    pair: &PredictorPair<'_>,
    t: usize,
    rng: &mut SeededRng,
) -> Result<RoundRecord> {
    let Some(&m) = window.first() else {
        return Err(Error::invariant("window", "must hold at least one position"));
    };
    check_positions(window, state.len())?;

    let draft_ctx = DraftContext::split(state, m, t);
    let mut rhos = Vec::with_capacity(window.len());
    let mut drafts = Vec::with_capacity(window.len());
    for &i in window {
        let rho = pair.draft.draft(&draft_ctx, i)?;
        drafts.push(rho.sample(rng));
        rhos.push(rho);
    }

    let mut record = RoundRecord {
        positions: window.to_vec(),
        drafts: drafts.clone(),
        accepted: Vec::with_capacity(window.len()),
        committed: Vec::with_capacity(window.len()),
        confidences: Vec::with_capacity(window.len()),
    };
    // Targets are evaluated lazily: past a rejection the draft prefix is
    // discarded, and a never-accepted draft token may have zero target mass.
    for ((&i, &proposal), rho) in window.iter().zip(&drafts).zip(&rhos) {
        let pi = pair.target.target(&HybridContext::split(state, i, t))?;
        let u = rng.next_f64();
        let (token, accepted) = if u * rho.prob(proposal) < pi.prob(proposal) {
            (proposal, true)
        } else {
            (residual_distribution(&pi, rho)?.sample(rng), false)
        };
        state[i] = token;
        record.accepted.push(accepted);
        record.committed.push(token);
        record.confidences.push(pi.prob(token));
        if !accepted {
            break;
        }
    }
    Ok(record)
}

/// Speculative decoding of every masked position after the prompt.
pub fn decode_speculative(
    xt: &Sequence,
    t: usize,
    pair: &PredictorPair<'_>,
    cfg: &DecodeConfig,
    rng: &mut SeededRng,
) -> Result<(Sequence, SpecTrace)> {
    let positions = masked_after(xt, pair.vocab(), cfg.prompt_len);
    decode_speculative_at(xt, &positions, t, pair, cfg.window, rng)
}

/// Speculative decoding of explicit ascending `positions`.
pub fn decode_speculative_at(
    xt: &Sequence,
    positions: &[usize],
    t: usize,
    pair: &PredictorPair<'_>,
    window: usize,
    rng: &mut SeededRng,
) -> Result<(Sequence, SpecTrace)> {
    if window == 0 {
        return Err(Error::invariant("decode.window", "must be at least 1"));
    }
    check_positions(positions, xt.len())?;
    let mut state = xt.clone();
    let mut trace = SpecTrace::default();
    let mut next = 0;
    while next < positions.len() {
        let b = window.min(positions.len() - next);
        let round = speculative_round(&mut state, &positions[next..next + b], pair, t, rng)?;
        next += round.committed_len();
        trace.push(round);
    }
    Ok((state, trace))
}

/// `LowConf`: the `budget` positions with the smallest confidence, ties to the
/// smaller index, returned in ascending position order.
pub fn low_conf_select(confidences: &[(usize, f64)], budget: usize) -> Result<Vec<usize>> {
    if budget > confidences.len() {
        return Err(Error::BudgetTooLarge {
            budget,
            available: confidences.len(),
        });
    }
    let mut ranked = confidences.to_vec();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = ranked.into_iter().take(budget).map(|(i, _)| i).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// One generation pass of [`full_inference`].
#[derive(Debug, Clone, PartialEq)]
pub struct PassRecord {
    /// State before the pass.
    pub input: Sequence,
    pub t: usize,
    pub decoded: Vec<usize>,
    pub output: Sequence,
    pub trace: SpecTrace,
    /// Positions re-corrupted after this pass (empty after the last one).
    pub remasked: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceRun {
    pub output: Sequence,
    pub passes: Vec<PassRecord>,
}

impl InferenceRun {
    pub fn traces(&self) -> Vec<SpecTrace> {
        self.passes.iter().map(|p| p.trace.clone()).collect()
    }
}

/// Multi-pass speculative decoding with low-confidence re-corruption.
///
/// The first pass decodes the schedule's unresolved positions of `xt` at `t`.
/// After each non-final pass the `remask_budget` least confident tokens
/// committed in that pass are pushed back through `q(x_{t'} | x̂_0)` with
/// `t' = recorrupt_t.unwrap_or(t)`, and the next pass re-decodes exactly those
/// positions at `t'`. A budget above the number of committed tokens selects
/// all of them.
pub fn full_inference(
    xt: &Sequence,
    t: usize,
    pair: &PredictorPair<'_>,
    cfg: &DecodeConfig,
    sched: &KernelSchedule,
    rng: &mut SeededRng,
) -> Result<InferenceRun> {
    cfg.validate(xt.len())?;
    sched.check_time(t)?;
    let later_t = cfg.recorrupt_t.unwrap_or(t);
    sched.check_time(later_t)?;

    let mut state = xt.clone();
    let mut positions = sched.unresolved_positions(xt, cfg.prompt_len);
    let mut passes = Vec::with_capacity(cfg.n_steps);
    for s in 0..cfg.n_steps {
        let pass_t = if s == 0 { t } else { later_t };
        let input = state.clone();
        let (decoded, trace) = decode_speculative_at(&state, &positions, pass_t, pair, cfg.window, rng)?;
        state = decoded;
        let output = state.clone();
        let mut remasked = Vec::new();
        if s + 1 < cfg.n_steps {
            let conf = trace.confidences();
            remasked = low_conf_select(&conf, cfg.remask_budget.min(conf.len()))?;
            for &i in &remasked {
                state[i] = recorrupt_position(state[i], later_t, sched, rng)?;
            }
        }
        passes.push(PassRecord {
            input,
            t: pass_t,
            decoded: std::mem::take(&mut positions),
            output,
            trace,
            remasked: remasked.clone(),
        });
        positions = remasked;
    }
    Ok(InferenceRun {
        output: state,
        passes,
    })
}

/// `p(X_{t-1} | X_t) = q(X_{t-1} | X_t, X̂_0)`, position-wise.
pub fn reverse_transition(
    xt: &Sequence,
    x0_hat: &Sequence,
    t: usize,
    sched: &KernelSchedule,
    rng: &mut SeededRng,
) -> Result<Sequence> {
    if xt.len() != x0_hat.len() {
        return Err(Error::LengthMismatch {
            expected: xt.len(),
            actual: x0_hat.len(),
        });
    }
    xt.iter()
        .zip(x0_hat.iter())
        .map(|(&obs, &clean)| Ok(forward_posterior(obs, clean, t, sched)?.sample(rng)))
        .collect::<Result<Vec<_>>>()
        .map(Sequence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::KernelSchedule;
    use crate::oracle::{DataLaw, Oracle};

    fn v2() -> Vocabulary {
        Vocabulary::new(2).unwrap()
    }

    fn cat(p: &[f64]) -> Categorical {
        Categorical::new(p.to_vec()).unwrap()
    }

    fn law(entries: &[(Vec<Token>, f64)]) -> DataLaw {
        DataLaw::from_entries(v2(), 2, entries).unwrap()
    }

    fn masked_oracle(entries: &[(Vec<Token>, f64)]) -> Oracle {
        Oracle::new(law(entries), KernelSchedule::absorbing(v2(), &[1.0]).unwrap()).unwrap()
    }

    #[test]
    fn residual_examples() {
        assert_eq!(
            residual_distribution(&cat(&[0.6, 0.4]), &cat(&[0.4, 0.6])).unwrap().probs(),
            &[1.0, 0.0]
        );
        assert_eq!(
            residual_distribution(&cat(&[1.0, 0.0]), &cat(&[0.0, 1.0])).unwrap().probs(),
            &[1.0, 0.0]
        );
        assert_eq!(
            residual_distribution(&cat(&[0.5, 0.5]), &cat(&[0.5, 0.5])),
            Err(Error::ZeroRejectionMass)
        );
    }

    #[test]
    fn low_conf_examples() {
        assert_eq!(low_conf_select(&[(0, 0.9), (1, 0.2), (2, 0.5)], 1).unwrap(), vec![1]);
        assert_eq!(low_conf_select(&[(0, 0.5), (1, 0.5), (2, 0.5)], 2).unwrap(), vec![0, 1]);
        assert!(low_conf_select(&[(0, 0.5)], 0).unwrap().is_empty());
        assert!(matches!(
            low_conf_select(&[(0, 0.5)], 2),
            Err(Error::BudgetTooLarge { .. })
        ));
    }

    #[test]
    fn nothing_to_decode() {
        let o = masked_oracle(&[(vec![0, 1], 0.5), (vec![1, 0], 0.5)]);
        let pair = PredictorPair::new(&o, &o).unwrap();
        let xt = Sequence(vec![0, 1]);
        let mut rng = SeededRng::new(0);
        assert_eq!(decode_independent(&xt, 1, &o, v2(), &mut rng).unwrap(), xt);
        assert_eq!(decode_sequential(&xt, 1, &o, &mut rng).unwrap(), xt);
        let (out, trace) = decode_speculative(&xt, 1, &pair, &DecodeConfig::default(), &mut rng).unwrap();
        assert_eq!(out, xt);
        assert!(trace.rounds.is_empty());
        assert_eq!(trace.verify_passes, 0);
    }

    #[test]
    fn deterministic_law_decodes_deterministically() {
        let o = masked_oracle(&[(vec![0, 1], 1.0)]);
        let pair = PredictorPair::new(&o, &o).unwrap();
        let xt = Sequence(vec![2, 2]);
        let mut rng = SeededRng::new(8);
        for _ in 0..50 {
            assert_eq!(decode_independent(&xt, 1, &o, v2(), &mut rng).unwrap().0, vec![0, 1]);
            assert_eq!(decode_sequential(&xt, 1, &o, &mut rng).unwrap().0, vec![0, 1]);
            let (out, trace) = decode_speculative(&xt, 1, &pair, &DecodeConfig::with_window(2), &mut rng).unwrap();
            assert_eq!(out.0, vec![0, 1]);
            assert_eq!(trace.accepts_total, trace.proposals_total);
        }
    }

    #[test]
    fn identical_laws_accept_everything() {
        let pi = PositionTable::repeated(v2(), cat(&[0.3, 0.7]), 6).unwrap();
        let pair = PredictorPair::new(&pi, &pi).unwrap();
        let mut rng = SeededRng::new(1);
        let xt = Sequence::masked(v2(), 6);
        let (_, trace) = decode_speculative(&xt, 1, &pair, &DecodeConfig::with_window(4), &mut rng).unwrap();
        assert_eq!(trace.accepts_total, 6);
        assert_eq!(trace.verify_passes, 2); // ceil(6 / 4)
        assert!(trace.is_well_formed());
    }

    #[test]
    fn disjoint_support_always_corrects() {
        let pi = PositionTable::repeated(v2(), cat(&[1.0, 0.0]), 2).unwrap();
        let rho = PositionTable::repeated(v2(), cat(&[0.0, 1.0]), 2).unwrap();
        let pair = PredictorPair::new(&pi, &rho).unwrap();
        let mut rng = SeededRng::new(2);
        let mut state = Sequence::masked(v2(), 2);
        let rec = speculative_round(&mut state, &[0], &pair, 1, &mut rng).unwrap();
        assert_eq!(rec.drafts, vec![1]);
        assert_eq!(rec.accepted, vec![false]);
        assert_eq!(rec.committed, vec![0]);
        assert_eq!(rec.confidences, vec![1.0]);
        assert_eq!(state.0, vec![0, 2]);
    }

    #[test]
    fn single_position_commit_frequency() {
        let pi = PositionTable::repeated(v2(), cat(&[0.6, 0.4]), 1).unwrap();
        let rho = PositionTable::repeated(v2(), cat(&[0.4, 0.6]), 1).unwrap();
        let pair = PredictorPair::new(&pi, &rho).unwrap();
        let mut rng = SeededRng::new(3);
        let n = 100_000;
        let mut zeros = 0;
        for _ in 0..n {
            let mut state = Sequence::masked(v2(), 1);
            let rec = speculative_round(&mut state, &[0], &pair, 1, &mut rng).unwrap();
            zeros += (rec.committed[0] == 0) as usize;
        }
        let f = zeros as f64 / n as f64;
        assert!((f - 0.6).abs() <= 0.01, "{f}");
    }

    #[test]
    fn rejection_truncates_window() {
        let pi = PositionTable::repeated(v2(), cat(&[1.0, 0.0]), 4).unwrap();
        let rho = PositionTable::repeated(v2(), cat(&[0.0, 1.0]), 4).unwrap();
        let pair = PredictorPair::new(&pi, &rho).unwrap();
        let mut rng = SeededRng::new(5);
        let (out, trace) =
            decode_speculative(&Sequence::masked(v2(), 4), 1, &pair, &DecodeConfig::with_window(4), &mut rng).unwrap();
        assert_eq!(out.0, vec![0; 4]);
        assert_eq!(trace.rounds.len(), 4);
        assert_eq!(trace.drafted_total, 4 + 3 + 2 + 1);
        assert_eq!(trace.proposals_total, 4);
        assert_eq!(trace.accepts_total, 0);
        assert!(trace.is_well_formed());
    }

    #[test]
    fn full_inference_single_pass_matches_speculative() {
        let o = masked_oracle(&[(vec![0, 1], 0.5), (vec![1, 0], 0.3), (vec![1, 1], 0.2)]);
        let pair = PredictorPair::new(&o, &o).unwrap();
        let sched = KernelSchedule::absorbing(v2(), &[1.0]).unwrap();
        let xt = Sequence::masked(v2(), 2);
        let cfg = DecodeConfig::with_window(2);
        for seed in 0..20 {
            let run = full_inference(&xt, 1, &pair, &cfg, &sched, &mut SeededRng::new(seed)).unwrap();
            let (direct, trace) = decode_speculative(&xt, 1, &pair, &cfg, &mut SeededRng::new(seed)).unwrap();
            assert_eq!(run.output, direct);
            assert_eq!(run.passes[0].trace, trace);
        }
    }

    #[test]
    fn zero_budget_later_passes_are_noops() {
        let o = masked_oracle(&[(vec![0, 1], 0.5), (vec![1, 0], 0.5)]);
        let pair = PredictorPair::new(&o, &o).unwrap();
        let sched = KernelSchedule::absorbing(v2(), &[1.0]).unwrap();
        let cfg = DecodeConfig {
            n_steps: 4,
            ..DecodeConfig::with_window(2)
        };
        let run = full_inference(&Sequence::masked(v2(), 2), 1, &pair, &cfg, &sched, &mut SeededRng::new(4)).unwrap();
        assert_eq!(run.passes.len(), 4);
        for p in &run.passes[1..] {
            assert!(p.decoded.is_empty());
            assert_eq!(p.output, run.passes[0].output);
        }
        assert_eq!(run.output, run.passes[0].output);
    }

    #[test]
    fn deterministic_law_survives_remasking() {
        // survival must stay positive so committed tokens remain consistent evidence
        let sched = KernelSchedule::absorbing(v2(), &[0.9]).unwrap();
        let law = DataLaw::from_entries(v2(), 2, &[(vec![1, 0], 1.0)]).unwrap();
        let o = Oracle::new(law, sched.clone()).unwrap();
        let pair = PredictorPair::new(&o, &o).unwrap();
        let cfg = DecodeConfig {
            n_steps: 3,
            remask_budget: 1,
            ..DecodeConfig::with_window(2)
        };
        let run = full_inference(&Sequence::masked(v2(), 2), 1, &pair, &cfg, &sched, &mut SeededRng::new(4)).unwrap();
        assert_eq!(run.output.0, vec![1, 0]);
        for p in &run.passes {
            assert!(p.trace.confidences().iter().all(|&(_, c)| c == 1.0));
        }
        assert_eq!(run.passes[1].decoded, vec![0]);
    }

    #[test]
    fn reverse_transition_examples() {
        let s = KernelSchedule::absorbing(v2(), &[0.5, 0.5]).unwrap();
        let mut rng = SeededRng::new(6);
        let xt = Sequence(vec![1, 2]);
        let x0 = Sequence(vec![1, 0]);
        let n = 100_000;
        let mut masked = 0;
        for _ in 0..n {
            let prev = reverse_transition(&xt, &x0, 2, &s, &mut rng).unwrap();
            assert_eq!(prev[0], 1);
            masked += (prev[1] == 2) as usize;
        }
        let f = masked as f64 / n as f64;
        assert!((f - 2.0 / 3.0).abs() <= 0.01, "{f}");
        let id = KernelSchedule::absorbing(v2(), &[0.0]).unwrap();
        let xt = Sequence(vec![0, 1]);
        assert_eq!(reverse_transition(&xt, &xt, 1, &id, &mut rng).unwrap(), xt);
    }

    #[test]
    fn decode_config_bounds() {
        assert!(DecodeConfig::with_window(0).validate(4).is_err());
        let cfg = DecodeConfig {
            remask_budget: 5,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(4), Err(Error::Invariant { path, .. }) if path == "decode.remask_budget"));
        assert!(DecodeConfig::default().validate(4).is_ok());
    }
}
