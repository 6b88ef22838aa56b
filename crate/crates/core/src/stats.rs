//! Verification math: distances, empirical joints, committed-length formulas
//! and pass-count cost accounting.

use serde::{Deserialize, Serialize};

use crate::decode::{residual_distribution, SpecTrace};
use crate::error::{Error, Result};
use crate::oracle::JointLaw;
use crate::types::{Categorical, SeededRng, Token};

/// Total variation distance `½ Σ |p_i − q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Law of the token committed by one accept/reject step, by enumerating
/// accept branches `min(π, ρ)` and the rejection branch times the residual.
pub fn exact_commit_law(pi: &Categorical, rho: &Categorical) -> Result<Categorical> {
    if pi.len() != rho.len() {
        return Err(Error::SupportMismatch {
            left: pi.len(),
            right: rho.len(),
        });
    }
    let mut commit: Vec<f64> = pi
        .probs()
        .iter()
        .zip(rho.probs())
        .map(|(a, b)| a.min(*b))
        .collect();
    let reject = (1.0 - commit.iter().sum::<f64>()).max(0.0);
    if reject > 0.0 {
        match residual_distribution(pi, rho) {
            Ok(res) => commit
                .iter_mut()
                .zip(res.probs())
                .for_each(|(c, r)| *c += reject * r),
            // rejection mass is rounding noise
            Err(Error::ZeroRejectionMass) => {}
            Err(e) => return Err(e),
        }
    }
    Categorical::new(commit)
}

/// Counts over the outcomes of a fixed set of positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalJoint {
    pub vocab_size: usize,
    pub positions: Vec<usize>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl EmpiricalJoint {
    pub fn new(vocab_size: usize, positions: &[usize]) -> Result<Self> {
        let cells = checked_cells(vocab_size, positions.len())?;
        Ok(EmpiricalJoint {
            vocab_size,
            positions: positions.to_vec(),
            counts: vec![0; cells],
            total: 0,
        })
    }

    pub fn code(&self, seq: &[Token]) -> Result<usize> {
        let mut code = 0;
        for &p in &self.positions {
            let tok = *seq.get(p).ok_or(Error::LengthMismatch {
                expected: p + 1,
                actual: seq.len(),
            })?;
            if tok >= self.vocab_size {
                return Err(Error::TokenOutOfRange {
                    token: tok,
                    alphabet: self.vocab_size,
                });
            }
            code = code * self.vocab_size + tok;
        }
        Ok(code)
    }

    pub fn record(&mut self, seq: &[Token]) -> Result<()> {
        let c = self.code(seq)?;
        self.counts[c] += 1;
        self.total += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &EmpiricalJoint) -> Result<()> {
        if other.positions != self.positions || other.vocab_size != self.vocab_size {
            return Err(Error::SupportMismatch {
                left: self.counts.len(),
                right: other.counts.len(),
            });
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        self.total += other.total;
        Ok(())
    }

    pub fn frequencies(&self) -> Result<Vec<f64>> {
        if self.total == 0 {
            return Err(Error::EmptySampleSet);
        }
        let n = self.total as f64;
        Ok(self.counts.iter().map(|&c| c as f64 / n).collect())
    }

    /// Frequency of one outcome, tokens listed in position order.
    pub fn frequency(&self, tokens: &[Token]) -> Result<f64> {
        let code = tokens
            .iter()
            .fold(0, |acc, &t| acc * self.vocab_size + t);
        Ok(self.frequencies()?.get(code).copied().unwrap_or(0.0))
    }

    pub fn tv_to(&self, law: &JointLaw) -> Result<f64> {
        if law.positions != self.positions {
            return Err(Error::SupportMismatch {
                left: self.positions.len(),
                right: law.positions.len(),
            });
        }
        tv_distance(&self.frequencies()?, &law.probs)
    }
}

fn checked_cells(vocab_size: usize, n_positions: usize) -> Result<usize> {
    u32::try_from(n_positions)
        .ok()
        .and_then(|n| vocab_size.checked_pow(n))
        .filter(|&c| c <= 1 << 24)
        .ok_or_else(|| Error::TooLarge(format!("{vocab_size}^{n_positions} joint cells")))
}

pub fn empirical_joint<S: AsRef<[Token]>>(
    samples: &[S],
    positions: &[usize],
    vocab_size: usize,
) -> Result<EmpiricalJoint> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut joint = EmpiricalJoint::new(vocab_size, positions)?;
    for s in samples {
        joint.record(s.as_ref())?;
    }
    Ok(joint)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// `Σ_{ℓ<k} α^ℓ`.
pub fn expected_committed_length(alpha: f64, k: usize) -> Result<f64> {
    check_alpha(alpha)?;
    if k == 0 {
        return Err(Error::invariant("k", "window must be at least 1"));
    }
    if alpha == 1.0 {
        return Ok(k as f64);
    }
    Ok((1.0 - alpha.powi(k as i32)) / (1.0 - alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
}

/// Mean and standard error of integer observations, exact when they agree.
pub fn mean_estimate(sum: u64, sum_sq: u128, n: u64) -> MeanEstimate {
    let mean = sum as f64 / n as f64;
    let std_error = if n > 1 {
        let num = (n as u128 * sum_sq).saturating_sub(sum as u128 * sum as u128);
        let var = num as f64 / (n as f64 * (n - 1) as f64);
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    MeanEstimate { mean, std_error, n }
}

/// Rounds with independent Bernoulli(α) acceptances, stopping at the first
/// rejection (which still commits a corrected token) or at the window end.
pub fn simulate_committed_length(
    alpha: f64,
    k: usize,
    n_rounds: u64,
    rng: &mut SeededRng,
) -> Result<MeanEstimate> {
    check_alpha(alpha)?;
    if k == 0 {
        return Err(Error::invariant("k", "window must be at least 1"));
    }
    if n_rounds == 0 {
        return Err(Error::EmptySampleSet);
    }
    let (mut sum, mut sum_sq) = (0u64, 0u128);
    for _ in 0..n_rounds {
        let mut c = 0u64;
        for _ in 0..k {
            c += 1;
            if rng.next_f64() >= alpha {
                break;
            }
        }
        sum += c;
        sum_sq += (c * c) as u128;
    }
    Ok(mean_estimate(sum, sum_sq, n_rounds))
}

/// Abstract per-pass costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub c_draft: f64,
    pub c_verify: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            c_draft: 1.0,
            c_verify: 1.0,
        }
    }
}

impl CostModel {
    pub fn new(c_draft: f64, c_verify: f64) -> Result<Self> {
        let cost = CostModel { c_draft, c_verify };
        cost.validate()?;
        Ok(cost)
    }

    pub fn validate(&self) -> Result<()> {
        for (path, v) in [("cost.c_draft", self.c_draft), ("cost.c_verify", self.c_verify)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invariant(path, "must be a finite value > 0"));
            }
        }
        Ok(())
    }
}

/// `E[C_k]·c_π / (c_ρ + c_π)`.
pub fn ideal_speedup(e_ck: f64, cost: CostModel) -> f64 {
    e_ck * cost.c_verify / (cost.c_draft + cost.c_verify)
}

pub fn measure_acceptance(traces: &[SpecTrace]) -> Result<f64> {
    let proposals: usize = traces.iter().map(|t| t.proposals_total).sum();
    if proposals == 0 {
        return Err(Error::NoProposals);
    }
    let accepts: usize = traces.iter().map(|t| t.accepts_total).sum();
    Ok(accepts as f64 / proposals as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub measured: f64,
    pub baseline_cost: f64,
    pub speculative_cost: f64,
    pub rounds: usize,
    pub mean_committed: f64,
    pub alpha_hat: f64,
    /// `ideal_speedup` at the measured mean committed length.
    pub ideal_at_measured_length: f64,
}

/// Cost of the speculative passes against a baseline that commits one
/// position per target pass.
pub fn cost_accounting(
    traces: &[SpecTrace],
    cost: CostModel,
    baseline_positions: usize,
) -> Result<SpeedupReport> {
    cost.validate()?;
    let rounds: usize = traces.iter().map(|t| t.rounds.len()).sum();
    if rounds == 0 {
        return Err(Error::NoProposals);
    }
    let spec_cost: f64 = traces
        .iter()
        .map(|t| t.draft_passes as f64 * cost.c_draft + t.verify_passes as f64 * cost.c_verify)
        .sum();
    let committed: usize = traces.iter().map(|t| t.committed_total()).sum();
    let mean_committed = committed as f64 / rounds as f64;
    let baseline_cost = baseline_positions as f64 * cost.c_verify;
    Ok(SpeedupReport {
        measured: baseline_cost / spec_cost,
        baseline_cost,
        speculative_cost: spec_cost,
        rounds,
        mean_committed,
        alpha_hat: measure_acceptance(traces)?,
        ideal_at_measured_length: ideal_speedup(mean_committed, cost),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(p: &[f64]) -> Categorical {
        Categorical::new(p.to_vec()).unwrap()
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((tv_distance(&[0.6, 0.4], &[0.5, 0.5]).unwrap() - 0.1).abs() < 1e-15);
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn commit_law_examples() {
        let law = exact_commit_law(&cat(&[0.6, 0.4]), &cat(&[0.4, 0.6])).unwrap();
        assert!((law.prob(0) - 0.6).abs() < 1e-15 && (law.prob(1) - 0.4).abs() < 1e-15);
        let p = cat(&[0.2, 0.3, 0.5]);
        assert_eq!(exact_commit_law(&p, &p).unwrap(), p);
    }

    #[test]
    fn joint_examples() {
        let one = empirical_joint(&[vec![1, 0]], &[0, 1], 2).unwrap();
        assert_eq!(one.total, 1);
        assert_eq!(one.counts, vec![0, 0, 1, 0]);
        let same = empirical_joint(&vec![vec![0, 1]; 7], &[0, 1], 2).unwrap();
        assert_eq!(same.frequency(&[0, 1]).unwrap(), 1.0);
        let none: Vec<Vec<Token>> = vec![];
        assert_eq!(empirical_joint(&none, &[0], 2), Err(Error::EmptySampleSet));
    }

    #[test]
    fn committed_length_examples() {
        assert_eq!(expected_committed_length(1.0, 5).unwrap(), 5.0);
        assert_eq!(expected_committed_length(0.0, 7).unwrap(), 1.0);
        assert_eq!(expected_committed_length(0.5, 4).unwrap(), 1.875);
        assert_eq!(expected_committed_length(1.5, 4), Err(Error::InvalidAlpha(1.5)));
        let mut rng = SeededRng::new(3);
        let one = simulate_committed_length(1.0, 6, 1000, &mut rng).unwrap();
        assert_eq!((one.mean, one.std_error), (6.0, 0.0));
        let zero = simulate_committed_length(0.0, 6, 1000, &mut rng).unwrap();
        assert_eq!((zero.mean, zero.std_error), (1.0, 0.0));
    }

    #[test]
    fn speedup_examples() {
        let equal = CostModel::new(1.0, 1.0).unwrap();
        assert_eq!(ideal_speedup(4.0, equal), 2.0);
        assert_eq!(ideal_speedup(1.0, equal), 0.5);
        let free = CostModel::new(1e-12, 1.0).unwrap();
        assert!((ideal_speedup(3.0, free) - 3.0).abs() < 1e-9);
        assert!(CostModel::new(0.0, 1.0).is_err());
    }

    #[test]
    fn acceptance_needs_proposals() {
        assert_eq!(measure_acceptance(&[]), Err(Error::NoProposals));
        assert_eq!(
            cost_accounting(&[SpecTrace::default()], CostModel::default(), 1),
            Err(Error::NoProposals)
        );
    }
}
