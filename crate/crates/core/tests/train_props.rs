use dlmlab::{
    forward::KernelKind, loss_eval, marginal, prefix_posterior, train_position_conditioned,
    DataLaw, HybridContext, KernelSchedule, Oracle, SeededRng, TimeSampler, TrainConfig,
    Vocabulary,
};
use proptest::prelude::*;

/// Expected summed loss of the oracle, enumerating `t`, `x_0` and `x_t`.
fn exact_oracle_loss(law: &DataLaw, sched: &KernelSchedule, sampler: TimeSampler) -> f64 {
    let d = law.dim();
    let a = sched.alphabet_size();
    let mut total = 0.0;
    for (t, pt) in sampler.support(sched.steps()) {
        let rows: Vec<_> = (0..law.vocab().size()).map(|x| marginal(x, t, sched).unwrap()).collect();
        for (x0, p0) in law.support() {
            for code in 0..a.pow(d as u32) {
                let mut xt = vec![0; d];
                let mut c = code;
                for slot in xt.iter_mut().rev() {
                    *slot = c % a;
                    c /= a;
                }
                let q: f64 = (0..d).map(|j| rows[x0[j]].prob(xt[j])).product();
                if q == 0.0 {
                    continue;
                }
                for j in (0..d).filter(|&j| xt[j] != x0[j]) {
                    let mut state = x0[..j].to_vec();
                    state.extend_from_slice(&xt[j..]);
                    let pi = prefix_posterior(law, sched, &HybridContext::split(&state, j, t)).unwrap();
                    total -= pt * p0 * q * pi.prob(x0[j]).ln();
                }
            }
        }
    }
    total
}

#[test]
fn oracle_loss_is_the_enumerated_entropy() {
    let v = Vocabulary::new(2).unwrap();
    let law = DataLaw::random(v, 3, 1.0, 2).unwrap();
    let sched = KernelSchedule::with_terminal_rate(KernelKind::Absorbing, v, 2, 0.9).unwrap();
    let oracle = Oracle::new(law.clone(), sched.clone()).unwrap();
    let est = loss_eval(&oracle, &law, &sched, TimeSampler::Uniform, 200_000, &mut SeededRng::new(1)).unwrap();
    let exact = exact_oracle_loss(&law, &sched, TimeSampler::Uniform);
    assert!((est.per_sequence - exact).abs() <= 0.01, "{} vs {exact}", est.per_sequence);
}

#[test]
fn trained_loss_is_bounded_by_the_oracle() {
    let v = Vocabulary::new(2).unwrap();
    for seed in 0..3 {
        let law = DataLaw::random(v, 2, 0.8, seed).unwrap();
        let sched = KernelSchedule::absorbing(v, &[0.5, 0.5]).unwrap();
        let model = train_position_conditioned(&law, &sched, &TrainConfig::new(50_000, seed)).unwrap();
        let oracle = Oracle::new(law.clone(), sched.clone()).unwrap();
        let eval = |m: &dyn dlmlab::TargetModel| {
            loss_eval(m, &law, &sched, TimeSampler::Uniform, 20_000, &mut SeededRng::new(99)).unwrap().per_token
        };
        let (lo, hi) = (eval(&oracle), eval(&model));
        assert!(lo <= hi + 0.02, "seed {seed}: oracle {lo}, trained {hi}");
    }
}

#[test]
fn predictions_converge_on_seen_contexts() {
    let v = Vocabulary::new(2).unwrap();
    let law = DataLaw::random(v, 2, 1.0, 6).unwrap();
    let sched = KernelSchedule::absorbing(v, &[0.6]).unwrap();
    let mut cfg = TrainConfig::new(200_000, 3);
    cfg.smoothing = 0.0;
    let model = train_position_conditioned(&law, &sched, &cfg).unwrap();
    for (key, _) in model.contexts() {
        let ctx = key.context();
        let tv = dlmlab::tv_distance(
            model.predict(&ctx).unwrap().probs(),
            prefix_posterior(&law, &sched, &ctx).unwrap().probs(),
        )
        .unwrap();
        assert!(tv <= 0.02, "{key:?}: {tv}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Counts form a commutative monoid, so shards can merge in any order.
    #[test]
    fn shards_merge_in_any_order(a in any::<u64>(), b in any::<u64>()) {
        let v = Vocabulary::new(2).unwrap();
        let law = DataLaw::random(v, 2, 1.0, 1).unwrap();
        let sched = KernelSchedule::absorbing(v, &[0.5]).unwrap();
        let left = train_position_conditioned(&law, &sched, &TrainConfig::new(200, a)).unwrap();
        let right = train_position_conditioned(&law, &sched, &TrainConfig::new(200, b)).unwrap();
        let mut ab = left.clone();
        ab.merge(&right);
        let mut ba = right.clone();
        ba.merge(&left);
        prop_assert_eq!(ab.to_json(), ba.to_json());
    }

    #[test]
    fn smoothed_predictions_are_valid(lambda in 0.01f64..3.0, seed in any::<u64>()) {
        let v = Vocabulary::new(3).unwrap();
        let law = DataLaw::random(v, 2, 1.0, seed).unwrap();
        let sched = KernelSchedule::absorbing(v, &[0.7]).unwrap();
        let mut cfg = TrainConfig::new(100, seed);
        cfg.smoothing = lambda;
        let model = train_position_conditioned(&law, &sched, &cfg).unwrap();
        for tokens in [[3, 3], [0, 3], [1, 2]] {
            for pivot in 0..2 {
                if pivot == 1 || tokens[0] == 3 {
                    let ctx = HybridContext::split(&tokens, pivot, 1);
                    if ctx.validate(v, 2).is_ok() {
                        let p = model.predict(&ctx).unwrap();
                        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}
