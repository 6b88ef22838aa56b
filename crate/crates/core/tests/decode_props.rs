use dlmlab::{
    decode_speculative, exact_commit_law, full_inference, low_conf_select, residual_distribution,
    speculative_round, Categorical, DataLaw, DecodeConfig, KernelSchedule, Oracle, PositionTable,
    PredictorPair, SeededRng, Sequence, Vocabulary,
};
use proptest::prelude::*;

fn dist(s: usize) -> impl Strategy<Value = Categorical> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..1.0], s)
        .prop_filter("some mass", |w| w.iter().sum::<f64>() > 0.0)
        .prop_map(|w| Categorical::normalize(&w).unwrap())
}

fn pair_of(s: usize) -> impl Strategy<Value = (Categorical, Categorical)> {
    (dist(s), dist(s))
}

proptest! {
    #[test]
    fn commit_law_recovers_target((pi, rho) in (2usize..=8).prop_flat_map(pair_of)) {
        let law = exact_commit_law(&pi, &rho).unwrap();
        for x in 0..pi.len() {
            prop_assert!((law.prob(x) - pi.prob(x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn residual_lives_where_target_exceeds_draft((pi, rho) in (2usize..=6).prop_flat_map(pair_of)) {
        if let Ok(r) = residual_distribution(&pi, &rho) {
            for x in 0..pi.len() {
                if r.prob(x) > 0.0 {
                    prop_assert!(pi.prob(x) > rho.prob(x));
                }
            }
        }
    }

    /// Rounds commit a prefix of the window, stop at the first rejection and
    /// never commit a token outside the target support.
    #[test]
    fn rounds_are_well_formed((pi, rho) in (2usize..=4).prop_flat_map(pair_of), k in 1usize..=6, seed in any::<u64>()) {
        let s = pi.len();
        let v = Vocabulary::new(s).unwrap();
        let target = PositionTable::repeated(v, pi.clone(), 8).unwrap();
        let draft = PositionTable::repeated(v, rho, 8).unwrap();
        let pair = PredictorPair::new(&target, &draft).unwrap();
        let cfg = DecodeConfig::with_window(k);
        let (x, trace) = decode_speculative(&Sequence::masked(v, 8), 1, &pair, &cfg, &mut SeededRng::new(seed)).unwrap();
        prop_assert!(trace.is_well_formed());
        prop_assert!(x.is_clean(v));
        prop_assert_eq!(trace.committed_total(), 8);
        prop_assert!(x.iter().all(|&tok| pi.prob(tok) > 0.0));
        for r in &trace.rounds {
            let rejected = r.accepted.iter().filter(|a| !**a).count();
            prop_assert!(rejected <= 1);
            if rejected == 1 {
                prop_assert!(!r.accepted.last().unwrap());
            }
            for (c, &tok) in r.confidences.iter().zip(&r.committed) {
                prop_assert_eq!(*c, pi.prob(tok));
            }
        }
    }

    #[test]
    fn low_conf_picks_the_smallest(conf in prop::collection::vec(0.0f64..=1.0, 0..12), pick in any::<prop::sample::Index>()) {
        let pairs: Vec<(usize, f64)> = conf.iter().copied().enumerate().collect();
        let budget = if pairs.is_empty() { 0 } else { pick.index(pairs.len() + 1) };
        let chosen = low_conf_select(&pairs, budget).unwrap();
        prop_assert_eq!(chosen.len(), budget);
        prop_assert!(chosen.windows(2).all(|w| w[0] < w[1]));
        let worst_chosen = chosen.iter().map(|&i| conf[i]).fold(f64::MIN, f64::max);
        for (i, &c) in conf.iter().enumerate() {
            if !chosen.contains(&i) {
                prop_assert!(c >= worst_chosen);
            }
        }
        prop_assert!(low_conf_select(&pairs, pairs.len() + 1).is_err());
    }

    /// Every pass of a multi-pass run leaves a clean sequence in the law's
    /// support and re-decodes exactly the positions it re-masked.
    #[test]
    fn full_inference_stays_in_support(seed in any::<u64>(), budget in 1usize..=3, steps in 2usize..=4) {
        let v = Vocabulary::new(2).unwrap();
        let law = DataLaw::random(v, 3, 0.5, seed).unwrap();
        let sched = KernelSchedule::absorbing(v, &[0.8]).unwrap();
        let oracle = Oracle::new(law.clone(), sched.clone()).unwrap();
        let pair = PredictorPair::new(&oracle, &oracle).unwrap();
        let cfg = DecodeConfig { n_steps: steps, remask_budget: budget, ..DecodeConfig::with_window(2) };
        let run = full_inference(&Sequence::masked(v, 3), 1, &pair, &cfg, &sched, &mut SeededRng::new(seed)).unwrap();
        prop_assert_eq!(run.passes.len(), steps);
        for w in run.passes.windows(2) {
            prop_assert_eq!(&w[0].remasked, &w[1].decoded);
        }
        for p in &run.passes {
            prop_assert!(law.table()[law.encode(&p.output)] > 0.0);
        }
    }
}

#[test]
fn window_one_is_sequential_in_law() {
    let v = Vocabulary::new(2).unwrap();
    let law = DataLaw::from_entries(v, 2, &[(vec![0, 0], 0.6), (vec![1, 1], 0.4)]).unwrap();
    let sched = KernelSchedule::absorbing(v, &[1.0]).unwrap();
    let oracle = Oracle::new(law, sched).unwrap();
    let pair = PredictorPair::new(&oracle, &oracle).unwrap();
    let mut rng = SeededRng::new(5);
    for _ in 0..200 {
        let (x, trace) = decode_speculative(&Sequence::masked(v, 2), 1, &pair, &DecodeConfig::with_window(1), &mut rng).unwrap();
        assert_eq!(x[0], x[1]);
        assert_eq!(trace.rounds.len(), 2);
    }
    let mut state = Sequence::masked(v, 2);
    assert!(speculative_round(&mut state, &[], &pair, 1, &mut rng).is_err());
}
