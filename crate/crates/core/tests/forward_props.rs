use dlmlab::{
    forward_posterior, marginal, sample_forward, KernelKind, KernelSchedule, SeededRng, Sequence,
    Vocabulary,
};
use proptest::prelude::*;

fn schedule() -> impl Strategy<Value = KernelSchedule> {
    (
        prop_oneof![Just(KernelKind::Absorbing), Just(KernelKind::Uniform)],
        2usize..=4,
        prop::collection::vec(0.0f64..=1.0, 1..=4),
    )
        .prop_map(|(kind, s, betas)| {
            KernelSchedule::new(kind, Vocabulary::new(s).unwrap(), &betas).unwrap()
        })
}

proptest! {
    #[test]
    fn cumulative_kernels_compose(sched in schedule()) {
        for t in 1..=sched.steps() {
            let direct = sched.cumulative(t - 1).unwrap().matmul(sched.kernel(t).unwrap());
            prop_assert!(direct.max_abs_diff(sched.cumulative(t).unwrap()) <= 1e-12);
        }
    }

    #[test]
    fn marginals_are_rows_of_the_cumulative_kernel(sched in schedule()) {
        for t in 1..=sched.steps() {
            for x0 in 0..sched.vocab().size() {
                let m = marginal(x0, t, &sched).unwrap();
                prop_assert!((m.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert_eq!(m.probs(), sched.cumulative(t).unwrap().row(x0));
            }
        }
    }

    #[test]
    fn posterior_is_normalized_bayes(sched in schedule()) {
        let n = sched.alphabet_size();
        for t in 1..=sched.steps() {
            let prev = sched.cumulative(t - 1).unwrap();
            let step = sched.kernel(t).unwrap();
            for x0 in 0..sched.vocab().size() {
                let m = marginal(x0, t, &sched).unwrap();
                for xt in (0..n).filter(|&xt| m.prob(xt) > 0.0) {
                    let post = forward_posterior(xt, x0, t, &sched).unwrap();
                    for b in 0..n {
                        let joint = step.get(b, xt) * prev.get(x0, b);
                        prop_assert!((post.prob(b) * m.prob(xt) - joint).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn absorbing_corruption_only_masks(seed in any::<u64>(), beta in 0.0f64..=1.0) {
        let v = Vocabulary::new(3).unwrap();
        let sched = KernelSchedule::absorbing(v, &[beta, beta]).unwrap();
        let x0 = Sequence(vec![0, 1, 2, 1]);
        let xt = sample_forward(&x0, 2, &sched, &mut SeededRng::new(seed)).unwrap();
        for (a, b) in x0.iter().zip(xt.iter()) {
            prop_assert!(a == b || v.is_mask(*b));
        }
    }
}

#[test]
fn impossible_observation_is_rejected() {
    let v = Vocabulary::new(2).unwrap();
    let sched = KernelSchedule::absorbing(v, &[0.0]).unwrap();
    assert!(forward_posterior(v.mask_id(), 0, 1, &sched).is_err());
}
