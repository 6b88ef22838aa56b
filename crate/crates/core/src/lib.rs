//! Exact tabular laboratory for prefix-conditioned discrete diffusion
//! decoding with in-step speculative verification.
//!
//! Data laws are explicit joint tables over tiny vocabularies, so every
//! posterior the decoders rely on can be computed by enumeration and every
//! sampler can be checked against its exact law.
//!
//! ```
//! use dlmlab::{clean_posterior_joint, DataLaw, KernelSchedule, Sequence, Vocabulary};
//!
//! let vocab = Vocabulary::new(2)?;
//! let law = DataLaw::from_entries(vocab, 2, &[(vec![0, 1], 0.5), (vec![1, 0], 0.5)])?;
//! let sched = KernelSchedule::absorbing(vocab, &[1.0])?;
//! let xt = Sequence::masked(vocab, 2);
//! let joint = clean_posterior_joint(&law, &sched, &xt, 1, &[0, 1])?;
//! assert_eq!(joint.prob_of(&[0, 0]), 0.0);
//! # Ok::<(), dlmlab::Error>(())
//! ```

pub mod decode;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod oracle;
pub mod stats;
pub mod train;
pub mod types;

pub use decode::{
    decode_independent, decode_independent_at, decode_sequential, decode_sequential_at,
    decode_speculative, decode_speculative_at, full_inference, low_conf_select,
    residual_distribution, reverse_transition, speculative_round, DecodeConfig, DecodeMode,
    DraftModel, IndependentModel, InferenceRun, PassRecord, PositionTable, PredictorPair,
    RoundRecord, SpecTrace, TargetModel,
};
pub use error::{Error, Result};
pub use forward::{
    constant_beta, forward_posterior, marginal, recorrupt_position, sample_forward,
    sample_forward_response, KernelKind, KernelSchedule, TransitionKernel,
};
pub use oracle::{
    clean_posterior_joint, draft_law, independent_posterior, joint_prob, lemma1_identity_gap,
    mean_field_joint, prefix_posterior, regeneration_law, context_mass, DataLaw, DraftContext,
    Evidence, HybridContext, JointLaw, Oracle,
};
pub use stats::{
    cost_accounting, empirical_joint, exact_commit_law, expected_committed_length, ideal_speedup,
    measure_acceptance, simulate_committed_length, tv_distance, CostModel, EmpiricalJoint,
    MeanEstimate, SpeedupReport,
};
pub use train::{
    loss_eval, train_position_conditioned, ContextKey, LearnedPredictor, LossEstimate,
    TimeSampler, TrainConfig,
};
pub use types::{Categorical, SeededRng, Sequence, Token, Vocabulary};
pub use experiment::{
    builtin_suite, emit_report, load_config, parse_config, run_experiment, ExperimentConfig,
    ExperimentKind, ExperimentReport, MetricRow,
};

/// Guide chapters, compiled so their snippets stay in step with the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/forward.md")]
    mod forward {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/speculative.md")]
    mod speculative {}
    #[doc = include_str!("../../../book/src/speedup.md")]
    mod speedup {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/remasking.md")]
    mod remasking {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
