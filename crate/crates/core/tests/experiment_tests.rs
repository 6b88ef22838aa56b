use std::fs;

use dlmlab::experiment::{
    builtin_suite, emit_report, Comparison, parse_config, run_experiment, ExperimentKind, LawSpec,
    SpeedupModel, SUITES,
};
use dlmlab::{DecodeMode, Error};
use proptest::prelude::*;

fn smoke() -> Vec<(String, dlmlab::ExperimentConfig)> {
    builtin_suite("smoke").unwrap()
}

#[test]
fn every_kind_has_a_builtin_member() {
    let all = builtin_suite("all").unwrap();
    for kind in ExperimentKind::ALL {
        assert!(all.iter().any(|(_, c)| c.kind == kind), "{}", kind.as_str());
    }
    for name in SUITES {
        assert!(!builtin_suite(name).unwrap().is_empty(), "{name}");
    }
}

/// Smoke runs use a quarter of the samples, so only the exact gates are
/// asserted here; the statistical ones are covered at full scale.
#[test]
fn smoke_suite_runs_and_reruns_identically() {
    for (label, cfg) in smoke() {
        let a = run_experiment(&cfg);
        assert!(a.error.is_none(), "{label}: {:?}", a.error);
        for m in a.metrics.iter().filter(|m| m.comparison == Comparison::Le && m.tolerance.is_some_and(|t| t <= 1e-9)) {
            assert_eq!(m.pass, Some(true), "{label}: {}/{} = {}", m.family, m.name, m.value);
        }
        let b = run_experiment(&cfg);
        assert_eq!(a.to_json(), b.to_json(), "{label}");
    }
}

#[test]
fn replications_do_not_depend_on_scheduling() {
    let (_, mut cfg) = smoke().into_iter().find(|(_, c)| c.kind == ExperimentKind::Exactness).unwrap();
    cfg.replications = 5;
    let report = run_experiment(&cfg);
    let reps: Vec<usize> = report.metrics.iter().map(|m| m.replication).collect();
    assert!(reps.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*reps.last().unwrap(), 4);
    let single = run_experiment(&dlmlab::ExperimentConfig { replications: 1, ..cfg.clone() });
    let first: Vec<_> = report.metrics.iter().filter(|m| m.replication == 0).cloned().collect();
    assert_eq!(first, single.metrics);
}

#[test]
fn emission_overwrites_in_place() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = smoke().remove(0);
    let report = run_experiment(&cfg);
    let out = dir.path().join("r");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("report.json"), "stale").unwrap();
    let files = emit_report(&report, &out).unwrap();
    assert!(files.iter().any(|f| f.ends_with("summary.txt")));
    let text = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(text.contains("dlmlab-report/1"));
    let leftovers: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn module_errors_are_captured() {
    let text = r#"
kind = "full-inference"
samples = 10
[law]
type = "uniform"
vocab_size = 2
dim = 2
[schedule]
kind = "absorbing"
terminal_rate = 1.0
[decode]
n_steps = 2
remask_budget = 1
"#;
    let cfg = parse_config(text).unwrap();
    let report = run_experiment(&cfg);
    // committed tokens cannot survive a schedule with zero survival
    assert!(report.error.as_deref().unwrap().contains("zero"), "{:?}", report.error);
    assert!(!report.passed());
}

#[test]
fn invariant_paths_are_reported() {
    let base = r#"
kind = "exactness"
[law]
type = "uniform"
vocab_size = 2
dim = 2
[schedule]
kind = "uniform"
"#;
    let path = |text: &str| match parse_config(text) {
        Err(Error::Invariant { path, .. }) => path,
        other => panic!("{other:?}"),
    };
    assert_eq!(path(base), "start");
    let sampled = format!("start = \"sampled\"\n{base}");
    assert!(parse_config(&sampled).is_ok());
    assert_eq!(path(&format!("start = \"sampled\"\nsamples = 0\n{base}")), "samples");
    assert_eq!(path(&base.replace("vocab_size = 2", "vocab_size = 1")), "law");
    assert_eq!(path(&format!("{}\n[decode]\nprompt_len = 5\n", sampled)), "decode.prompt_len");
    let train = sampled.replace("\"exactness\"", "\"train-consistency\"");
    assert_eq!(path(&train), "train");
    assert_eq!(path(&format!("{train}\n[train]\nn_samples = 0\n")), "train.n_samples");
}

fn arb_config() -> impl Strategy<Value = dlmlab::ExperimentConfig> {
    (
        prop::sample::select(smoke()),
        any::<u64>(),
        1usize..8,
        1u64..1_000_000,
        1usize..5,
        prop_oneof![Just(DecodeMode::Speculative), Just(DecodeMode::Sequential), Just(DecodeMode::Independent)],
        prop::option::of(1usize..2),
    )
        .prop_map(|((_, mut c), seed, reps, samples, window, mode, rt)| {
            c.seed = seed;
            c.replications = reps;
            c.samples = samples;
            c.decode.window = window;
            c.decode.mode = mode;
            c.decode.recorrupt_t = rt;
            if let LawSpec::Random { seed: s, .. } = &mut c.law {
                *s = seed;
            }
            if c.kind == ExperimentKind::Speedup {
                c.speedup.model = SpeedupModel::Random;
            }
            c
        })
}

proptest! {
    #[test]
    fn config_round_trips(cfg in arb_config()) {
        let back = parse_config(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
