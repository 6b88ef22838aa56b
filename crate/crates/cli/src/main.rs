use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dlmlab::experiment::{write_atomic, SUITES};
use dlmlab::{builtin_suite, emit_report, load_config, run_experiment, ExperimentConfig};

const EXIT_PASS: u8 = 0;
const EXIT_METRIC_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// Exact tabular experiments on speculative discrete diffusion decoding.
#[derive(Parser)]
#[command(name = "dlmlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment configuration and write its report.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Parse and validate a configuration, printing it with defaults filled.
    Validate { config: PathBuf },
    /// Run a built-in suite; each member reports into `<out>/<label>`.
    Suite {
        name: String,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(r) = self.replications {
            cfg.replications = r;
        }
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(match cli.command {
        Command::Run { config, overrides } => run(&config, &overrides),
        Command::Validate { config } => validate(&config),
        Command::Suite { name, overrides } => suite(&name, &overrides),
    })
}

fn validate(path: &Path) -> u8 {
    match load_config(path) {
        Ok(cfg) => {
            print!("{}", cfg.to_toml());
            EXIT_PASS
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn run(path: &Path, overrides: &Overrides) -> u8 {
    let mut cfg = match load_config(path) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    overrides.apply(&mut cfg);
    if let Err(e) = cfg.prepare() {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    match execute(&cfg) {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_METRIC_FAILURE,
        Err(code) => code,
    }
}

/// Runs and emits one configuration; `Ok(passed)` once the report is written.
fn execute(cfg: &ExperimentConfig) -> Result<bool, u8> {
    let report = run_experiment(cfg);
    if let Err(e) = emit_report(&report, &cfg.output) {
        eprintln!("error: {e}");
        return Err(EXIT_CONFIG);
    }
    print!("{}", report.summary());
    Ok(report.passed())
}

fn suite(name: &str, overrides: &Overrides) -> u8 {
    let Some(members) = builtin_suite(name) else {
        eprintln!("error: unknown suite `{name}`; available: {}", SUITES.join(", "));
        return EXIT_CONFIG;
    };
    let root = overrides
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("suite-{name}")));
    let mut index = String::from("label,kind,pass\n");
    let mut all_passed = true;
    for (label, mut cfg) in members {
        overrides.apply(&mut cfg);
        cfg.output = root.join(&label);
        if let Err(e) = cfg.prepare() {
            eprintln!("error: {label}: {e}");
            return EXIT_CONFIG;
        }
        println!("== {label}");
        let passed = match execute(&cfg) {
            Ok(p) => p,
            Err(code) => return code,
        };
        all_passed &= passed;
        index.push_str(&format!("{label},{},{passed}\n", cfg.kind.as_str()));
    }
    if let Err(e) = write_atomic(&root.join("suite.csv"), &index) {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    if all_passed {
        EXIT_PASS
    } else {
        EXIT_METRIC_FAILURE
    }
}
