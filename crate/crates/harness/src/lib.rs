//! Command-line harness: `walk`, `spectra`, `compile`, `sweep`, `selftest`.
//!
//! Exit codes: 0 success, 1 usage, 2 numerical or i/o failure, 3 not mixed.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod selftest;

use config::RunConfig;
use error::HarnessError;

#[derive(Parser, Debug)]
#[command(name = "liewalk", version, about = "Local-rotation random walks on SU(d)")]
pub struct Cli {
    /// Flat `key = value` config file; CLI flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: LIEWALK_THREADS, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub output_dir: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct WalkArgs {
    #[arg(long)]
    pub d: Option<usize>,
    /// haar, two-axis:<angle>, two-axis-symmetric:<angle> or atoms:<path>
    #[arg(long)]
    pub eta: Option<String>,
    /// fixed or random-env
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long = "chains")]
    pub n_chains: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run an ensemble until the trace moments are within epsilon.
    Walk(WalkArgs),
    /// Degree-one and degree-two transfer operator spectra.
    Spectra {
        #[command(flatten)]
        walk: WalkArgs,
        /// exact or monte-carlo
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Compile a target matrix file into a word.
    Compile {
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        eps1: Option<f64>,
        #[arg(long)]
        d: Option<usize>,
    },
    /// Mixing times over a list of dimensions and a power-law fit.
    Sweep {
        #[command(flatten)]
        walk: WalkArgs,
        /// `3..12` or `3,4,8`
        #[arg(long)]
        d_list: Option<String>,
        /// Fit a `d,steps` CSV instead of running walks.
        #[arg(long)]
        replay: Option<String>,
    },
    /// Run the built-in example checks.
    Selftest {
        /// Module name or substring of `module::check`.
        #[arg(long)]
        filter: Option<String>,
        /// embed-sign
        #[arg(long)]
        inject_fault: Option<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Walk(_) => "walk",
            Command::Spectra { .. } => "spectra",
            Command::Compile { .. } => "compile",
            Command::Sweep { .. } => "sweep",
            Command::Selftest { .. } => "selftest",
        }
    }
}

fn put(pairs: &mut Vec<(&'static str, String)>, key: &'static str, v: Option<impl ToString>) {
    if let Some(v) = v {
        pairs.push((key, v.to_string()));
    }
}

fn walk_pairs(w: &WalkArgs, pairs: &mut Vec<(&'static str, String)>) {
    put(pairs, "d", w.d);
    put(pairs, "eta", w.eta.as_ref());
    put(pairs, "variant", w.variant.as_ref());
    put(pairs, "epsilon", w.epsilon);
    put(pairs, "n_chains", w.n_chains);
    put(pairs, "max_steps", w.max_steps);
}

/// Defaults, then the config file, then flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig, HarnessError> {
    let mut cfg = RunConfig::defaults(cli.command.name());
    if let Some(p) = &cli.config {
        cfg.apply_file(p)?;
    }
    let mut pairs = Vec::new();
    put(&mut pairs, "output_dir", cli.output_dir.as_ref());
    put(&mut pairs, "seed", cli.seed);
    match &cli.command {
        Command::Walk(w) => walk_pairs(w, &mut pairs),
        Command::Spectra { walk, method, samples } => {
            walk_pairs(walk, &mut pairs);
            put(&mut pairs, "method", method.as_ref());
            put(&mut pairs, "samples", *samples);
        }
        Command::Compile { target, tau, eps1, d } => {
            put(&mut pairs, "target", target.as_ref());
            put(&mut pairs, "tau", *tau);
            put(&mut pairs, "eps1", *eps1);
            put(&mut pairs, "d", *d);
        }
        Command::Sweep { walk, d_list, replay } => {
            walk_pairs(walk, &mut pairs);
            put(&mut pairs, "d_list", d_list.as_ref());
            put(&mut pairs, "replay", replay.as_ref());
        }
        Command::Selftest { .. } => {}
    }
    for (k, v) in pairs {
        cfg.set(k, &v).map_err(HarnessError::Usage)?;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), HarnessError> {
    if let Some(n) = config::thread_count(cli.threads)? {
        if n == 0 {
            return Err(HarnessError::Usage("threads must be positive".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Walk(_) => {
            let r = commands::cmd_walk(&cfg)?;
            match r.steps_to_target {
                Some(s) if r.mixed => {
                    println!("mixed after {s} steps; reports in {}", cfg.output_dir);
                    Ok(())
                }
                _ => Err(HarnessError::NotMixed(format!(
                    "no confirmed crossing within {} steps",
                    cfg.max_steps
                ))),
            }
        }
        Command::Spectra { .. } => {
            let r = commands::cmd_spectra(&cfg)?;
            println!(
                "degree 1: contraction {:.6}; degree 2: second eigenvalue {:.6}, gap {:.6}",
                r.degree1.contraction_factor, r.degree2.second_eigenvalue, r.degree2.gap
            );
            Ok(())
        }
        Command::Compile { .. } => {
            let r = commands::cmd_compile(&cfg)?;
            println!(
                "length {} measured error {:.3e}; reports in {}",
                r.compile.length, r.compile.measured_error, cfg.output_dir
            );
            Ok(())
        }
        Command::Sweep { .. } => {
            let r = commands::cmd_sweep(&cfg)?;
            if let Some(f) = &r.fit {
                println!("exponent {:.3} (r^2 {:.4})", f.exponent_estimate, f.r_squared);
            }
            if r.excluded.is_empty() {
                Ok(())
            } else {
                Err(HarnessError::NotMixed(format!("dimensions {:?} did not mix", r.excluded)))
            }
        }
        Command::Selftest { filter, inject_fault } => {
            let faults = match inject_fault {
                Some(f) => selftest::Faults::parse(f)?,
                None => selftest::Faults::default(),
            };
            let results = selftest::run(filter.as_deref(), faults, |r| match &r.outcome {
                Ok(()) => println!("PASS {}::{} ({:.2}s)", r.module, r.name, r.seconds),
                Err(e) => println!("FAIL {}::{}: {e}", r.module, r.name),
            });
            let failed = results.iter().filter(|r| r.outcome.is_err()).count();
            println!("{} checks, {failed} failed", results.len());
            if results.is_empty() {
                return Err(HarnessError::Usage("filter matched no checks".into()));
            }
            if failed > 0 {
                return Err(HarnessError::Numerical(format!("{failed} selftest checks failed")));
            }
            Ok(())
        }
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
