//! The five subcommands. Each computes its report, writes its files, and
//! returns the report.

use std::io::BufReader;
use std::path::Path;

use liewalk::genwords::{compile, CompileOptions, CompileReport, HaarNetOptions, Manifest, Registry};
use liewalk::matcore::Unitary;
use liewalk::spectra::{
    degree1_report, degree2_monte_carlo, degree2_report, degree2_transfer, fit_power_law,
    mixing_time, Method, MixingReport, ScalingFit, SpectralReport,
};
use liewalk::walk::{LocalMeasure, WalkConfig};
use liewalk::matcore::stream_rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::HarnessError;
use crate::output::{parse_matrix, read_to_string, Writer};

/// Target defect allowed by `compile`.
pub const TARGET_DEFECT_TOL: f64 = 1e-8;

pub fn parse_eta(spec: &str) -> Result<LocalMeasure, HarnessError> {
    let angle = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| HarnessError::Usage(format!("eta: bad angle {v:?}")))
    };
    match spec.split_once(':') {
        None if spec == "haar" => Ok(LocalMeasure::haar()),
        Some(("two-axis", v)) => Ok(LocalMeasure::two_axis(angle(v)?)),
        Some(("two-axis-symmetric", v)) => Ok(LocalMeasure::two_axis_symmetric(angle(v)?)),
        Some(("atoms", path)) => {
            let f = std::fs::File::open(path)
                .map_err(|e| HarnessError::Usage(format!("eta: cannot open {path}: {e}")))?;
            let (eta, warnings) = LocalMeasure::parse_atoms(BufReader::new(f), false)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            Ok(eta)
        }
        _ => Err(HarnessError::Usage(format!(
            "eta: expected haar, two-axis:<angle>, two-axis-symmetric:<angle> or atoms:<path>, got {spec:?}"
        ))),
    }
}

pub fn walk_config(cfg: &RunConfig, d: usize) -> Result<WalkConfig, HarnessError> {
    Ok(WalkConfig::new(d, parse_eta(&cfg.eta)?, cfg.variant, cfg.seed)?)
}

pub fn cmd_walk(cfg: &RunConfig) -> Result<MixingReport, HarnessError> {
    let d = cfg.require_d()?;
    let wc = walk_config(cfg, d)?;
    let report = mixing_time(&wc, cfg.epsilon, cfg.n_chains, cfg.max_steps)?;
    let mut w = Writer::new(&cfg.output_dir)?;
    w.json("walk.json", "walk_report/1", cfg, &report)?;
    w.text("walk.csv", &report.trajectory_csv())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectraOutput {
    pub degree1: SpectralReport,
    pub degree2: SpectralReport,
}

pub fn cmd_spectra(cfg: &RunConfig) -> Result<SpectraOutput, HarnessError> {
    let d = cfg.require_d()?;
    let wc = walk_config(cfg, d)?;
    let degree1 = degree1_report(&wc)?;
    let degree2 = match cfg.method {
        Method::Exact => degree2_transfer(&wc)?,
        Method::MonteCarlo => {
            let mut rng = stream_rng(cfg.seed, 0);
            let est = degree2_monte_carlo(&wc, cfg.samples, &mut rng)?;
            degree2_report(d, &est.mean, Method::MonteCarlo)?
        }
    };
    let mut w = Writer::new(&cfg.output_dir)?;
    w.json("spectra_degree1.json", "spectral_report/1", cfg, &degree1)?;
    w.json("spectra_degree2.json", "spectral_report/1", cfg, &degree2)?;
    Ok(SpectraOutput { degree1, degree2 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompileOutput {
    pub compile: CompileReport,
    pub registry: Manifest,
}

pub fn load_target(path: &Path) -> Result<Unitary, HarnessError> {
    let m = parse_matrix(&read_to_string(path)?)?;
    Ok(Unitary::special_from_matrix(m, TARGET_DEFECT_TOL)?)
}

pub fn cmd_compile(cfg: &RunConfig) -> Result<CompileOutput, HarnessError> {
    let path = cfg
        .target
        .as_deref()
        .ok_or_else(|| HarnessError::Usage("missing required field target (--target)".into()))?;
    let target = load_target(Path::new(path))?;
    let d = target.dim();
    if let Some(want) = cfg.d {
        if want != d {
            return Err(HarnessError::Usage(format!("d = {want} but the target is {d}x{d}")));
        }
    }
    let mut reg = Registry::haar(d, HaarNetOptions::new(cfg.eps1, cfg.seed))?;
    let (word, report) = compile(&target, &mut reg, cfg.tau, &CompileOptions::default())?;
    let out = CompileOutput {
        compile: report,
        registry: reg.manifest(),
    };
    let mut w = Writer::new(&cfg.output_dir)?;
    w.text("compile.word", &word.to_text())?;
    w.json("compile.json", "compile_report/1", cfg, &out)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub d: usize,
    pub steps_to_target: Option<u64>,
    pub mixed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub replay: bool,
    pub runs: Vec<SweepRun>,
    /// Dimensions that did not mix; left out of the fit.
    pub excluded: Vec<usize>,
    pub fit: Option<ScalingFit>,
}

impl SweepReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("d,steps,mixed\n");
        for r in &self.runs {
            let steps = r.steps_to_target.map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", r.d, steps, r.mixed));
        }
        out
    }
}

/// `d,steps` rows; a header line and `#` comments are skipped.
pub fn parse_replay(text: &str) -> Result<Vec<(usize, u64)>, liewalk::Error> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with(|c: char| c.is_ascii_alphabetic()) {
            continue;
        }
        let bad = || liewalk::Error::Parse {
            line: n + 1,
            message: format!("expected d,steps got {line:?}"),
        };
        let (a, b) = line.split_once(',').ok_or_else(bad)?;
        out.push((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?));
    }
    Ok(out)
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepReport, HarnessError> {
    let runs: Vec<SweepRun> = if let Some(path) = &cfg.replay {
        parse_replay(&read_to_string(Path::new(path))?)?
            .into_iter()
            .map(|(d, s)| SweepRun {
                d,
                steps_to_target: Some(s),
                mixed: true,
            })
            .collect()
    } else {
        if cfg.d_list.len() < 4 {
            return Err(HarnessError::Usage(format!(
                "d_list needs at least 4 dimensions, got {}",
                cfg.d_list.len()
            )));
        }
        let mut runs = Vec::new();
        for &d in &cfg.d_list {
            let wc = walk_config(cfg, d)?;
            let r = mixing_time(&wc, cfg.epsilon, cfg.n_chains, cfg.max_steps)?;
            runs.push(SweepRun {
                d,
                steps_to_target: r.steps_to_target,
                mixed: r.mixed,
            });
        }
        runs
    };
    if runs.len() < 4 {
        return Err(HarnessError::Usage(format!("need at least 4 data points, got {}", runs.len())));
    }
    let excluded: Vec<usize> = runs.iter().filter(|r| !r.mixed).map(|r| r.d).collect();
    let data: Vec<(usize, u64)> = runs.iter().filter_map(|r| r.steps_to_target.map(|s| (r.d, s))).collect();
    let fit = fit_power_law(&data).ok();
    let report = SweepReport {
        replay: cfg.replay.is_some(),
        runs,
        excluded,
        fit,
    };
    let mut w = Writer::new(&cfg.output_dir)?;
    w.json("sweep.json", "sweep_report/1", cfg, &report)?;
    w.text("sweep.csv", &report.csv())?;
    Ok(report)
}
