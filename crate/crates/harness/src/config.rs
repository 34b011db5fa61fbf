//! Run configuration: defaults, `key = value` config files, CLI overrides.

use std::path::Path;

use liewalk::spectra::Method;
use liewalk::walk::Variant;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub d: Option<usize>,
    /// `haar`, `two-axis:<angle>`, `two-axis-symmetric:<angle>` or
    /// `atoms:<path>`.
    pub eta: String,
    pub variant: Variant,
    pub epsilon: f64,
    pub tau: f64,
    pub d_list: Vec<usize>,
    pub n_chains: usize,
    pub max_steps: u64,
    pub output_dir: String,
    pub seed: u64,
    pub method: Method,
    pub samples: usize,
    pub eps1: f64,
    pub target: Option<String>,
    pub replay: Option<String>,
}

impl RunConfig {
    pub fn defaults(command: &str) -> Self {
        Self {
            command: command.to_string(),
            d: None,
            eta: "haar".into(),
            variant: Variant::FixedNu,
            epsilon: 0.05,
            tau: 1e-3,
            d_list: Vec::new(),
            n_chains: 2000,
            max_steps: 100_000,
            output_dir: "out".into(),
            seed: 0,
            method: Method::Exact,
            samples: 100_000,
            eps1: 0.05,
            target: None,
            replay: None,
        }
    }

    /// Sets one field from its textual form. `threads` is accepted and
    /// ignored here; it never affects outputs.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let num = |what: &str| format!("{key}: expected {what}, got {value:?}");
        match key {
            "d" => self.d = Some(value.parse().map_err(|_| num("an integer"))?),
            "eta" => self.eta = value.to_string(),
            "variant" => {
                self.variant = match value {
                    "fixed" | "fixed_nu" | "fixed-nu" => Variant::FixedNu,
                    "random-env" | "random_environment" | "random-environment" => Variant::RandomEnvironment,
                    _ => return Err(num("fixed or random-env")),
                }
            }
            "epsilon" => self.epsilon = value.parse().map_err(|_| num("a number"))?,
            "tau" => self.tau = value.parse().map_err(|_| num("a number"))?,
            "d_list" => self.d_list = parse_d_list(value).map_err(|e| format!("{key}: {e}"))?,
            "n_chains" | "chains" => self.n_chains = value.parse().map_err(|_| num("an integer"))?,
            "max_steps" => self.max_steps = value.parse().map_err(|_| num("an integer"))?,
            "output_dir" => self.output_dir = value.to_string(),
            "seed" => self.seed = value.parse().map_err(|_| num("an integer"))?,
            "method" => {
                self.method = match value {
                    "exact" => Method::Exact,
                    "monte-carlo" | "monte_carlo" => Method::MonteCarlo,
                    _ => return Err(num("exact or monte-carlo")),
                }
            }
            "samples" => self.samples = value.parse().map_err(|_| num("an integer"))?,
            "eps1" => self.eps1 = value.parse().map_err(|_| num("a number"))?,
            "target" => self.target = Some(value.to_string()),
            "replay" => self.replay = Some(value.to_string()),
            "threads" => {
                value.parse::<usize>().map_err(|_| num("an integer"))?;
            }
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file. Blank lines and `#` comments are
    /// skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(HarnessError::Usage(format!("config line {}: expected key = value", n + 1)));
            };
            self.set(k.trim(), v.trim())
                .map_err(|e| HarnessError::Usage(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn require_d(&self) -> Result<usize, HarnessError> {
        self.d
            .ok_or_else(|| HarnessError::Usage("missing required field d (--d)".into()))
    }
}

/// `3..12` (inclusive) or `3,4,8`.
pub fn parse_d_list(s: &str) -> Result<Vec<usize>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| format!("bad range start {a:?}"))?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| format!("bad range end {b:?}"))?;
        if b < a {
            return Err(format!("empty range {s:?}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("bad dimension {t:?}")))
        .collect()
}

/// Thread count from the flag, else `LIEWALK_THREADS`.
pub fn thread_count(flag: Option<usize>) -> Result<Option<usize>, HarnessError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("LIEWALK_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| HarnessError::Usage(format!("LIEWALK_THREADS: expected an integer, got {v:?}"))),
        _ => Ok(None),
    }
}
