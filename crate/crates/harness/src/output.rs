//! Report files: a JSON envelope embedding the run configuration, CSV
//! tables, and a sidecar holding the only wall-clock value.

use std::fs;
use std::path::{Path, PathBuf};

use liewalk::matcore::{CMat, C64};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::HarnessError;

#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub schema: &'static str,
    pub config: &'a RunConfig,
    pub report: &'a T,
}

pub fn to_json<T: Serialize>(schema: &'static str, cfg: &RunConfig, report: &T) -> String {
    let env = Envelope { schema, config: cfg, report };
    let mut s = serde_json::to_string_pretty(&env).expect("reports serialize");
    s.push('\n');
    s
}

pub struct Writer {
    dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Writer {
    pub fn new(dir: &str) -> Result<Self, HarnessError> {
        let dir = PathBuf::from(dir);
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, written: Vec::new() })
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<PathBuf, HarnessError> {
        let p = self.dir.join(name);
        fs::write(&p, body)?;
        self.written.push(p.clone());
        Ok(p)
    }

    /// Writes `name` and `name.meta.json` next to it.
    pub fn json<T: Serialize>(
        &mut self,
        name: &str,
        schema: &'static str,
        cfg: &RunConfig,
        report: &T,
    ) -> Result<PathBuf, HarnessError> {
        let p = self.text(name, &to_json(schema, cfg, report))?;
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let meta = serde_json::json!({
            "file": name,
            "created_unix": secs,
            "version": env!("CARGO_PKG_VERSION"),
            "threads": rayon::current_num_threads(),
        });
        fs::write(self.dir.join(format!("{name}.meta.json")), format!("{meta:#}\n"))?;
        Ok(p)
    }
}

/// A target matrix: one row per line as `re im re im ...`; blank lines and
/// `#` comments are skipped.
pub fn parse_matrix(text: &str) -> Result<CMat, liewalk::Error> {
    let mut rows: Vec<(usize, Vec<C64>)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| liewalk::Error::Parse {
                line: n + 1,
                message: format!("expected numbers, got {line:?}"),
            })?;
        if nums.is_empty() || nums.len() % 2 != 0 {
            return Err(liewalk::Error::Parse {
                line: n + 1,
                message: format!("expected re/im pairs, got {} numbers", nums.len()),
            });
        }
        rows.push((n + 1, nums.chunks(2).map(|p| C64::new(p[0], p[1])).collect()));
    }
    let d = rows.len();
    if d == 0 {
        return Err(liewalk::Error::Parse {
            line: 0,
            message: "no matrix rows".into(),
        });
    }
    for (line, r) in &rows {
        if r.len() != d {
            return Err(liewalk::Error::Parse {
                line: *line,
                message: format!("row has {} entries, expected {d}", r.len()),
            });
        }
    }
    Ok(CMat::from_fn(d, d, |i, j| rows[i].1[j]))
}

pub fn format_matrix(m: &CMat) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:e} {:e}", m[(i, j)].re, m[(i, j)].im))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_to_string(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::Usage(format!("cannot read {}: {e}", path.display())))
}
