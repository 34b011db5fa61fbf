//! Words over a generator registry.

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::Unitary;

/// One generator or its inverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Letter {
    pub gen: u32,
    /// `+1` or `-1`.
    pub exp: i8,
}

impl Letter {
    pub fn new(gen: u32, exp: i8) -> Self {
        assert!(exp == 1 || exp == -1, "exponent must be +1 or -1");
        Self { gen, exp }
    }

    pub fn inverse(self) -> Self {
        Self {
            gen: self.gen,
            exp: -self.exp,
        }
    }
}

/// A finite product of generators, read left to right:
/// `eval(w) = g_1^{e_1} g_2^{e_2} ... g_l^{e_l}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Word {
    letters: Vec<Letter>,
    cached: Option<Unitary>,
}

impl Word {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_letters(letters: Vec<Letter>) -> Self {
        Self {
            letters,
            cached: None,
        }
    }

    pub fn single(gen: u32, exp: i8) -> Self {
        Self::from_letters(vec![Letter::new(gen, exp)])
    }

    pub fn letters(&self) -> &[Letter] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn cached_value(&self) -> Option<&Unitary> {
        self.cached.as_ref()
    }

    pub fn set_cached(&mut self, value: Unitary) {
        self.cached = Some(value);
    }

    /// Formal inverse: reversed letters with flipped exponents.
    pub fn inverse(&self) -> Word {
        Word {
            letters: self.letters.iter().rev().map(|l| l.inverse()).collect(),
            cached: self.cached.as_ref().map(Unitary::inverse),
        }
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &Word) -> Word {
        let mut letters = Vec::with_capacity(self.len() + other.len());
        letters.extend_from_slice(&self.letters);
        letters.extend_from_slice(&other.letters);
        Word::from_letters(letters)
    }

    pub fn append(&mut self, other: &Word) {
        self.letters.extend_from_slice(&other.letters);
        self.cached = None;
    }

    pub fn push(&mut self, letter: Letter) {
        self.letters.push(letter);
        self.cached = None;
    }

    /// `self` repeated `r` times.
    pub fn repeat(&self, r: usize) -> Word {
        Word::from_letters(self.letters.repeat(r))
    }

    /// Text form: one `gen_id exponent` pair per line.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.len() * 8);
        for l in &self.letters {
            let _ = writeln!(s, "{} {}", l.gen, l.exp);
        }
        s
    }

    /// Parses [`Word::to_text`] output. Blank lines and `#` comments are
    /// skipped; errors name the offending line (1-based).
    pub fn parse<R: BufRead>(reader: R) -> Result<Word> {
        let mut letters = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let bad = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let mut parts = t.split_whitespace();
            let (Some(g), Some(e), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad(format!("expected `gen_id exponent`, got `{t}`")));
            };
            let gen: u32 = g.parse().map_err(|_| bad(format!("bad generator id `{g}`")))?;
            let exp: i8 = match e {
                "1" | "+1" => 1,
                "-1" => -1,
                _ => return Err(bad(format!("exponent must be 1 or -1, got `{e}`"))),
            };
            letters.push(Letter { gen, exp });
        }
        Ok(Word::from_letters(letters))
    }
}
