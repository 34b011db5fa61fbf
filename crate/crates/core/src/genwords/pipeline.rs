//! First-order Lie-algebra words, exponential splitting, and the end-to-end
//! compiler.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use super::ladder::{approx_gamma_ij, BOUND_SLACK};
use super::registry::{eval, Registry};
use super::sk::{principal_log_hermitian, refine_until, BaseApproximator, SkStats};
use super::word::Word;
use crate::error::{Error, Result};
use crate::matcore::{embed_block_matrix, expm_skew, operator_norm, CMat, SkewHermitian, Unitary, C64};

/// One elementary term of a traceless skew-Hermitian matrix: a traceless
/// skew-Hermitian 2x2 block acting on `(e_i, e_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraBlock {
    pub i: usize,
    pub j: usize,
    pub x: Matrix2<C64>,
}

impl AlgebraBlock {
    pub fn embedded(&self, d: usize) -> CMat {
        let mut m = embed_block_matrix(&self.x, self.i, self.j, d);
        for k in 0..d {
            if k != self.i && k != self.j {
                m[(k, k)] = C64::new(0.0, 0.0);
            }
        }
        m
    }

    /// `exp(x)`, exactly in SU(2).
    pub fn exp(&self) -> Matrix2<C64> {
        let x = &self.x;
        let theta = (x[(0, 0)].norm_sqr() + x[(0, 1)].norm_sqr()).sqrt();
        if theta == 0.0 {
            return Matrix2::identity();
        }
        let (s, c) = theta.sin_cos();
        Matrix2::identity() * C64::new(c, 0.0) + x * C64::new(s / theta, 0.0)
    }
}

/// Splits `a` into off-diagonal blocks `[[0, a_ij], [a_ji, 0]]` at `(i, j)`,
/// `i < j`, and diagonal blocks `c_k diag(i, -i)` at `(k, k + 1)` where
/// `c_k` are partial sums of the diagonal. Zero blocks are omitted.
pub fn decompose(a: &CMat) -> Vec<AlgebraBlock> {
    let d = a.nrows();
    let zero = C64::new(0.0, 0.0);
    let mut out = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            let z = a[(i, j)];
            if z.norm() > 0.0 {
                out.push(AlgebraBlock {
                    i,
                    j,
                    x: Matrix2::new(zero, z, -z.conj(), zero),
                });
            }
        }
    }
    let mut partial = 0.0;
    for k in 0..d.saturating_sub(1) {
        partial += a[(k, k)].im;
        if partial != 0.0 {
            let t = C64::new(0.0, partial);
            out.push(AlgebraBlock {
                i: k,
                j: k + 1,
                x: Matrix2::new(t, zero, zero, -t),
            });
        }
    }
    out
}

/// `sum_{a < b} || [X_a, X_b] ||_op`.
pub fn commutator_sum(blocks: &[AlgebraBlock], d: usize) -> f64 {
    let emb: Vec<CMat> = blocks.iter().map(|b| b.embedded(d)).collect();
    let mut total = 0.0;
    for a in 0..blocks.len() {
        for b in a + 1..blocks.len() {
            let (p, q) = (&blocks[a], &blocks[b]);
            if p.i != q.i && p.i != q.j && p.j != q.i && p.j != q.j {
                continue;
            }
            total += operator_norm(&(&emb[a] * &emb[b] - &emb[b] * &emb[a]));
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FirstOrderOptions {
    /// The constant `c` of the precondition `kappa^2 > c d^2 eps1`.
    pub c: f64,
    /// Accuracy required of each block word; defaults to
    /// `kappa^2 / (2 c d^2)`.
    pub block_tol: Option<f64>,
}

impl Default for FirstOrderOptions {
    fn default() -> Self {
        Self { c: 1.0, block_tol: None }
    }
}

/// A word close to `I + kappa A` with its error accounting.
#[derive(Clone, Debug)]
pub struct FirstOrderWord {
    pub word: Word,
    pub kappa: f64,
    pub blocks: usize,
    pub block_tol: f64,
    /// `1/2 sum || [kappa X_a, kappa X_b] ||`: product of block exponentials
    /// against `exp(kappa A)`.
    pub split_term: f64,
    /// `e^t - 1 - t` with `t = || kappa A ||`: `exp(kappa A)` against
    /// `I + kappa A`.
    pub affine_term: f64,
    /// Sum of the block-word errors.
    pub net_term: f64,
    /// `split_term + affine_term + net_term`.
    pub bound: f64,
    /// `d^2 kappa^2`.
    pub nominal: f64,
}

/// Concatenated block words realizing `exp(kappa X)` for each elementary
/// block `X` of `A`.
pub fn first_order_word(
    a: &SkewHermitian,
    kappa: f64,
    reg: &mut Registry,
    opts: FirstOrderOptions,
) -> Result<FirstOrderWord> {
    let d = reg.dim();
    if a.dim() != d {
        return Err(Error::DimensionMismatch { left: a.dim(), right: d });
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Precondition(format!("kappa must be positive, got {kappa}")));
    }
    let dd = (d * d) as f64;
    let tol = opts.block_tol.unwrap_or(kappa * kappa / (2.0 * opts.c * dd));
    if kappa * kappa <= opts.c * dd * tol {
        return Err(Error::Precondition(format!(
            "kappa^2 > c d^2 eps1 fails: kappa^2 = {:e}, c d^2 eps1 = {:e}",
            kappa * kappa,
            opts.c * dd * tol
        )));
    }
    let scaled = a.scaled(kappa);
    let blocks = decompose(&scaled);
    let mut word = Word::empty();
    let mut net_term = 0.0;
    for b in &blocks {
        let gw = approx_gamma_ij(&b.exp(), b.i, b.j, reg, Some(tol))?;
        net_term += gw.bound;
        word.append(&gw.word);
    }
    let split_term = 0.5 * commutator_sum(&blocks, d);
    let t = operator_norm(&scaled);
    let affine_term = t.exp() - 1.0 - t;
    Ok(FirstOrderWord {
        word,
        kappa,
        blocks: blocks.len(),
        block_tol: tol,
        split_term,
        affine_term,
        net_term,
        bound: split_term + affine_term + net_term + BOUND_SLACK,
        nominal: dd * kappa * kappa,
    })
}

/// `e^A` as the `r`-fold repetition of the first-order word for `kappa = 1/r`.
#[derive(Clone, Debug)]
pub struct ExpSplitting {
    pub word: Word,
    pub r: usize,
    /// `sum || [X_a, X_b] || / (2 r)` over the blocks of `A`.
    pub split_bound: f64,
    /// `d^2 / r`.
    pub first_order_nominal: f64,
    /// `r` times the per-repetition block error.
    pub net_bound: f64,
    /// `split_bound + net_bound`.
    pub bound: f64,
    pub block_tol: f64,
}

/// Smallest admissible repetition count, `ceil(10 ||A||^2)` (at least 1).
pub fn min_repetitions(a: &SkewHermitian) -> usize {
    ((10.0 * a.norm().powi(2)).ceil() as usize).max(1)
}

/// Block accuracy used by [`exp_splitting_word`] when none is given:
/// `1 / (20 c d^2 r^2)`, a tenth of the first-order default.
pub fn default_splitting_tol(d: usize, r: usize, c: f64) -> f64 {
    1.0 / (20.0 * c * (d * d) as f64 * (r * r) as f64)
}

pub fn exp_splitting_word(
    a: &SkewHermitian,
    r: usize,
    reg: &mut Registry,
    opts: FirstOrderOptions,
) -> Result<ExpSplitting> {
    let d = reg.dim();
    let need = min_repetitions(a);
    if r < need {
        return Err(Error::Precondition(format!(
            "r = {r} is below ceil(10 ||A||^2) = {need}"
        )));
    }
    let tol = opts.block_tol.unwrap_or_else(|| default_splitting_tol(d, r, opts.c));
    let fo = first_order_word(a, 1.0 / r as f64, reg, FirstOrderOptions { c: opts.c, block_tol: Some(tol) })?;
    let s = commutator_sum(&decompose(a.matrix()), d);
    let split_bound = s / (2.0 * r as f64);
    let net_bound = r as f64 * fo.net_term;
    Ok(ExpSplitting {
        word: fo.word.repeat(r),
        r,
        split_bound,
        first_order_nominal: (d * d) as f64 / r as f64,
        net_bound,
        bound: split_bound + net_bound + BOUND_SLACK,
        block_tol: tol,
    })
}

/// The skew-Hermitian logarithm used by the compiler.
pub fn principal_log(u: &Unitary) -> Result<SkewHermitian> {
    let h = principal_log_hermitian(u.matrix())?;
    SkewHermitian::new(h * C64::new(0.0, 1.0))
}

/// A word for `u` whose sound error bound is at most `accuracy`.
#[derive(Clone, Debug)]
pub struct Coarse {
    pub word: Word,
    pub value: CMat,
    pub log_error: f64,
    pub splitting: Option<ExpSplitting>,
    /// `log_error + splitting bound`.
    pub bound: f64,
}

/// Logarithm, then exponential splitting with `r` and the block accuracy
/// chosen so that the splitting and block terms each stay below
/// `accuracy / 2`.
pub fn coarse_word(u: &CMat, reg: &mut Registry, accuracy: f64, c: f64) -> Result<Coarse> {
    let d = reg.dim();
    let target = Unitary::special_from_matrix(u.clone(), 1e-9)?;
    let a = principal_log(&target)?;
    let log_error = operator_norm(&(expm_skew(a.matrix()) - u));
    let blocks = decompose(a.matrix());
    if blocks.is_empty() {
        return Ok(Coarse {
            word: Word::empty(),
            value: CMat::identity(d, d),
            log_error,
            splitting: None,
            bound: log_error + BOUND_SLACK,
        });
    }
    let s = commutator_sum(&blocks, d);
    let r = min_repetitions(&a).max((s / accuracy).ceil() as usize);
    let kappa = 1.0 / r as f64;
    let tol = (accuracy / (2.0 * r as f64 * blocks.len() as f64)).min(kappa * kappa / (2.0 * c * (d * d) as f64));
    let sp = exp_splitting_word(&a, r, reg, FirstOrderOptions { c, block_tol: Some(tol) })?;
    let value = eval(&sp.word, reg)?.into_matrix();
    let bound = log_error + sp.bound;
    Ok(Coarse {
        word: sp.word.clone(),
        value,
        log_error,
        splitting: Some(sp),
        bound,
    })
}

/// Coarse stage used as the base of the Solovay-Kitaev recursion in SU(d).
pub struct CoarseBase<'a> {
    pub reg: &'a mut Registry,
    pub accuracy: f64,
    pub c: f64,
}

impl BaseApproximator for CoarseBase<'_> {
    fn dim(&self) -> usize {
        self.reg.dim()
    }

    fn approximate(&mut self, target: &CMat) -> Result<(Word, CMat)> {
        let cw = coarse_word(target, self.reg, self.accuracy, self.c)?;
        Ok((cw.word, cw.value))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompileOptions {
    /// The constant `c` of the first-order precondition.
    pub c: f64,
    /// Coarse accuracy is `min(d^-C, coarse_cap)`.
    pub exponent_c: f64,
    pub coarse_cap: f64,
    pub max_sk_depth: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            c: 1.0,
            exponent_c: 2.0,
            coarse_cap: 1e-3,
            max_sk_depth: 6,
        }
    }
}

/// One stage of a compilation with its sound bound and measured error
/// against the compile target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub bound: f64,
    pub measured_error: f64,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompileReport {
    pub d: usize,
    pub tau: f64,
    pub coarse_accuracy: f64,
    pub measured_error: f64,
    pub length: usize,
    pub atom_length: u64,
    pub sk_depth: usize,
    pub stages: Vec<StageReport>,
    pub sk_level_errors: Vec<f64>,
}

/// Compiles `target` to a word within `tau` in operator norm.
pub fn compile(target: &Unitary, reg: &mut Registry, tau: f64, opts: &CompileOptions) -> Result<(Word, CompileReport)> {
    let d = reg.dim();
    if target.dim() != d {
        return Err(Error::DimensionMismatch { left: target.dim(), right: d });
    }
    if !target.is_special() {
        return Err(Error::Precondition("compile target must be special unitary".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Precondition(format!("tau must be positive, got {tau}")));
    }
    let u = target.matrix();
    let eps0 = (d as f64).powf(-opts.exponent_c).min(opts.coarse_cap);
    let mut report = CompileReport {
        d,
        tau,
        coarse_accuracy: eps0,
        measured_error: 0.0,
        length: 0,
        atom_length: 0,
        sk_depth: 0,
        stages: Vec::new(),
        sk_level_errors: Vec::new(),
    };
    let to_identity = operator_norm(&(u - CMat::identity(d, d)));
    if to_identity <= tau {
        report.measured_error = to_identity;
        report.stages.push(StageReport {
            stage: "identity".into(),
            bound: to_identity + BOUND_SLACK,
            measured_error: to_identity,
            length: 0,
        });
        return Ok((Word::empty(), report));
    }
    // the coarse stage alone suffices when tau >= eps0; otherwise it is the
    // base of the refinement at accuracy eps0
    let coarse_acc = 0.5 * if tau >= eps0 { tau } else { eps0 };
    let coarse = coarse_word(u, reg, coarse_acc, opts.c)?;
    let coarse_err = operator_norm(&(u - &coarse.value));
    report.stages.push(StageReport {
        stage: "log".into(),
        bound: coarse.log_error + BOUND_SLACK,
        measured_error: coarse.log_error,
        length: 0,
    });
    report.stages.push(StageReport {
        stage: "coarse".into(),
        bound: coarse.bound,
        measured_error: coarse_err,
        length: coarse.word.len(),
    });
    let word = if coarse_err <= tau {
        coarse.word
    } else {
        let mut stats = SkStats::default();
        let mut base = CoarseBase {
            reg,
            accuracy: coarse_acc,
            c: opts.c,
        };
        let r = refine_until(u, &mut base, tau, opts.max_sk_depth, &mut stats)?;
        for (n, (e, b)) in r.chain_errors.iter().zip(&r.chain_bounds).enumerate().skip(1) {
            report.stages.push(StageReport {
                stage: format!("sk_level_{n}"),
                bound: *b,
                measured_error: *e,
                length: 0,
            });
        }
        report.sk_depth = r.chain_errors.len() - 1;
        report.sk_level_errors = stats.level_errors.clone();
        r.word
    };
    let value = eval(&word, reg)?;
    report.measured_error = value.distance_to(u);
    report.length = word.len();
    report.atom_length = reg.word_atom_length(&word)?;
    if let Some(last) = report.stages.last_mut() {
        last.length = word.len();
    }
    Ok((word, report))
}
