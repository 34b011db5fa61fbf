//! Convergence analysis of the walk.
//!
//! Exact transfer operators act on matrix coefficients of degree one
//! (`E[g]`) and degree (1,1) (`E[conj(g) (x) g]`). Monte Carlo estimators
//! measure `||T f||_2` for Lipschitz test functions and the mixing time of
//! chain ensembles.
//!
//! The averaging operator is `T f(x) = E f(g x)` with `g` one walk step.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{
    eigenvalues, embed_block_matrix, haar_sud, hermitian_eigen, left_apply_block, operator_norm,
    stream_rng, CMat, C64, CZERO,
};
use crate::walk::{sample_step, Ensemble, LocalMeasure, Variant, WalkConfig};

/// Largest dimension accepted by the dense degree-2 eigenproblem.
pub const DEGREE2_EXACT_LIMIT: usize = 64;

/// Bracket for `d * gap` of the degree-2 operator under Haar local steps,
/// frozen from the exact values at `d = 3..=12` (1.5 down to 0.134).
pub const D_GAP_BRACKET: (f64, f64) = (0.1, 1.6);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub d: usize,
    pub degree: u8,
    pub top_eigenvalue: f64,
    pub second_eigenvalue: f64,
    pub gap: f64,
    pub d_times_gap: f64,
    /// Operator norm of the transfer matrix restricted to the mean-zero part.
    pub contraction_factor: f64,
    pub method: Method,
}

/// `M = E[g]` over one step; `(T f)(x) = f(M x)` for linear coefficients.
pub fn degree1_transfer(cfg: &WalkConfig) -> CMat {
    let d = cfg.d;
    let mean = cfg.eta.mean_block();
    let mut m = CMat::zeros(d, d);
    for i in 0..d {
        m += embed_block_matrix(&mean, i, (i + 1) % d, d);
    }
    m / C64::new(d as f64, 0.0)
}

/// Spectral summary of [`degree1_transfer`]. The degree-1 coefficients have
/// mean zero, so every eigenvalue counts toward the contraction.
pub fn degree1_report(cfg: &WalkConfig) -> Result<SpectralReport> {
    let m = degree1_transfer(cfg);
    let mut moduli: Vec<f64> = eigenvalues(&m)?.iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    let top = moduli[0];
    Ok(SpectralReport {
        d: cfg.d,
        degree: 1,
        top_eigenvalue: top,
        second_eigenvalue: top,
        gap: 1.0 - top,
        d_times_gap: cfg.d as f64 * (1.0 - top),
        contraction_factor: operator_norm(&m),
        method: Method::Exact,
    })
}

#[derive(Clone, Copy)]
enum Slot {
    One,
    Block(usize, usize),
}

/// Nonzero entries `(row, col, slot)` of a step matrix embedded at `(i, j)`.
fn step_slots(d: usize, i: usize, j: usize) -> Vec<(usize, usize, Slot)> {
    let loc = |a: usize| {
        if a == i {
            Some(0)
        } else if a == j {
            Some(1)
        } else {
            None
        }
    };
    let mut slots = Vec::with_capacity(d + 2);
    for a in 0..d {
        match loc(a) {
            None => slots.push((a, a, Slot::One)),
            Some(x) => {
                for (c, y) in [(i, 0), (j, 1)] {
                    slots.push((a, c, Slot::Block(x, y)));
                }
            }
        }
    }
    slots
}

/// `M2 = E[conj(g) (x) g]`, assembled exactly from the first and second
/// block moments of the local measure. Row index `a*d + b`, column `c*d + e`.
pub fn degree2_matrix(cfg: &WalkConfig) -> Result<CMat> {
    let d = cfg.d;
    if d > DEGREE2_EXACT_LIMIT {
        return Err(Error::TooLarge {
            d,
            limit: DEGREE2_EXACT_LIMIT,
        });
    }
    let mean = cfg.eta.mean_block();
    let s = cfg.eta.second_moment();
    let n = d * d;
    let mut m2 = CMat::zeros(n, n);
    let w = 1.0 / d as f64;
    for i in 0..d {
        let slots = step_slots(d, i, (i + 1) % d);
        for &(a, c, s1) in &slots {
            for &(b, e, s2) in &slots {
                let v = match (s1, s2) {
                    (Slot::One, Slot::One) => C64::new(1.0, 0.0),
                    (Slot::One, Slot::Block(x, y)) => mean[(x, y)],
                    (Slot::Block(x, y), Slot::One) => mean[(x, y)].conj(),
                    (Slot::Block(x, y), Slot::Block(z, t)) => s[x][y][z][t],
                };
                m2[(a * d + b, c * d + e)] += v * w;
            }
        }
    }
    Ok(m2)
}

/// Vectorized identity, the invariant vector of `M2`.
pub fn vec_identity(d: usize) -> DVector<C64> {
    DVector::from_fn(d * d, |k, _| {
        if k / d == k % d {
            C64::new(1.0, 0.0)
        } else {
            CZERO
        }
    })
}

/// Restricted spectrum of the degree-(1,1) transfer matrix: the top
/// eigenvalue belongs to the invariant vector `vec(I)`; the second is the
/// largest modulus among the remaining eigenvalues.
pub fn degree2_transfer(cfg: &WalkConfig) -> Result<SpectralReport> {
    degree2_report(cfg.d, &degree2_matrix(cfg)?, Method::Exact)
}

/// Restricted spectrum of a degree-(1,1) transfer matrix `m2` (`d^2 x d^2`),
/// exact or estimated.
pub fn degree2_report(d: usize, m2: &CMat, method: Method) -> Result<SpectralReport> {
    if m2.nrows() != d * d || m2.ncols() != d * d {
        return Err(Error::DimensionMismatch { left: m2.nrows(), right: d * d });
    }
    let hermitian = operator_norm(&(m2 - m2.adjoint())) < 1e-12;
    let mut moduli: Vec<f64> = if hermitian {
        hermitian_eigen(m2).0.iter().map(|x| x.abs()).collect()
    } else {
        eigenvalues(m2)?.iter().map(|z| z.norm()).collect()
    };
    moduli.sort_by(|a, b| b.total_cmp(a));
    // the invariant eigenvalue is exactly 1; drop the copy closest to it
    let pos = moduli
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).abs().total_cmp(&(b.1 - 1.0).abs()))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let top = moduli.remove(pos);
    let second = moduli.first().copied().unwrap_or(0.0).min(top);
    // contraction on the orthogonal complement of vec(I)
    let u = vec_identity(d) / C64::new((d as f64).sqrt(), 0.0);
    let proj = CMat::identity(d * d, d * d) - &u * u.adjoint();
    let restricted = &proj * m2 * &proj;
    Ok(SpectralReport {
        d,
        degree: 2,
        top_eigenvalue: top,
        second_eigenvalue: second,
        gap: 1.0 - second,
        d_times_gap: d as f64 * (1.0 - second),
        contraction_factor: operator_norm(&restricted),
        method,
    })
}

/// Monte Carlo estimate of `M2` with entrywise standard errors of the real
/// and imaginary parts.
pub struct Degree2Estimate {
    pub mean: CMat,
    pub stderr_re: nalgebra::DMatrix<f64>,
    pub stderr_im: nalgebra::DMatrix<f64>,
    pub samples: usize,
}

pub fn degree2_monte_carlo<R: Rng + ?Sized>(
    cfg: &WalkConfig,
    samples: usize,
    rng: &mut R,
) -> Result<Degree2Estimate> {
    let d = cfg.d;
    if d > DEGREE2_EXACT_LIMIT {
        return Err(Error::TooLarge {
            d,
            limit: DEGREE2_EXACT_LIMIT,
        });
    }
    if samples < 2 {
        return Err(Error::Precondition("need at least two samples".into()));
    }
    let n = d * d;
    let mut sum = CMat::zeros(n, n);
    let mut sq_re = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut sq_im = nalgebra::DMatrix::<f64>::zeros(n, n);
    for _ in 0..samples {
        let step = sample_step(cfg, rng);
        let slots = step_slots(d, step.i, step.j);
        let val = |s: Slot| match s {
            Slot::One => C64::new(1.0, 0.0),
            Slot::Block(x, y) => step.block[(x, y)],
        };
        for &(a, c, s1) in &slots {
            let g1 = val(s1).conj();
            for &(b, e, s2) in &slots {
                let v = g1 * val(s2);
                let idx = (a * d + b, c * d + e);
                sum[idx] += v;
                sq_re[idx] += v.re * v.re;
                sq_im[idx] += v.im * v.im;
            }
        }
    }
    let nf = samples as f64;
    let mean = sum / C64::new(nf, 0.0);
    let se = |sq: &nalgebra::DMatrix<f64>, part: &dyn Fn(C64) -> f64| {
        nalgebra::DMatrix::from_fn(n, n, |r, c| {
            let m = part(mean[(r, c)]);
            let var = (sq[(r, c)] / nf - m * m).max(0.0) * nf / (nf - 1.0);
            (var / nf).sqrt()
        })
    };
    let stderr_re = se(&sq_re, &|z| z.re);
    let stderr_im = se(&sq_im, &|z| z.im);
    Ok(Degree2Estimate {
        mean,
        stderr_re,
        stderr_im,
        samples,
    })
}

/// Shape of a test function on SU(d).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Descriptor {
    /// `Re x_kl`.
    LinearCoeff { k: usize, l: usize },
    /// `x_kl conj(x_mn)`.
    QuadraticCoeff { k: usize, l: usize, m: usize, n: usize },
    /// `tr(x^p)` for `1 <= p < d`.
    TracePower { p: u32 },
    /// `x_kl^p`.
    EntryPower { k: usize, l: usize, p: u32 },
    /// `Re(x_00) cos(frequency * Re x_11)`, norm estimated numerically.
    Oscillatory { frequency: f64 },
    /// Arbitrary user-supplied function.
    UserGrid,
}

type Eval = Arc<dyn Fn(&CMat) -> C64 + Send + Sync>;

/// A function on SU(d) with its Lipschitz constant (operator-norm metric),
/// L2 norm and mean under Haar measure.
#[derive(Clone)]
pub struct TestFunction {
    pub descriptor: Descriptor,
    pub d: usize,
    pub lip_norm: f64,
    pub l2_norm: f64,
    pub mean: C64,
    eval: Eval,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction")
            .field("descriptor", &self.descriptor)
            .field("d", &self.d)
            .field("lip_norm", &self.lip_norm)
            .field("l2_norm", &self.l2_norm)
            .field("mean", &self.mean)
            .finish()
    }
}

fn ln_factorial(n: u32) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

impl TestFunction {
    fn check_index(d: usize, idx: &[usize]) -> Result<()> {
        if idx.iter().any(|&k| k >= d) {
            return Err(Error::Precondition(format!("coefficient index out of range for d = {d}")));
        }
        Ok(())
    }

    /// `Re x_kl`: mean 0, `||f||_2 = 1/sqrt(2d)`, Lipschitz constant 1.
    pub fn linear_coeff(d: usize, k: usize, l: usize) -> Result<Self> {
        Self::check_index(d, &[k, l])?;
        Ok(Self {
            descriptor: Descriptor::LinearCoeff { k, l },
            d,
            lip_norm: 1.0,
            l2_norm: (1.0 / (2.0 * d as f64)).sqrt(),
            mean: CZERO,
            eval: Arc::new(move |x: &CMat| C64::new(x[(k, l)].re, 0.0)),
        })
    }

    /// `x_kl conj(x_mn)` for `d >= 3`; Lipschitz constant 2. Second moments
    /// from the degree-(2,2) Haar integrals on U(d), which agree with SU(d)
    /// for balanced monomials when `d >= 3`.
    pub fn quadratic_coeff(d: usize, k: usize, l: usize, m: usize, n: usize) -> Result<Self> {
        Self::check_index(d, &[k, l, m, n])?;
        if d < 3 {
            return Err(Error::Precondition("quadratic coefficients need d >= 3".into()));
        }
        let df = d as f64;
        let (mean, second) = if k == m && l == n {
            (C64::new(1.0 / df, 0.0), 2.0 / (df * (df + 1.0)))
        } else if k == m || l == n {
            (CZERO, 1.0 / (df * (df + 1.0)))
        } else {
            (CZERO, 1.0 / (df * df - 1.0))
        };
        let var = second - mean.norm_sqr();
        Ok(Self {
            descriptor: Descriptor::QuadraticCoeff { k, l, m, n },
            d,
            lip_norm: 2.0,
            l2_norm: var.sqrt(),
            mean,
            eval: Arc::new(move |x: &CMat| x[(k, l)] * x[(m, n)].conj()),
        })
    }

    /// `tr(x^p)`, `1 <= p < d`: mean 0, `||f||_2 = sqrt(p)`, Lipschitz
    /// constant at most `p d`.
    pub fn trace_power(d: usize, p: u32) -> Result<Self> {
        if p == 0 || p as usize >= d {
            return Err(Error::Precondition(format!("trace power needs 1 <= p < d (p = {p}, d = {d})")));
        }
        Ok(Self {
            descriptor: Descriptor::TracePower { p },
            d,
            lip_norm: p as f64 * d as f64,
            l2_norm: (p as f64).sqrt(),
            mean: CZERO,
            eval: Arc::new(move |x: &CMat| {
                let mut y = x.clone();
                for _ in 1..p {
                    y = &y * x;
                }
                y.trace()
            }),
        })
    }

    /// `x_kl^p`, `p >= 1`: mean 0; `|x_kl|^2` is Beta(1, d-1) so
    /// `||f||_2^2 = p! (d-1)! / (d-1+p)!`; Lipschitz constant at most `p`.
    pub fn entry_power(d: usize, k: usize, l: usize, p: u32) -> Result<Self> {
        Self::check_index(d, &[k, l])?;
        if p == 0 {
            return Err(Error::Precondition("entry power needs p >= 1".into()));
        }
        let dm1 = d as u32 - 1;
        let ln_sq = ln_factorial(p) + ln_factorial(dm1) - ln_factorial(dm1 + p);
        Ok(Self {
            descriptor: Descriptor::EntryPower { k, l, p },
            d,
            lip_norm: p as f64,
            l2_norm: (0.5 * ln_sq).exp(),
            mean: CZERO,
            eval: Arc::new(move |x: &CMat| x[(k, l)].powu(p)),
        })
    }

    /// `Re(x_00) cos(frequency Re x_11)` for `d >= 3`. The mean vanishes
    /// (left multiplication by `diag(e^{it}, 1, e^{-it}, 1, ...)` fixes
    /// `x_11` and rotates `x_00`); the L2 norm is estimated from `samples`
    /// Haar draws.
    pub fn oscillatory<R: Rng + ?Sized>(
        d: usize,
        frequency: f64,
        samples: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if d < 3 {
            return Err(Error::Precondition("oscillatory test function needs d >= 3".into()));
        }
        let f = move |x: &CMat| C64::new(x[(0, 0)].re * (frequency * x[(1, 1)].re).cos(), 0.0);
        let mut acc = 0.0;
        for _ in 0..samples {
            acc += f(haar_sud(d, rng).matrix()).norm_sqr();
        }
        Ok(Self {
            descriptor: Descriptor::Oscillatory { frequency },
            d,
            lip_norm: 1.0 + frequency,
            l2_norm: (acc / samples.max(1) as f64).sqrt(),
            mean: CZERO,
            eval: Arc::new(f),
        })
    }

    /// Wraps an arbitrary function with caller-supplied norms.
    pub fn user<F>(d: usize, f: F, lip_norm: f64, l2_norm: f64, mean: C64) -> Self
    where
        F: Fn(&CMat) -> C64 + Send + Sync + 'static,
    {
        Self {
            descriptor: Descriptor::UserGrid,
            d,
            lip_norm,
            l2_norm,
            mean,
            eval: Arc::new(f),
        }
    }

    pub fn eval(&self, x: &CMat) -> C64 {
        (self.eval)(x)
    }

    /// `(f(x) - mean) / ||f - mean||_2`.
    pub fn eval_normalized(&self, x: &CMat) -> C64 {
        ((self.eval)(x) - self.mean) / self.l2_norm
    }

    /// Lipschitz constant of the normalized function.
    pub fn normalized_lip(&self) -> f64 {
        self.lip_norm / self.l2_norm
    }

    /// The function lies in the span of degree-1 matrix coefficients.
    pub fn is_degree_one(&self) -> bool {
        matches!(
            self.descriptor,
            Descriptor::LinearCoeff { .. } | Descriptor::TracePower { p: 1 }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_outer: usize,
    pub n_inner: usize,
    pub normalized_lip: f64,
}

impl ContractionEstimate {
    pub fn deficit(&self) -> f64 {
        1.0 - self.estimate
    }
}

/// Squared-mean estimator `(|sum|^2 - sum |y|^2) / (n (n-1))`, unbiased for
/// `|E y|^2`.
fn unbiased_abs_mean_sq(sum: C64, sum_sq: f64, n: usize) -> f64 {
    let nf = n as f64;
    (sum.norm_sqr() - sum_sq) / (nf * (nf - 1.0))
}

fn check_function(f: &TestFunction, cfg: &WalkConfig) -> Result<()> {
    if f.d != cfg.d {
        return Err(Error::DimensionMismatch {
            left: f.d,
            right: cfg.d,
        });
    }
    if !(f.l2_norm > 0.0) {
        return Err(Error::Precondition("test function has zero L2 norm".into()));
    }
    Ok(())
}

/// Monte Carlo estimate of `||T f||_2` for the normalized `f`: outer samples
/// `x ~ Haar(SU(d))`, inner samples `g ~ nu` evaluating `(T f)(x)`. The inner
/// average enters through an unbiased estimator of `|T f (x)|^2`, so the
/// inner sample size contributes variance but no bias.
pub fn contraction_estimate<R: Rng + ?Sized>(
    f: &TestFunction,
    cfg: &WalkConfig,
    n_outer: usize,
    n_inner: usize,
    rng: &mut R,
) -> Result<ContractionEstimate> {
    check_function(f, cfg)?;
    if n_outer < 2 || n_inner < 2 {
        return Err(Error::Precondition("need at least two outer and two inner samples".into()));
    }
    let base: u64 = rng.gen();
    let d = cfg.d;
    let values: Vec<f64> = (0..n_outer)
        .into_par_iter()
        .map(|k| {
            let mut r = stream_rng(base, k as u64);
            let x = haar_sud(d, &mut r).into_matrix();
            let mut sum = CZERO;
            let mut sum_sq = 0.0;
            for _ in 0..n_inner {
                let step = sample_step(cfg, &mut r);
                let mut y = x.clone();
                left_apply_block(&mut y, step.i, step.j, &step.block);
                let v = f.eval_normalized(&y);
                sum += v;
                sum_sq += v.norm_sqr();
            }
            unbiased_abs_mean_sq(sum, sum_sq, n_inner)
        })
        .collect();
    Ok(summarize(values, n_outer, n_inner, f.normalized_lip()))
}

fn summarize(values: Vec<f64>, n_outer: usize, n_inner: usize, lip: f64) -> ContractionEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se_sq = (var / n).sqrt();
    let estimate = mean.max(0.0).sqrt();
    // delta method for the square root
    let std_error = if estimate > 0.0 {
        se_sq / (2.0 * estimate)
    } else {
        se_sq.sqrt()
    };
    ContractionEstimate {
        estimate,
        std_error,
        n_outer,
        n_inner,
        normalized_lip: lip,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateDecay {
    /// First `l` with `||T^l f||_2 < rho`, if reached.
    pub steps: Option<u64>,
    pub method: Method,
    /// `(l, ||T^l f||_2)` for `l = 0, 1, ...`.
    pub trajectory: Vec<(u64, f64)>,
}

/// `||T^l f||_2` for a degree-1 function, from powers of [`degree1_transfer`].
///
/// `T^l f(x) = f(M^l x)`. For `Re x_kl` this gives `||e_k^T M^l||`; for
/// `tr x` it gives `||M^l||_F / sqrt(d)`.
fn degree_one_norms(f: &TestFunction, cfg: &WalkConfig, rho: f64, max_steps: u64) -> IterateDecay {
    let m = degree1_transfer(cfg);
    let d = cfg.d;
    let mut p = CMat::identity(d, d);
    let norm_of = |p: &CMat| match f.descriptor {
        Descriptor::LinearCoeff { k, .. } => p.row(k).norm(),
        _ => p.norm() / (d as f64).sqrt(),
    };
    let mut trajectory = vec![(0, norm_of(&p))];
    for l in 1..=max_steps {
        p = &m * p;
        let v = norm_of(&p);
        trajectory.push((l, v));
        if v < rho {
            return IterateDecay {
                steps: Some(l),
                method: Method::Exact,
                trajectory,
            };
        }
    }
    IterateDecay {
        steps: None,
        method: Method::Exact,
        trajectory,
    }
}

/// Smallest `l` with `||T^l f||_2 < rho`, `0 < rho < 1/2`. Degree-1 functions
/// are handled exactly; others by Monte Carlo over `n_outer` Haar points with
/// `n_inner` independent `l`-step chains from each.
pub fn iterate_decay<R: Rng + ?Sized>(
    f: &TestFunction,
    cfg: &WalkConfig,
    rho: f64,
    n_outer: usize,
    n_inner: usize,
    max_steps: u64,
    rng: &mut R,
) -> Result<IterateDecay> {
    if !(rho > 0.0 && rho < 0.5) {
        return Err(Error::Precondition(format!("rho must lie in (0, 1/2), got {rho}")));
    }
    check_function(f, cfg)?;
    if f.is_degree_one() {
        return Ok(degree_one_norms(f, cfg, rho, max_steps));
    }
    if n_outer < 2 || n_inner < 2 {
        return Err(Error::Precondition("need at least two outer and two inner samples".into()));
    }
    if cfg.variant == Variant::RandomEnvironment {
        return Err(Error::Precondition(
            "Monte Carlo iterate decay is defined for the fixed step distribution".into(),
        ));
    }
    let base: u64 = rng.gen();
    let d = cfg.d;
    // state: per outer point, the point and its inner chains
    let mut states: Vec<(rand_chacha::ChaCha8Rng, Vec<CMat>)> = (0..n_outer)
        .map(|k| {
            let mut r = stream_rng(base, k as u64);
            let x = haar_sud(d, &mut r).into_matrix();
            (r, vec![x; n_inner])
        })
        .collect();
    let mut trajectory = vec![(0, 1.0)];
    for l in 1..=max_steps {
        let values: Vec<f64> = states
            .par_iter_mut()
            .map(|(r, chains)| {
                let mut sum = CZERO;
                let mut sum_sq = 0.0;
                for y in chains.iter_mut() {
                    let step = sample_step(cfg, r);
                    left_apply_block(y, step.i, step.j, &step.block);
                    let v = f.eval_normalized(y);
                    sum += v;
                    sum_sq += v.norm_sqr();
                }
                unbiased_abs_mean_sq(sum, sum_sq, n_inner)
            })
            .collect();
        let est = summarize(values, n_outer, n_inner, f.normalized_lip());
        trajectory.push((l, est.estimate));
        if est.estimate < rho {
            return Ok(IterateDecay {
                steps: Some(l),
                method: Method::MonteCarlo,
                trajectory,
            });
        }
    }
    Ok(IterateDecay {
        steps: None,
        method: Method::MonteCarlo,
        trajectory,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub abs_mean_trace: f64,
    pub abs_second_moment_dev: f64,
}

/// Name of the mixing criterion recorded in every report.
pub const TRACE_MOMENT_CRITERION: &str = "trace_moments: |E tr U| < eps and |E|tr U|^2 - 1| < eps, \
with window means over a further half of the crossing step also below eps";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub d: usize,
    pub epsilon_target: f64,
    /// First confirmed crossing; `None` when not mixed within `max_steps`.
    pub steps_to_target: Option<u64>,
    pub mixed: bool,
    pub n_chains: usize,
    pub max_steps: u64,
    pub variant: Variant,
    pub seed: u64,
    pub criterion: String,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Runs `n_chains` chains from the identity, tracking `|E tr U_t|` and
/// `|E|tr U_t|^2 - 1|` after every step. A step `t` where both deviations
/// fall below `epsilon` is confirmed once their means over steps
/// `t..=t + ceil(t/2)` are also below `epsilon`; otherwise the next such step
/// is tried.
pub fn mixing_time(
    cfg: &WalkConfig,
    epsilon: f64,
    n_chains: usize,
    max_steps: u64,
) -> Result<MixingReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Precondition(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if n_chains < 2 {
        return Err(Error::Precondition("need at least two chains".into()));
    }
    let mut ensemble = Ensemble::new(cfg, n_chains);
    let mut trajectory: Vec<TrajectoryPoint> = Vec::new();
    let below = |p: &TrajectoryPoint| p.abs_mean_trace < epsilon && p.abs_second_moment_dev < epsilon;
    // index into `trajectory` of the crossing under test
    let mut candidate: Option<usize> = None;
    let mut confirmed = None;
    for t in 1..=max_steps {
        let m = ensemble.advance();
        let point = TrajectoryPoint {
            step: t,
            abs_mean_trace: m.abs_mean_trace(),
            abs_second_moment_dev: m.second_moment_deviation(),
        };
        trajectory.push(point);
        if candidate.is_none() && below(&point) {
            candidate = Some(trajectory.len() - 1);
        }
        while let Some(k) = candidate {
            let c = trajectory[k].step;
            if t < c + c.div_ceil(2) {
                break;
            }
            let window = &trajectory[k..];
            let n = window.len() as f64;
            let mean_trace = window.iter().map(|p| p.abs_mean_trace).sum::<f64>() / n;
            let mean_second = window.iter().map(|p| p.abs_second_moment_dev).sum::<f64>() / n;
            if mean_trace < epsilon && mean_second < epsilon {
                confirmed = Some(c);
                break;
            }
            candidate = trajectory[k + 1..].iter().position(below).map(|q| k + 1 + q);
        }
        if confirmed.is_some() {
            break;
        }
    }
    Ok(MixingReport {
        d: cfg.d,
        epsilon_target: epsilon,
        steps_to_target: confirmed,
        mixed: confirmed.is_some(),
        n_chains,
        max_steps,
        variant: cfg.variant,
        seed: cfg.seed,
        criterion: TRACE_MOMENT_CRITERION.to_string(),
        trajectory,
    })
}

impl MixingReport {
    /// CSV `step,abs_mean_trace,abs_second_moment_dev`.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("step,abs_mean_trace,abs_second_moment_dev\n");
        for p in &self.trajectory {
            out.push_str(&format!(
                "{},{:e},{:e}\n",
                p.step, p.abs_mean_trace, p.abs_second_moment_dev
            ));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent_estimate: f64,
    pub prefactor_estimate: f64,
    pub r_squared: f64,
    pub data: Vec<(usize, u64)>,
}

/// Least-squares fit of `log steps = log prefactor + exponent log d`.
pub fn fit_power_law(data: &[(usize, u64)]) -> Result<ScalingFit> {
    let mut ds: Vec<usize> = data.iter().map(|p| p.0).collect();
    ds.sort_unstable();
    ds.dedup();
    if ds.len() < 4 {
        return Err(Error::Degenerate(format!(
            "need at least 4 distinct dimensions, got {}",
            ds.len()
        )));
    }
    if data.iter().any(|&(d, s)| d == 0 || s == 0) {
        return Err(Error::Degenerate("dimensions and step counts must be positive".into()));
    }
    let xs: Vec<f64> = data.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = data.iter().map(|p| (p.1 as f64).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r_squared = if ss_tot <= 1e-300 {
        if ss_res <= 1e-24 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(ScalingFit {
        exponent_estimate: slope,
        prefactor_estimate: intercept.exp(),
        r_squared,
        data: data.to_vec(),
    })
}

/// Fits mixed reports; reports that did not mix are skipped.
pub fn scaling_fit(reports: &[MixingReport]) -> Result<ScalingFit> {
    let data: Vec<(usize, u64)> = reports
        .iter()
        .filter_map(|r| r.steps_to_target.map(|s| (r.d, s)))
        .collect();
    fit_power_law(&data)
}

/// Walk configuration for the local measure `eta` at dimension `d`.
pub fn config(d: usize, eta: LocalMeasure, seed: u64) -> Result<WalkConfig> {
    WalkConfig::new(d, eta, Variant::FixedNu, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::CONE;
    use crate::walk::{axis_rotation, LocalMeasure};
    use nalgebra::Matrix2;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        stream_rng(seed, 0)
    }

    fn max_abs(m: &CMat) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn degree1_haar_closed_form() {
        for d in 2..=32 {
            let m = degree1_transfer(&WalkConfig::haar(d, 0).unwrap());
            let expected = CMat::identity(d, d) * C64::new((d as f64 - 2.0) / d as f64, 0.0);
            assert!(max_abs(&(m - expected)) < 1e-12);
        }
    }

    #[test]
    fn degree1_monte_carlo_cross_check() {
        let cfg = WalkConfig::haar(4, 0).unwrap();
        let mut r = rng(1);
        let n = 400_000;
        let mut sum = CMat::zeros(4, 4);
        for _ in 0..n {
            let s = sample_step(&cfg, &mut r);
            sum += embed_block_matrix(&s.block, s.i, s.j, 4);
        }
        let mc = sum / C64::new(n as f64, 0.0);
        assert!(max_abs(&(mc - degree1_transfer(&cfg))) < 3e-3);
    }

    #[test]
    fn degree1_identity_measure_does_not_move() {
        let eta = LocalMeasure::uniform_atoms(vec![Matrix2::identity()], true).unwrap();
        let m = degree1_transfer(&config(5, eta, 0).unwrap());
        assert!(max_abs(&(m - CMat::identity(5, 5))) < 1e-15);
    }

    #[test]
    fn degree1_report_for_d4() {
        let r = degree1_report(&WalkConfig::haar(4, 0).unwrap()).unwrap();
        assert!((r.contraction_factor - 0.5).abs() < 1e-12);
        assert!((r.top_eigenvalue - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degree2_d2_is_rank_one_projector() {
        let cfg = WalkConfig::haar(2, 0).unwrap();
        let r = degree2_transfer(&cfg).unwrap();
        assert!((r.top_eigenvalue - 1.0).abs() < 1e-12);
        assert!(r.second_eigenvalue.abs() < 1e-10);
        let m2 = degree2_matrix(&cfg).unwrap();
        let v = vec_identity(2) / C64::new(2f64.sqrt(), 0.0);
        let proj = &v * v.adjoint();
        assert!(max_abs(&(m2 - proj)) < 1e-14);
    }

    #[test]
    fn degree2_fixes_identity_vector() {
        let etas = [
            LocalMeasure::Haar,
            LocalMeasure::two_axis(0.8),
            LocalMeasure::two_axis_symmetric(0.8),
        ];
        for eta in etas {
            for d in [2, 3, 5] {
                let cfg = config(d, eta.clone(), 0).unwrap();
                let m2 = degree2_matrix(&cfg).unwrap();
                let v = vec_identity(d);
                assert!((&m2 * &v - &v).norm() < 1e-13);
                let r = degree2_transfer(&cfg).unwrap();
                assert!((r.top_eigenvalue - 1.0).abs() < 1e-10);
                assert!(r.second_eigenvalue <= r.top_eigenvalue);
                assert!(r.second_eigenvalue >= 0.0);
            }
        }
    }

    #[test]
    fn degree2_is_hermitian_for_symmetric_measures() {
        for eta in [LocalMeasure::Haar, LocalMeasure::two_axis_symmetric(1.1)] {
            let m2 = degree2_matrix(&config(4, eta, 0).unwrap()).unwrap();
            assert!(operator_norm(&(&m2 - m2.adjoint())) < 1e-13);
            let (vals, _) = hermitian_eigen(&m2);
            assert!(vals.iter().all(|v| *v >= -1.0 - 1e-12 && *v <= 1.0 + 1e-12));
        }
    }

    /// For Haar steps `M2` acts on matrices as `X -> E[g X g^dagger]`; the
    /// diagonal of `X` diffuses along the cycle, so the second eigenvalue is
    /// `1 - (1 - cos(2 pi / d)) / d` once that exceeds the off-diagonal decay
    /// `(d - 3) / d`.
    #[test]
    fn degree2_haar_matches_cycle_diffusion() {
        for d in 3..=12 {
            let r = degree2_transfer(&WalkConfig::haar(d, 0).unwrap()).unwrap();
            let df = d as f64;
            let diffusion = 1.0 - (1.0 - (2.0 * std::f64::consts::PI / df).cos()) / df;
            let off_diagonal = (df - 3.0) / df;
            assert!((r.second_eigenvalue - diffusion.max(off_diagonal)).abs() < 1e-10, "d = {d}");
        }
    }

    #[test]
    fn degree2_rejects_large_dimension() {
        let err = degree2_transfer(&WalkConfig::haar(65, 0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::TooLarge { d: 65, .. }));
    }

    #[test]
    fn degree2_monte_carlo_agrees_with_exact() {
        for eta in [LocalMeasure::Haar, LocalMeasure::two_axis(0.9)] {
            let cfg = config(4, eta, 0).unwrap();
            let exact = degree2_matrix(&cfg).unwrap();
            let est = degree2_monte_carlo(&cfg, 100_000, &mut rng(2)).unwrap();
            for r in 0..16 {
                for c in 0..16 {
                    let diff = est.mean[(r, c)] - exact[(r, c)];
                    assert!(diff.re.abs() <= 5.0 * est.stderr_re[(r, c)] + 1e-12);
                    assert!(diff.im.abs() <= 5.0 * est.stderr_im[(r, c)] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn test_function_norms_match_sampling() {
        let d = 4;
        let mut r = rng(3);
        let fns = vec![
            TestFunction::linear_coeff(d, 1, 2).unwrap(),
            TestFunction::quadratic_coeff(d, 0, 0, 0, 0).unwrap(),
            TestFunction::quadratic_coeff(d, 0, 1, 0, 2).unwrap(),
            TestFunction::quadratic_coeff(d, 0, 1, 2, 3).unwrap(),
            TestFunction::trace_power(d, 2).unwrap(),
            TestFunction::entry_power(d, 0, 0, 3).unwrap(),
        ];
        let n = 200_000;
        let xs: Vec<CMat> = (0..n).map(|_| haar_sud(d, &mut r).into_matrix()).collect();
        for f in fns {
            let mut mean = CZERO;
            let mut sq = 0.0;
            for x in &xs {
                let v = f.eval_normalized(x);
                mean += v;
                sq += v.norm_sqr();
            }
            assert!((mean / n as f64).norm() < 0.02, "{f:?}");
            assert!((sq / n as f64 - 1.0).abs() < 0.03, "{f:?}");
        }
    }

    #[test]
    fn contraction_of_linear_coefficient() {
        let d = 4;
        let cfg = WalkConfig::haar(d, 0).unwrap();
        let f = TestFunction::linear_coeff(d, 0, 0).unwrap();
        let est = contraction_estimate(&f, &cfg, 10_000, 100, &mut rng(4)).unwrap();
        assert!((est.estimate - 0.5).abs() < 3.0 * est.std_error, "{est:?}");
        let tr = TestFunction::trace_power(d, 1).unwrap();
        let est = contraction_estimate(&tr, &cfg, 10_000, 100, &mut rng(5)).unwrap();
        assert!((est.estimate - 0.5).abs() < 3.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn contraction_rejects_zero_function() {
        let cfg = WalkConfig::haar(3, 0).unwrap();
        let f = TestFunction::user(3, |_| CZERO, 0.0, 0.0, CZERO);
        assert!(matches!(
            contraction_estimate(&f, &cfg, 10, 10, &mut rng(6)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn contraction_is_reproducible() {
        let cfg = WalkConfig::haar(3, 0).unwrap();
        let f = TestFunction::linear_coeff(3, 0, 0).unwrap();
        let a = contraction_estimate(&f, &cfg, 200, 10, &mut rng(7)).unwrap();
        let b = contraction_estimate(&f, &cfg, 200, 10, &mut rng(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn iterate_decay_closed_forms() {
        let f4 = TestFunction::linear_coeff(4, 0, 0).unwrap();
        let cfg4 = WalkConfig::haar(4, 0).unwrap();
        // 0.5^1 is not strictly below 0.5 - 1e-15
        let r = iterate_decay(&f4, &cfg4, 0.5 - 1e-15, 2, 2, 100, &mut rng(8)).unwrap();
        assert_eq!(r.steps, Some(2));
        let f10 = TestFunction::linear_coeff(10, 0, 0).unwrap();
        let cfg10 = WalkConfig::haar(10, 0).unwrap();
        let r = iterate_decay(&f10, &cfg10, (-1f64).exp(), 2, 2, 100, &mut rng(8)).unwrap();
        assert_eq!(r.steps, Some(5));
        assert!(iterate_decay(&f4, &cfg4, 0.5, 2, 2, 100, &mut rng(8)).is_err());
    }

    #[test]
    fn iterate_decay_strict_crossing_at_half() {
        // 0.5^1 = 0.5 is not below 0.5 - but rho = 0.5 is out of range, so
        // check the strictness rule through the trajectory instead
        let f = TestFunction::linear_coeff(4, 0, 0).unwrap();
        let cfg = WalkConfig::haar(4, 0).unwrap();
        let r = iterate_decay(&f, &cfg, 0.3, 2, 2, 100, &mut rng(8)).unwrap();
        assert_eq!(r.steps, Some(2));
        assert!((r.trajectory[1].1 - 0.5).abs() < 1e-15);
        assert!((r.trajectory[2].1 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn iterate_decay_monte_carlo_tracks_exact_rate() {
        // x_00^2 keeps the factor (d-2)/d under Haar steps, like linear ones
        let d = 4;
        let cfg = WalkConfig::haar(d, 0).unwrap();
        let f = TestFunction::entry_power(d, 0, 0, 2).unwrap();
        let r = iterate_decay(&f, &cfg, 0.2, 4000, 20, 20, &mut rng(9)).unwrap();
        // exact: 0.5^3 = 0.125 < 0.2 < 0.25
        assert_eq!(r.steps, Some(3));
        assert_eq!(r.method, Method::MonteCarlo);
    }

    #[test]
    fn mixing_d2_in_one_step() {
        let r = mixing_time(&WalkConfig::haar(2, 3).unwrap(), 0.05, 10_000, 100).unwrap();
        assert_eq!(r.steps_to_target, Some(1));
    }

    #[test]
    fn mixing_loose_target_is_fast() {
        let r = mixing_time(&WalkConfig::haar(4, 3).unwrap(), 0.9, 2000, 100).unwrap();
        assert!(r.steps_to_target.unwrap() <= 5);
    }

    #[test]
    fn stationary_chain_does_not_mix() {
        let eta = LocalMeasure::uniform_atoms(vec![Matrix2::identity()], true).unwrap();
        let r = mixing_time(&config(3, eta, 0).unwrap(), 0.1, 100, 50).unwrap();
        assert!(!r.mixed);
        assert_eq!(r.trajectory.len(), 50);
        assert!((r.trajectory[49].abs_mean_trace - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mixing_is_monotone_in_epsilon() {
        let cfg = WalkConfig::haar(5, 11).unwrap();
        let steps: Vec<u64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&e| mixing_time(&cfg, e, 2000, 10_000).unwrap().steps_to_target.unwrap())
            .collect();
        assert!(steps[0] <= steps[1] && steps[1] <= steps[2], "{steps:?}");
    }

    #[test]
    fn power_law_fits() {
        let data: Vec<(usize, u64)> = (3..=8).map(|d| (d, (d * d) as u64)).collect();
        let fit = fit_power_law(&data).unwrap();
        assert!((fit.exponent_estimate - 2.0).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let flat: Vec<(usize, u64)> = (3..=8).map(|d| (d, 7)).collect();
        let fit = fit_power_law(&flat).unwrap();
        assert!(fit.exponent_estimate.abs() < 1e-12);
        assert!((fit.prefactor_estimate - 7.0).abs() < 1e-9);
        assert!(fit_power_law(&[(3, 9), (4, 16)]).is_err());
        assert!(fit_power_law(&[(3, 9), (3, 9), (4, 16), (5, 25)]).is_err());
    }

    #[test]
    fn trajectory_csv_header() {
        let r = mixing_time(&WalkConfig::haar(2, 1).unwrap(), 0.5, 100, 3).unwrap();
        let csv = r.trajectory_csv();
        assert!(csv.starts_with("step,abs_mean_trace,abs_second_moment_dev\n1,"));
    }

    #[test]
    fn quadratic_mean_is_reported() {
        let f = TestFunction::quadratic_coeff(3, 1, 1, 1, 1).unwrap();
        assert!((f.mean - CONE / 3.0).norm() < 1e-15);
        let _ = axis_rotation([0.0, 0.0, 1.0], 0.1);
    }
}
