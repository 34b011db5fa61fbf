//! Solovay-Kitaev refinement over an arbitrary base approximator, the
//! balanced group-commutator decomposition, and refined block generators.

use nalgebra::{DVector, Matrix2};
use serde::{Deserialize, Serialize};

use super::cells::{quat_distance, quat_normalize, Quat};
use super::registry::{Composite, Registry};
use super::word::Word;
use crate::error::{Error, Result};
use crate::matcore::{
    expm_skew, hermitian_eigen, operator_norm, quaternion_from_su2, su2_from_quaternion,
    unitary_eigen, CMat, C64,
};

/// Below this error a level is at the floating-point floor and is not
/// required to contract.
pub const FLOAT_FLOOR: f64 = 1e-12;

/// Produces a word and the exact value of that word for a target.
pub trait BaseApproximator {
    fn dim(&self) -> usize;
    fn approximate(&mut self, target: &CMat) -> Result<(Word, CMat)>;
}

/// Worst error seen at each recursion level across all calls.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkStats {
    pub level_errors: Vec<f64>,
    pub base_calls: u64,
}

impl SkStats {
    fn record(&mut self, level: usize, err: f64) {
        if self.level_errors.len() <= level {
            self.level_errors.resize(level + 1, 0.0);
        }
        self.level_errors[level] = self.level_errors[level].max(err);
    }

    /// `max_n eps_{n+1} / eps_n^{3/2}` over levels above the floor.
    pub fn contraction_constant(&self) -> Option<f64> {
        self.level_errors
            .windows(2)
            .filter(|w| w[0] > FLOAT_FLOOR && w[1] > FLOAT_FLOOR)
            .map(|w| w[1] / w[0].powf(1.5))
            .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))))
    }
}

/// Result of a refinement: the word, its value, and the error of the
/// top-level target at each level.
#[derive(Clone, Debug)]
pub struct SkResult {
    pub word: Word,
    pub value: CMat,
    pub chain_errors: Vec<f64>,
    /// Sound bound at each level: the base error, then
    /// `||delta - [V, W]|| + 2 ||V - V'|| + 2 ||W - W'||`.
    pub chain_bounds: Vec<f64>,
}

/// `-i log(u)` for a special unitary `u`, with eigenphases in `(-pi, pi]`
/// shifted by multiples of `2 pi` so that the trace vanishes.
pub fn principal_log_hermitian(u: &CMat) -> Result<CMat> {
    let (mut angles, v) = eigenphases(u)?;
    let n = angles.len();
    let total: f64 = angles.iter().sum();
    let m = (total / (2.0 * std::f64::consts::PI)).round() as i64;
    if m != 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| angles[a].total_cmp(&angles[b]));
        if m > 0 {
            for &k in order.iter().rev().take(m as usize) {
                angles[k] -= 2.0 * std::f64::consts::PI;
            }
        } else {
            for &k in order.iter().take((-m) as usize) {
                angles[k] += 2.0 * std::f64::consts::PI;
            }
        }
    }
    let d = DVector::from_iterator(n, angles.iter().map(|&a| C64::new(a, 0.0)));
    let h = &v * CMat::from_diagonal(&d) * v.adjoint();
    Ok((&h + h.adjoint()) * C64::new(0.5, 0.0))
}

/// Eigenphases in `(-pi, pi]` and orthonormal eigenvectors of a unitary.
///
/// Away from the eigenvalue `-1` this diagonalizes the Hermitian Cayley
/// transform `i (I - u)(I + u)^-1`, which keeps clustered phases stable.
fn eigenphases(u: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = u.nrows();
    let id = CMat::identity(n, n);
    if let Some(inv) = (&id + u).try_inverse() {
        if operator_norm(&inv) < 1e3 {
            let c = (&id - u) * inv * C64::new(0.0, 1.0);
            let c = (&c + c.adjoint()) * C64::new(0.5, 0.0);
            let (vals, v) = hermitian_eigen(&c);
            let angles: Vec<f64> = vals.iter().map(|&t| 2.0 * t.atan()).collect();
            let d = DVector::from_iterator(n, angles.iter().map(|&a| C64::from_polar(1.0, a)));
            let rec = &v * CMat::from_diagonal(&d) * v.adjoint();
            if operator_norm(&(rec - u)) < 1e-10 {
                return Ok((angles, v));
            }
        }
    }
    let (values, v) = unitary_eigen(u)?;
    Ok((values.iter().map(|z| z.arg()).collect(), v))
}

/// Hermitian `f, g` with `[f, g] = -i h` for traceless Hermitian `h`, with
/// `||f|| = ||g||`. Eigenvector phases are aligned with `reference` when
/// given so that the factors vary continuously along an iteration.
fn commutator_factors(h: &CMat, reference: Option<&CMat>) -> (CMat, CMat, CMat) {
    let n = h.nrows();
    let (vals, mut q) = hermitian_eigen(h);
    for k in 0..n {
        let z = match reference {
            Some(r) => r.column(k).dotc(&q.column(k)),
            None => {
                let p = (0..n)
                    .max_by(|&a, &b| q[(a, k)].norm().total_cmp(&q[(b, k)].norm()))
                    .unwrap_or(0);
                q[(p, k)]
            }
        };
        if z.norm() > 0.0 {
            let phase = z.conj() / z.norm();
            for r in 0..n {
                q[(r, k)] *= phase;
            }
        }
    }
    // The DFT conjugate of a traceless diagonal matrix has zero diagonal.
    let w = 2.0 * std::f64::consts::PI / n as f64;
    let scale = 1.0 / (n as f64).sqrt();
    let phi = CMat::from_fn(n, n, |j, k| C64::from_polar(scale, w * (j * k) as f64));
    let diag = CMat::from_diagonal(&DVector::from_iterator(n, vals.iter().map(|&x| C64::new(x, 0.0))));
    let hp = &phi * diag * phi.adjoint();
    let f: Vec<f64> = (0..n).map(|j| j as f64 - (n as f64 - 1.0) / 2.0).collect();
    let mut g = CMat::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            if j != k {
                g[(j, k)] = C64::new(0.0, -1.0) * hp[(j, k)] / (f[j] - f[k]);
            }
        }
    }
    let f_mat = CMat::from_diagonal(&DVector::from_iterator(n, f.iter().map(|&x| C64::new(x, 0.0))));
    let (nf, ng) = (operator_norm(&f_mat), operator_norm(&g));
    let t = if ng > 0.0 { (ng / nf).sqrt() } else { 1.0 };
    let m = &q * phi.adjoint();
    let fo = &m * (f_mat * C64::new(t, 0.0)) * m.adjoint();
    let go = &m * (g / C64::new(t, 0.0)) * m.adjoint();
    (fo, go, q)
}

fn group_commutator(v: &CMat, w: &CMat) -> CMat {
    v * w * v.adjoint() * w.adjoint()
}

/// Balanced group commutator: special unitaries `v, w` close to the identity
/// with `v w v^-1 w^-1 = delta`, for `delta` near the identity.
///
/// The first-order solution is corrected by a fixed-point iteration on the
/// logarithm; returns the pair together with the residual
/// `|| delta - v w v^-1 w^-1 ||`.
pub fn balanced_commutator(delta: &CMat) -> Result<(CMat, CMat, f64)> {
    let n = delta.nrows();
    let h = principal_log_hermitian(delta)?;
    let id = CMat::identity(n, n);
    if operator_norm(&h) < 1e-15 {
        return Ok((id.clone(), id, operator_norm(&(delta - CMat::identity(n, n)))));
    }
    let i = C64::new(0.0, 1.0);
    let attempt = |hc: &CMat, reference: Option<&CMat>| {
        let (f, g, q) = commutator_factors(hc, reference);
        let v = expm_skew(&(&f * i));
        let w = expm_skew(&(&g * i));
        let c = group_commutator(&v, &w);
        let resid = operator_norm(&(delta - &c));
        (v, w, c, q, resid)
    };
    let mut hc = h.clone();
    let (v, w, mut c, mut basis, resid) = attempt(&hc, None);
    let mut best = (v, w, resid);
    // Fixed-point correction of the logarithm, halving the step on failure.
    let mut step = 1.0;
    let mut iterations = 0;
    while best.2 > 1e-15 && iterations < 40 && step > 1e-3 {
        iterations += 1;
        let correction = principal_log_hermitian(&(delta * c.adjoint()))?;
        let trial = &hc + correction * C64::new(step, 0.0);
        let (v, w, c_new, q, resid) = attempt(&trial, Some(&basis));
        if resid < best.2 {
            best = (v, w, resid);
            hc = trial;
            c = c_new;
            basis = q;
            step = 1.0;
        } else {
            step *= 0.5;
        }
    }
    Ok(best)
}

/// Runs the recursion to `depth`, recording per-level errors in `stats`.
///
/// A level whose correction does not lower the error keeps the previous
/// approximation. Fails with [`Error::NonContracting`] after
/// [`MAX_STALLED_LEVELS`] such levels in a row above the floating-point floor.
pub fn sk_refine<B: BaseApproximator + ?Sized>(
    target: &CMat,
    base: &mut B,
    depth: usize,
    stats: &mut SkStats,
) -> Result<SkResult> {
    refine_until(target, base, FLOAT_FLOOR, depth, stats)
}

/// Like [`sk_refine`] but stops at the first level whose error is at most
/// `tol`.
pub fn refine_until<B: BaseApproximator + ?Sized>(
    target: &CMat,
    base: &mut B,
    tol: f64,
    max_depth: usize,
    stats: &mut SkStats,
) -> Result<SkResult> {
    let r = level(target, base, max_depth, tol.max(FLOAT_FLOOR), stats)?;
    let mut stalled = 0;
    for (n, w) in r.chain_errors.windows(2).enumerate() {
        if w[1] >= w[0] && w[0] > FLOAT_FLOOR {
            stalled += 1;
            if stalled >= MAX_STALLED_LEVELS {
                return Err(Error::NonContracting {
                    level: n + 1,
                    prev: w[0],
                    next: w[1],
                });
            }
        } else {
            stalled = 0;
        }
    }
    Ok(r)
}

/// Consecutive non-improving levels tolerated before giving up.
pub const MAX_STALLED_LEVELS: usize = 3;

fn level<B: BaseApproximator + ?Sized>(
    u: &CMat,
    base: &mut B,
    n: usize,
    stop: f64,
    stats: &mut SkStats,
) -> Result<SkResult> {
    let (mut word, mut value) = base.approximate(u)?;
    stats.base_calls += 1;
    let mut errors = vec![operator_norm(&(u - &value))];
    let mut bounds = vec![errors[0]];
    stats.record(0, errors[0]);
    for m in 1..=n {
        if errors[m - 1] <= stop {
            break;
        }
        let delta = u * value.adjoint();
        let (v, w, resid) = balanced_commutator(&delta)?;
        let rv = level(&v, base, m - 1, FLOAT_FLOOR, stats)?;
        let rw = level(&w, base, m - 1, FLOAT_FLOOR, stats)?;
        let mut next = rv.word.concat(&rw.word);
        next.append(&rv.word.inverse());
        next.append(&rw.word.inverse());
        next.append(&word);
        let candidate = group_commutator(&rv.value, &rw.value) * &value;
        let err = operator_norm(&(u - &candidate));
        stats.record(m, err);
        if err < errors[m - 1] {
            value = candidate;
            word = next;
            errors.push(err);
            let dv = *rv.chain_errors.last().unwrap();
            let dw = *rw.chain_errors.last().unwrap();
            bounds.push(resid + 2.0 * (dv + dw) + 1e-12);
        } else {
            // a correction that does not help is dropped
            errors.push(errors[m - 1]);
            bounds.push(bounds[m - 1]);
        }
    }
    Ok(SkResult {
        word,
        value,
        chain_errors: errors,
        chain_bounds: bounds,
    })
}

/// Smallest `c` with `eps_{n+1} <= c eps_n^{3/2}` on the given targets,
/// times `safety`.
pub fn calibrate_c_sk<B: BaseApproximator + ?Sized>(
    targets: &[CMat],
    base: &mut B,
    depth: usize,
    safety: f64,
) -> Result<f64> {
    let mut stats = SkStats::default();
    for t in targets {
        level(t, base, depth, FLOAT_FLOOR, &mut stats)?;
    }
    stats
        .contraction_constant()
        .map(|c| c * safety)
        .ok_or_else(|| Error::Degenerate("no level above the floating-point floor".into()))
}

/// The bound sequence `b_0 = eps0`, `b_{n+1} = c_sk b_n^{3/2}`.
pub fn predicted_errors(eps0: f64, c_sk: f64, depth: usize) -> Vec<f64> {
    let mut out = vec![eps0];
    for _ in 0..depth {
        let last = *out.last().unwrap();
        out.push(c_sk * last.powf(1.5));
    }
    out
}

fn as_block(m: &CMat) -> Matrix2<C64> {
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

fn from_block(b: &Matrix2<C64>) -> CMat {
    CMat::from_fn(2, 2, |r, c| b[(r, c)])
}

/// Base approximator for 2x2 targets at one cyclic pair: the nearest net
/// element or the empty word, whichever is closer.
pub struct NetBase<'a> {
    reg: &'a Registry,
    pair: usize,
}

impl<'a> NetBase<'a> {
    pub fn new(reg: &'a Registry, pair: usize) -> Result<Self> {
        if pair >= reg.dim() {
            return Err(Error::Precondition(format!("pair {pair} out of range")));
        }
        Ok(Self { reg, pair })
    }
}

impl BaseApproximator for NetBase<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn approximate(&mut self, target: &CMat) -> Result<(Word, CMat)> {
        let q = quaternion_from_su2(&as_block(target));
        let (k, dist) = self.reg.lookup(self.pair, &q)?;
        let to_identity = quat_distance(&q, &[1.0, 0.0, 0.0, 0.0]);
        if to_identity <= dist {
            return Ok((Word::empty(), CMat::identity(2, 2)));
        }
        let b = su2_from_quaternion(*self.reg.net().point(k));
        Ok((Word::single(self.reg.net_id(self.pair, k), 1), from_block(&b)))
    }
}

/// How a block target was realized.
#[derive(Clone, Debug)]
pub struct BlockWord {
    pub word: Word,
    /// Exact distance of the word's block to the target.
    pub error: f64,
}

/// Deepest refinement attempted for a composite.
pub const MAX_COMPOSITE_DEPTH: usize = 14;

impl Registry {
    /// A word for the SU(2) `target` at cyclic pair `pair`: the net lookup if
    /// that is within `tol` (or `tol` is `None`), otherwise a composite
    /// generator refined until within `tol`.
    pub fn block_word(&mut self, pair: usize, target: &Matrix2<C64>, tol: Option<f64>) -> Result<BlockWord> {
        let t = from_block(target);
        let (w, value) = NetBase::new(self, pair)?.approximate(&t)?;
        let err = operator_norm(&(&t - &value));
        let Some(tol) = tol else {
            return Ok(BlockWord { word: w, error: err });
        };
        if err <= tol {
            return Ok(BlockWord { word: w, error: err });
        }
        let tq = quaternion_from_su2(target);
        if let Some((id, c)) = self.find_composite(pair, &tq, tol) {
            return Ok(BlockWord {
                word: Word::single(id, 1),
                error: c,
            });
        }
        let (id, error) = self.add_composite(pair, target, tol)?;
        Ok(BlockWord {
            word: Word::single(id, 1),
            error,
        })
    }

    fn find_composite(&self, pair: usize, target: &Quat, tol: f64) -> Option<(u32, f64)> {
        let base = self.len() - self.composites().len();
        self.composites()
            .iter()
            .enumerate()
            .rev()
            .find(|(_, c)| c.pair == pair && c.error <= tol && quat_distance(&c.target, target) == 0.0)
            .map(|(k, c)| ((base + k) as u32, c.error))
    }

    /// Refines `target` at `pair` to within `tol` and registers the result.
    /// Returns the new id and the achieved error.
    pub fn add_composite(&mut self, pair: usize, target: &Matrix2<C64>, tol: f64) -> Result<(u32, f64)> {
        let t = from_block(target);
        let mut stats = SkStats::default();
        let mut base = NetBase::new(self, pair)?;
        let r = refine_until(&t, &mut base, tol, MAX_COMPOSITE_DEPTH, &mut stats)?;
        let err = *r.chain_errors.last().unwrap();
        if err > tol {
            return Err(Error::Numerical(format!(
                "block refinement did not reach {tol:e} within depth {MAX_COMPOSITE_DEPTH}"
            )));
        }
        let value = quat_normalize(quaternion_from_su2(&as_block(&r.value)));
        let err = quat_distance(&value, &quaternion_from_su2(target));
        let atom_length = self.word_atom_length(&r.word)?;
        let c = Composite {
            pair,
            target: quaternion_from_su2(target),
            value,
            tolerance: tol,
            error: err,
            depth: r.chain_errors.len() - 1,
            word_length: r.word.len() as u64,
            atom_length,
        };
        let id = self.push_composite(c);
        Ok((id, err))
    }

    /// Regenerates the net word behind a composite generator.
    pub fn composite_word(&self, id: u32) -> Result<Word> {
        let base = self.len() - self.composites().len();
        let c = (id as usize)
            .checked_sub(base)
            .and_then(|k| self.composites().get(k))
            .ok_or(Error::UnknownGenerator(id))?
            .clone();
        let t = from_block(&su2_from_quaternion(c.target));
        let mut stats = SkStats::default();
        let mut net = NetBase::new(self, c.pair)?;
        Ok(level(&t, &mut net, c.depth, FLOAT_FLOOR, &mut stats)?.word)
    }
}
