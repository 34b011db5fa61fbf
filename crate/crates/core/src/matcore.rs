//! Dense complex linear algebra for the unitary groups.
//!
//! All group elements are stored as dense `d x d` complex matrices. Products
//! track a declared unitarity-defect bound so that long chains of
//! multiplications know when to re-project onto the group.
//!
//! Distances between group elements use the operator norm unless a function
//! name says otherwise (`frobenius_norm`).

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;

/// Re-project long products onto the group after this many multiplications.
pub const DEFAULT_REPAIR_CADENCE: u64 = 10_000;

/// Entry tolerance used when a matrix must be special unitary.
pub const SPECIAL_DET_TOL: f64 = 1e-8;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Deterministic RNG for one stream of a seeded experiment.
///
/// Worker `k` of an experiment seeded with `seed` uses `stream_rng(seed, k)`;
/// streams never overlap.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A square complex matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix(CMat);

impl ComplexMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::Precondition("matrix dimension must be positive".into()));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(m))
    }

    pub fn identity(d: usize) -> Self {
        Self(CMat::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        Self(CMat::zeros(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_inner(self) -> CMat {
        self.0
    }
}

impl From<ComplexMatrix> for CMat {
    fn from(m: ComplexMatrix) -> Self {
        m.0
    }
}

/// Largest singular value.
pub fn operator_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Hilbert-Schmidt norm.
pub fn frobenius_norm(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `|| m^dagger m - I ||_op`.
pub fn unitarity_defect(m: &CMat) -> f64 {
    let d = m.nrows();
    operator_norm(&(m.adjoint() * m - CMat::identity(d, d)))
}

/// An element of U(d), optionally tagged as special (det = 1).
///
/// `defect` is a declared upper bound on `|| U^dagger U - I ||_op`.
#[derive(Clone, Debug, PartialEq)]
pub struct Unitary {
    m: CMat,
    defect: f64,
    special: bool,
    mults: u64,
}

impl Unitary {
    pub fn identity(d: usize) -> Self {
        Self {
            m: CMat::identity(d, d),
            defect: 0.0,
            special: true,
            mults: 0,
        }
    }

    /// Wraps `m` after measuring its defect. Fails if the defect exceeds `tol`.
    /// The special tag is set when `|det m - 1| <= SPECIAL_DET_TOL`.
    pub fn from_matrix(m: CMat, tol: f64) -> Result<Self> {
        let cm = ComplexMatrix::new(m)?;
        let m = cm.into_inner();
        let defect = unitarity_defect(&m);
        if defect > tol {
            return Err(Error::NotUnitary {
                defect,
                allowed: tol,
            });
        }
        let special = (m.determinant() - ONE).norm() <= SPECIAL_DET_TOL;
        let d = m.nrows();
        Ok(Self {
            m,
            defect: defect.max(d as f64 * f64::EPSILON),
            special,
            mults: 0,
        })
    }

    /// Like [`Unitary::from_matrix`] but fails unless the determinant is 1.
    pub fn special_from_matrix(m: CMat, tol: f64) -> Result<Self> {
        let u = Self::from_matrix(m, tol)?;
        if !u.special {
            let det = u.m.determinant();
            return Err(Error::Precondition(format!(
                "determinant {det} is not 1 within {SPECIAL_DET_TOL:e}"
            )));
        }
        Ok(u)
    }

    /// Constructs without checks; the caller vouches for the bound.
    pub(crate) fn from_parts(m: CMat, defect: f64, special: bool) -> Self {
        Self {
            m,
            defect,
            special,
            mults: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.m
    }

    pub fn into_matrix(self) -> CMat {
        self.m
    }

    pub fn defect(&self) -> f64 {
        self.defect
    }

    pub fn is_special(&self) -> bool {
        self.special
    }

    /// Number of multiplications since the last projection onto the group.
    pub fn multiplication_count(&self) -> u64 {
        self.mults
    }

    pub fn measured_defect(&self) -> f64 {
        unitarity_defect(&self.m)
    }

    pub fn det(&self) -> C64 {
        self.m.determinant()
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    pub fn inverse(&self) -> Self {
        Self {
            m: self.m.adjoint(),
            defect: self.defect,
            special: self.special,
            mults: self.mults,
        }
    }

    /// Operator-norm distance.
    pub fn distance(&self, other: &Unitary) -> f64 {
        operator_norm(&(&self.m - &other.m))
    }

    pub fn distance_to(&self, m: &CMat) -> f64 {
        operator_norm(&(&self.m - m))
    }

    fn rounding_increment(&self) -> f64 {
        self.dim() as f64 * f64::EPSILON
    }

    /// `self <- block_(i,j) * self`, where the 2x2 `block` acts on the ordered
    /// basis `(e_i, e_j)`.
    pub fn left_apply_block(&mut self, i: usize, j: usize, block: &Matrix2<C64>) {
        left_apply_block(&mut self.m, i, j, block);
        self.defect += self.rounding_increment();
        self.mults += 1;
    }

    /// `self <- self * block_(i,j)`.
    pub fn right_apply_block(&mut self, i: usize, j: usize, block: &Matrix2<C64>) {
        right_apply_block(&mut self.m, i, j, block);
        self.defect += self.rounding_increment();
        self.mults += 1;
    }

    /// Projects back onto the group if the multiplication count has reached
    /// `cadence`. Returns whether a projection happened.
    pub fn repair_if_due(&mut self, cadence: u64) -> bool {
        if cadence == 0 || self.mults < cadence {
            return false;
        }
        self.repair();
        true
    }

    /// Unconditional projection onto U(d) (or SU(d) when tagged special).
    pub fn repair(&mut self) {
        if let Ok(p) = project_unitary(&self.m) {
            let mut p = p;
            if self.special {
                p = fix_determinant(p);
            }
            *self = p;
        }
    }
}

/// Rotates a unitary with determinant close to a phase onto SU(d).
fn fix_determinant(u: Unitary) -> Unitary {
    let d = u.dim();
    let det = u.m.determinant();
    let phase = C64::from_polar(1.0, -det.arg() / d as f64);
    let m = u.m * phase;
    let defect = unitarity_defect(&m).max(d as f64 * f64::EPSILON);
    let special = (m.determinant() - ONE).norm() <= SPECIAL_DET_TOL;
    Unitary::from_parts(m, defect, special)
}

/// `m <- block_(i,j) * m`. Touches rows `i` and `j` only.
pub fn left_apply_block(m: &mut CMat, i: usize, j: usize, b: &Matrix2<C64>) {
    for c in 0..m.ncols() {
        let x = m[(i, c)];
        let y = m[(j, c)];
        m[(i, c)] = b[(0, 0)] * x + b[(0, 1)] * y;
        m[(j, c)] = b[(1, 0)] * x + b[(1, 1)] * y;
    }
}

/// `m <- m * block_(i,j)`. Touches columns `i` and `j` only.
pub fn right_apply_block(m: &mut CMat, i: usize, j: usize, b: &Matrix2<C64>) {
    for r in 0..m.nrows() {
        let x = m[(r, i)];
        let y = m[(r, j)];
        m[(r, i)] = x * b[(0, 0)] + y * b[(1, 0)];
        m[(r, j)] = x * b[(0, 1)] + y * b[(1, 1)];
    }
}

/// Product with defect bookkeeping.
pub fn mul(a: &Unitary, b: &Unitary) -> Result<Unitary> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let d = a.dim();
    Ok(Unitary {
        m: &a.m * &b.m,
        defect: a.defect + b.defect + d as f64 * f64::EPSILON,
        special: a.special && b.special,
        mults: a.mults + b.mults + 1,
    })
}

/// A traceless skew-Hermitian matrix, the Lie algebra su(d).
#[derive(Clone, Debug, PartialEq)]
pub struct SkewHermitian(CMat);

impl SkewHermitian {
    /// Relative skewness tolerance.
    pub const SKEW_TOL: f64 = 1e-12;

    pub fn new(m: CMat) -> Result<Self> {
        let m = ComplexMatrix::new(m)?.into_inner();
        let d = m.nrows();
        let norm = operator_norm(&m);
        let skew = operator_norm(&(m.adjoint() + &m));
        if skew > Self::SKEW_TOL * norm.max(1.0) {
            return Err(Error::NotSkewHermitian { defect: skew });
        }
        let tr = m.trace();
        if tr.norm() > Self::SKEW_TOL * d as f64 * norm.max(1.0) {
            return Err(Error::Precondition(format!(
                "skew-Hermitian matrix must be traceless (trace {tr})"
            )));
        }
        if norm > 2.0 * std::f64::consts::PI + 1e-9 {
            return Err(Error::Precondition(format!(
                "skew-Hermitian norm {norm} exceeds 2*pi"
            )));
        }
        Ok(Self(m))
    }

    /// Symmetrizes `m` into su(d): `(m - m^dagger)/2` minus its trace part.
    /// Does not enforce the norm bound.
    pub fn project(m: &CMat) -> CMat {
        let d = m.nrows();
        let mut a = (m - m.adjoint()) * C64::new(0.5, 0.0);
        let shift = a.trace() / d as f64;
        for k in 0..d {
            a[(k, k)] -= shift;
        }
        a
    }

    pub fn zeros(d: usize) -> Self {
        Self(CMat::zeros(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        operator_norm(&self.0)
    }

    pub fn neg(&self) -> Self {
        Self(-&self.0)
    }

    pub fn scaled(&self, s: f64) -> CMat {
        &self.0 * C64::new(s, 0.0)
    }
}

fn to_faer(m: &CMat) -> faer::Mat<C64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, C64>) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Eigendecomposition `h = V diag(values) V^dagger` of a Hermitian matrix,
/// eigenvalues in nondecreasing order.
pub fn hermitian_eigen(h: &CMat) -> (Vec<f64>, CMat) {
    let h = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let evd = to_faer(&h)
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("self-adjoint eigendecomposition converges on finite input");
    let s = evd.S().column_vector();
    let values = (0..h.nrows()).map(|k| s[k].re).collect();
    (values, from_faer(evd.U()))
}

/// Eigenvalues of a general complex square matrix.
pub fn eigenvalues(m: &CMat) -> Result<Vec<C64>> {
    to_faer(m)
        .eigenvalues()
        .map_err(|e| Error::Numerical(format!("eigenvalue iteration failed: {e:?}")))
}

/// Eigendecomposition of a unitary (normal) matrix with orthonormal
/// eigenvectors: `u = V diag(values) V^dagger`.
///
/// Eigenvectors of numerically clustered eigenvalues are re-orthonormalized
/// within their cluster.
pub fn unitary_eigen(u: &CMat) -> Result<(Vec<C64>, CMat)> {
    let d = u.nrows();
    let evd = to_faer(u)
        .eigen()
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let values: Vec<C64> = (0..d).map(|k| s[k] / s[k].norm()).collect();
    let mut v = from_faer(evd.U());
    // Gram-Schmidt in eigenvalue order; vectors with distinct eigenvalues are
    // already orthogonal up to roundoff, so this only mixes within clusters.
    for k in 0..d {
        for p in 0..k {
            if (values[p] - values[k]).norm() < 1e-6 {
                let proj = v.column(p).dotc(&v.column(k));
                let col_p = v.column(p).clone_owned();
                let mut col_k = v.column_mut(k);
                col_k -= col_p * proj;
            }
        }
        let n = v.column(k).norm();
        if n < 1e-12 {
            return Err(Error::Numerical("degenerate eigenvector basis".into()));
        }
        let mut col = v.column_mut(k);
        col /= C64::new(n, 0.0);
    }
    let rec = &v * CMat::from_diagonal(&nalgebra::DVector::from_vec(values.clone())) * v.adjoint();
    let err = operator_norm(&(rec - u));
    if err > 1e-9 {
        return Err(Error::Numerical(format!(
            "unitary eigendecomposition inaccurate ({err:.3e})"
        )));
    }
    Ok((values, v))
}

/// `exp(a)` for a (not necessarily traceless) skew-Hermitian matrix, through
/// the eigendecomposition of the Hermitian matrix `-i a`.
pub fn expm_skew(a: &CMat) -> CMat {
    let d = a.nrows();
    let h = a * C64::new(0.0, -1.0);
    let (values, v) = hermitian_eigen(&h);
    let mut vd = v.clone();
    for k in 0..d {
        let phase = C64::from_polar(1.0, values[k]);
        for r in 0..d {
            vd[(r, k)] *= phase;
        }
    }
    vd * v.adjoint()
}

/// Matrix exponential on su(d); the result is tagged special unitary.
pub fn expm(a: &SkewHermitian) -> Unitary {
    let m = expm_skew(a.matrix());
    let d = m.nrows();
    let defect = unitarity_defect(&m).max(d as f64 * f64::EPSILON);
    Unitary::from_parts(m, defect, true)
}

/// Haar-distributed unit quaternion, i.e. a Haar element of SU(2).
pub fn haar_quaternion<R: Rng + ?Sized>(rng: &mut R) -> [f64; 4] {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return q.map(|x| x / n);
        }
    }
}

/// SU(2) matrix `[[a, -conj b], [b, conj a]]` with `a = q0 + i q1`, `b = q2 + i q3`.
///
/// With this convention `|| U(q) - U(p) ||_op = |q - p|`.
pub fn su2_from_quaternion(q: [f64; 4]) -> Matrix2<C64> {
    let a = C64::new(q[0], q[1]);
    let b = C64::new(q[2], q[3]);
    Matrix2::new(a, -b.conj(), b, a.conj())
}

/// Inverse of [`su2_from_quaternion`] (reads the first column).
pub fn quaternion_from_su2(m: &Matrix2<C64>) -> [f64; 4] {
    let a = m[(0, 0)];
    let b = m[(1, 0)];
    [a.re, a.im, b.re, b.im]
}

/// Haar sample on SU(2).
pub fn haar_su2_block<R: Rng + ?Sized>(rng: &mut R) -> Matrix2<C64> {
    su2_from_quaternion(haar_quaternion(rng))
}

/// Haar sample on SU(2) as a 2x2 [`Unitary`].
pub fn haar_su2<R: Rng + ?Sized>(rng: &mut R) -> Unitary {
    let b = haar_su2_block(rng);
    let m = CMat::from_fn(2, 2, |r, c| b[(r, c)]);
    Unitary::from_parts(m, 2.0 * f64::EPSILON, true)
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Haar sample on SU(d): QR of a complex Ginibre matrix with the phases of
/// `R`'s diagonal moved into `Q`, then rescaled by a d-th root of the
/// determinant.
pub fn haar_sud<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Unitary {
    assert!(d >= 1, "dimension must be positive");
    let z = CMat::from_fn(d, d, |_, _| complex_gaussian(rng));
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..d {
        let rk = r[(k, k)];
        let phase = if rk.norm() > 0.0 { rk / rk.norm() } else { ONE };
        for row in 0..d {
            q[(row, k)] *= phase;
        }
    }
    let det = q.determinant();
    let fix = C64::from_polar(1.0, -det.arg() / d as f64);
    let q = q * fix;
    let defect = unitarity_defect(&q).max(d as f64 * f64::EPSILON);
    Unitary::from_parts(q, defect, true)
}

/// Nearest unitary in Frobenius distance (polar factor `W V^dagger` of the
/// SVD `m = W S V^dagger`).
pub fn project_unitary(m: &CMat) -> Result<Unitary> {
    let m = ComplexMatrix::new(m.clone())?.into_inner();
    let d = m.nrows();
    let svd = m.svd(true, true);
    let smin = svd.singular_values.min();
    let smax = svd.singular_values.max();
    if smin <= 1e-12 * smax.max(1e-300) {
        return Err(Error::Singular);
    }
    let (Some(u), Some(vt)) = (svd.u, svd.v_t) else {
        return Err(Error::Numerical("SVD did not produce singular vectors".into()));
    };
    let p = u * vt;
    let defect = unitarity_defect(&p).max(d as f64 * f64::EPSILON);
    let special = (p.determinant() - ONE).norm() <= SPECIAL_DET_TOL;
    Ok(Unitary::from_parts(p, defect, special))
}

/// Embeds a 2x2 matrix acting on the ordered basis `(e_i, e_j)` into a
/// `d x d` identity.
pub fn embed_block_matrix(block: &Matrix2<C64>, i: usize, j: usize, d: usize) -> CMat {
    let mut m = CMat::identity(d, d);
    m[(i, i)] = block[(0, 0)];
    m[(i, j)] = block[(0, 1)];
    m[(j, i)] = block[(1, 0)];
    m[(j, j)] = block[(1, 1)];
    m
}

/// Converts a dense 2x2 `CMat` into a stack matrix.
pub fn to_matrix2(m: &CMat) -> Matrix2<C64> {
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

/// Serializable complex number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

impl From<C64> for ComplexValue {
    fn from(z: C64) -> Self {
        Self { re: z.re, im: z.im }
    }
}


pub(crate) const CZERO: C64 = ZERO;
pub(crate) const CONE: C64 = ONE;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        stream_rng(seed, 0)
    }

    fn random_matrix(d: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(d, d, |_, _| complex_gaussian(rng))
    }

    fn random_skew(d: usize, scale: f64, rng: &mut ChaCha8Rng) -> SkewHermitian {
        let a = SkewHermitian::project(&random_matrix(d, rng));
        let n = operator_norm(&a);
        SkewHermitian::new(a * C64::new(scale / n, 0.0)).unwrap()
    }

    #[test]
    fn identity_is_neutral() {
        let mut r = rng(1);
        let u = haar_sud(5, &mut r);
        let p = mul(&Unitary::identity(5), &u).unwrap();
        assert!(p.distance(&u) < 1e-15);
    }

    #[test]
    fn product_with_adjoint_is_identity() {
        let mut r = rng(2);
        let u = haar_sud(8, &mut r);
        let p = mul(&u, &u.inverse()).unwrap();
        assert!(p.distance(&Unitary::identity(8)) < 1e-12);
    }

    #[test]
    fn multiplication_is_associative() {
        let mut r = rng(3);
        for _ in 0..10 {
            let a = haar_sud(16, &mut r);
            let b = haar_sud(16, &mut r);
            let c = haar_sud(16, &mut r);
            let left = mul(&mul(&a, &b).unwrap(), &c).unwrap();
            let right = mul(&a, &mul(&b, &c).unwrap()).unwrap();
            assert!(left.distance(&right) < 1e-11);
        }
    }

    #[test]
    fn mul_rejects_dimension_mismatch() {
        let err = mul(&Unitary::identity(2), &Unitary::identity(3)).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { left: 2, right: 3 });
    }

    #[test]
    fn operator_norm_small_cases() {
        assert_eq!(operator_norm(&CMat::zeros(3, 3)), 0.0);
        let m = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(3.0, 0.0),
            c(1.0, 0.0),
            c(-2.0, 0.0),
        ]));
        assert!((operator_norm(&m) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn operator_norm_matches_gram_eigenvalues() {
        let mut r = rng(4);
        let m = random_matrix(5, &mut r);
        // oracle: largest eigenvalue of the Hermitian Gram matrix
        let gram = m.adjoint() * &m;
        let (values, _) = hermitian_eigen(&gram);
        let oracle = values.iter().copied().fold(0.0, f64::max).sqrt();
        assert!((operator_norm(&m) - oracle).abs() < 1e-9 * oracle);
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let e = expm(&SkewHermitian::zeros(4));
        assert!(e.distance(&Unitary::identity(4)) < 1e-15);
    }

    #[test]
    fn expm_diagonal_pi() {
        let pi = std::f64::consts::PI;
        let a = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.0, pi), c(0.0, -pi)]));
        let e = expm(&SkewHermitian::new(a).unwrap());
        let minus = CMat::identity(2, 2) * c(-1.0, 0.0);
        assert!(e.distance_to(&minus) < 1e-14);
    }

    #[test]
    fn expm_inverse_identity() {
        let mut r = rng(5);
        let a = random_skew(6, 2.0, &mut r);
        let p = mul(&expm(&a), &expm(&a.neg())).unwrap();
        assert!(p.distance(&Unitary::identity(6)) < 1e-11);
        assert!((p.det() - CONE).norm() < 1e-12);
    }

    #[test]
    fn expm_rejects_non_skew() {
        let m = CMat::identity(3, 3);
        assert!(matches!(
            SkewHermitian::new(m),
            Err(Error::NotSkewHermitian { .. })
        ));
    }

    #[test]
    fn haar_su2_moments() {
        let mut r = rng(6);
        let n = 1_000_000;
        let mut mean = [CZERO; 4];
        let mut abs11 = 0.0;
        for _ in 0..n {
            let u = haar_su2_block(&mut r);
            for (k, z) in u.iter().enumerate() {
                mean[k] += z;
            }
            abs11 += u[(0, 0)].norm_sqr();
            assert!((u.determinant() - CONE).norm() < 1e-14);
        }
        for z in mean {
            assert!((z / n as f64).norm() < 3e-3);
        }
        assert!((abs11 / n as f64 - 0.5).abs() < 2e-3);
    }

    #[test]
    fn haar_sud_moments() {
        let mut r = rng(7);
        let d = 4;
        let n = 100_000;
        let mut tr = CZERO;
        let mut tr2 = 0.0;
        let mut entries = vec![0.0; d * d];
        for _ in 0..n {
            let u = haar_sud(d, &mut r);
            let t = u.trace();
            tr += t;
            tr2 += t.norm_sqr();
            for (k, z) in u.matrix().iter().enumerate() {
                entries[k] += z.norm_sqr();
            }
        }
        let nf = n as f64;
        assert!((tr / nf).norm() < 1e-2);
        assert!((tr2 / nf - 1.0).abs() < 2e-2);
        for e in entries {
            assert!((e / nf - 1.0 / d as f64).abs() < 1e-2);
        }
    }

    /// Weyl integration on SU(2): the class angle t has density (2/pi) sin^2 t
    /// and |tr|^2 = 4 cos^2 t, so E|tr|^2 = 1. The sampler matches a direct
    /// quadrature of that density.
    #[test]
    fn haar_su2_trace_matches_angle_density() {
        let steps = 20_000;
        let h = std::f64::consts::PI / steps as f64;
        let mut quad = 0.0;
        for k in 0..steps {
            let t = (k as f64 + 0.5) * h;
            quad += 4.0 * t.cos().powi(2) * (2.0 / std::f64::consts::PI) * t.sin().powi(2) * h;
        }
        let mut r = rng(8);
        let n = 200_000;
        let mut mc = 0.0;
        for _ in 0..n {
            mc += haar_sud(2, &mut r).trace().norm_sqr();
        }
        assert!((quad - 1.0).abs() < 1e-6);
        assert!((mc / n as f64 - quad).abs() < 2e-2);
    }

    #[test]
    fn haar_sud_is_special() {
        let mut r = rng(9);
        for d in [2, 3, 5, 9] {
            let u = haar_sud(d, &mut r);
            assert!(u.is_special());
            assert!((u.det() - CONE).norm() < 1e-12);
        }
    }

    #[test]
    fn seeded_streams_are_reproducible() {
        let (mut s1, mut s2) = (stream_rng(11, 3), stream_rng(11, 3));
        let a: Vec<f64> = (0..5).map(|_| rand::Rng::gen(&mut s1)).collect();
        let b: Vec<f64> = (0..5).map(|_| rand::Rng::gen(&mut s2)).collect();
        assert_eq!(a, b);
        let c: Vec<f64> = (0..5).map(|_| rand::Rng::gen(&mut stream_rng(11, 4))).collect();
        assert_ne!(a, c);
        let mut r1 = stream_rng(11, 3);
        let mut r2 = stream_rng(11, 3);
        let x = haar_sud(4, &mut r1);
        let y = haar_sud(4, &mut r2);
        assert_eq!(x.matrix(), y.matrix());
        let mut r3 = stream_rng(11, 4);
        assert_ne!(haar_sud(4, &mut r3).matrix(), x.matrix());
    }

    #[test]
    fn projection_fixed_point() {
        let mut r = rng(10);
        let u = haar_sud(4, &mut r);
        let p = project_unitary(u.matrix()).unwrap();
        assert!(p.distance(&u) < 1e-13);
    }

    #[test]
    fn projection_removes_positive_scaling() {
        let m = CMat::identity(3, 3) * c(1.1, 0.0);
        let p = project_unitary(&m).unwrap();
        assert!(p.distance(&Unitary::identity(3)) < 1e-14);
    }

    #[test]
    fn projection_of_perturbed_unitary() {
        let mut r = rng(12);
        let u = haar_sud(5, &mut r);
        let noise = random_matrix(5, &mut r) * c(1e-6, 0.0);
        let p = project_unitary(&(u.matrix() + noise)).unwrap();
        assert!(p.distance(&u) < 1e-5);
        assert!(p.measured_defect() < 1e-12);
    }

    #[test]
    fn projection_rejects_singular() {
        let mut m = CMat::identity(3, 3);
        m[(2, 2)] = CZERO;
        assert_eq!(project_unitary(&m).unwrap_err(), Error::Singular);
    }

    #[test]
    fn quaternion_distance_is_operator_distance() {
        let mut r = rng(13);
        for _ in 0..100 {
            let p = haar_quaternion(&mut r);
            let q = haar_quaternion(&mut r);
            let dq = (0..4).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>().sqrt();
            let a = su2_from_quaternion(p);
            let b = su2_from_quaternion(q);
            let diff = CMat::from_fn(2, 2, |i, j| a[(i, j)] - b[(i, j)]);
            assert!((operator_norm(&diff) - dq).abs() < 1e-12);
            assert_eq!(quaternion_from_su2(&a), p);
        }
    }

    #[test]
    fn block_application_matches_dense_product() {
        let mut r = rng(14);
        let u = haar_sud(5, &mut r);
        let b = haar_su2_block(&mut r);
        let e = embed_block_matrix(&b, 3, 1, 5);
        let mut left = u.matrix().clone();
        left_apply_block(&mut left, 3, 1, &b);
        assert!(operator_norm(&(left - &e * u.matrix())) < 1e-14);
        let mut right = u.matrix().clone();
        right_apply_block(&mut right, 3, 1, &b);
        assert!(operator_norm(&(right - u.matrix() * &e)) < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn declared_defect_bounds_measured(seed in any::<u64>(), di in 0usize..5) {
            let d = [2, 3, 4, 8, 16][di];
            let mut r = rng(seed);
            let a = haar_sud(d, &mut r);
            let b = haar_sud(d, &mut r);
            prop_assert!(a.measured_defect() <= a.defect());
            let p = mul(&a, &b).unwrap();
            prop_assert!(p.measured_defect() <= p.defect() + 1e-15);
            prop_assert!(p.defect() <= 1e-9 * (1.0 + p.multiplication_count() as f64));
            let x = random_skew(d, 2.0 * std::f64::consts::PI * 0.999, &mut r);
            let e = expm(&x);
            prop_assert!(e.measured_defect() <= e.defect());
            let einv = expm(&x.neg());
            prop_assert!(operator_norm(&(e.matrix().adjoint() - einv.matrix())) < 1e-11);
        }

        #[test]
        fn operator_norm_is_submultiplicative(seed in any::<u64>(), d in 2usize..8) {
            let mut r = rng(seed);
            let a = random_matrix(d, &mut r);
            let b = random_matrix(d, &mut r);
            prop_assert!(operator_norm(&(&a * &b)) <= operator_norm(&a) * operator_norm(&b) + 1e-9);
        }
    }
}
