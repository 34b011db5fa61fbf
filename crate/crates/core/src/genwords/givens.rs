//! Exact two-level factorization used to cross-check compiled words.

use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::matcore::{embed_block_matrix, CMat, Unitary, C64};
use crate::walk::EmbeddedRotation;

/// Factors a special unitary as `R_1 R_2 ... R_m` with each `R_k` a two-level
/// special unitary on adjacent coordinates.
///
/// Column by column, entries below the diagonal are zeroed bottom-up by
/// rotations of rows `(r - 1, r)`; the leftover diagonal is written as
/// rotations `diag(e^{ia}, e^{-ia})` at `(k, k + 1)`. Consecutive factors
/// on the same pair are merged and identity factors dropped.
pub fn givens_oracle(target: &Unitary) -> Result<Vec<EmbeddedRotation>> {
    if !target.is_special() {
        return Err(Error::Precondition("givens_oracle needs a special unitary".into()));
    }
    let d = target.dim();
    let mut u = target.matrix().clone();
    // left factors applied to u, in order
    let mut applied: Vec<(usize, Matrix2<C64>)> = Vec::new();
    for c in 0..d.saturating_sub(1) {
        for r in (c + 1..d).rev() {
            let (x, y) = (u[(r - 1, c)], u[(r, c)]);
            if y.norm() == 0.0 {
                continue;
            }
            let n = (x.norm_sqr() + y.norm_sqr()).sqrt();
            let g = Matrix2::new(x.conj() / n, y.conj() / n, -y / n, x / n);
            crate::matcore::left_apply_block(&mut u, r - 1, r, &g);
            u[(r, c)] = C64::new(0.0, 0.0);
            applied.push((r - 1, g));
        }
    }
    // u is now diagonal with unit-modulus entries and determinant 1.
    let mut factors: Vec<(usize, Matrix2<C64>)> =
        applied.into_iter().map(|(k, g)| (k, g.adjoint())).collect();
    let mut partial = 0.0;
    // the last entry is e^{-i partial} because the phases sum to 0 mod 2 pi
    for k in 0..d.saturating_sub(1) {
        partial += u[(k, k)].arg();
        let z = C64::from_polar(1.0, partial);
        factors.push((k, Matrix2::new(z, C64::new(0.0, 0.0), C64::new(0.0, 0.0), z.conj())));
    }
    let mut merged: Vec<(usize, Matrix2<C64>)> = Vec::new();
    for (k, b) in factors {
        match merged.last_mut() {
            Some((k0, b0)) if *k0 == k => *b0 *= b,
            _ => merged.push((k, b)),
        }
    }
    merged
        .into_iter()
        .filter(|(_, b)| (b - Matrix2::identity()).norm() > 1e-14)
        .map(|(k, b)| EmbeddedRotation::new(k, k + 1, b))
        .collect()
}

/// `R_1 R_2 ... R_m`.
pub fn product(rotations: &[EmbeddedRotation], d: usize) -> CMat {
    let mut m = CMat::identity(d, d);
    for r in rotations {
        m *= embed_block_matrix(&r.block, r.i, r.j, d);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{haar_su2_block, haar_sud, operator_norm, stream_rng};

    #[test]
    fn diagonal_target_has_no_mixing() {
        let z = |a: f64| C64::from_polar(1.0, a);
        let m = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![z(0.3), z(-1.1), z(0.8)]));
        let u = Unitary::special_from_matrix(m.clone(), 1e-12).unwrap();
        let f = givens_oracle(&u).unwrap();
        assert!(!f.is_empty());
        for r in &f {
            assert!(r.block[(0, 1)].norm() < 1e-14 && r.block[(1, 0)].norm() < 1e-14);
        }
        assert!(operator_norm(&(product(&f, 3) - m)) < 1e-12);
    }

    #[test]
    fn two_level_target_gives_one_factor() {
        let mut rng = stream_rng(1, 0);
        let g = haar_su2_block(&mut rng);
        let m = embed_block_matrix(&g, 0, 1, 5);
        let u = Unitary::special_from_matrix(m.clone(), 1e-12).unwrap();
        let f = givens_oracle(&u).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!((f[0].i, f[0].j), (0, 1));
        assert!(operator_norm(&(product(&f, 5) - m)) < 1e-12);
    }

    #[test]
    fn haar_targets_reconstruct() {
        let mut rng = stream_rng(2, 0);
        for d in [2, 3, 6, 9] {
            for _ in 0..10 {
                let u = haar_sud(d, &mut rng);
                let f = givens_oracle(&u).unwrap();
                assert!(f.len() <= d * (d - 1) / 2 + d - 1);
                assert!(operator_norm(&(product(&f, d) - u.matrix())) < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_non_special() {
        let m = CMat::identity(3, 3) * C64::from_polar(1.0, 0.4);
        let u = Unitary::from_matrix(m, 1e-12).unwrap();
        assert!(givens_oracle(&u).is_err());
    }
}
