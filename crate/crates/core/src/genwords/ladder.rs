//! Signed transpositions, ladders of adjacent ones, and realization of a
//! block at an arbitrary pair `(i, j)` by conjugating an adjacent block.

use nalgebra::Matrix2;

use super::registry::{eval, signed_transposition_block, Registry};
use super::word::{Letter, Word};
use crate::error::{Error, Result};
use crate::matcore::C64;
use crate::walk::EmbeddedRotation;

/// `e_i -> e_j`, `e_j -> -e_i`, identity elsewhere. Determinant 1.
pub fn signed_transposition(i: usize, j: usize, d: usize) -> Result<EmbeddedRotation> {
    if i >= d || j >= d {
        return Err(Error::IndexOutOfRange { i, j, d });
    }
    EmbeddedRotation::new(i, j, signed_transposition_block())
}

/// Indices `k` of the adjacent transpositions `s_k = (k, k+1)` in the ladder
/// `s_{j-1} ... s_{i+1} s_i s_{i+1} ... s_{j-1}`.
pub fn ladder_indices(i: usize, j: usize) -> Result<Vec<usize>> {
    if i >= j {
        return Err(Error::Precondition(format!("ladder needs i < j, got ({i}, {j})")));
    }
    let mut out: Vec<usize> = (i + 1..j).rev().collect();
    out.push(i);
    out.extend(i + 1..j);
    Ok(out)
}

/// Word of adjacent signed transpositions whose absolute value is the
/// permutation matrix swapping `i` and `j`. Length `2 (j - i) - 1`.
pub fn transposition_ladder(i: usize, j: usize, reg: &Registry) -> Result<Word> {
    if j >= reg.dim() {
        return Err(Error::IndexOutOfRange { i, j, d: reg.dim() });
    }
    let idx = ladder_indices(i, j)?;
    Ok(Word::from_letters(
        idx.into_iter().map(|k| Letter::new(reg.transposition_id(k), 1)).collect(),
    ))
}

/// A realization of a block at `(i, j)`.
#[derive(Clone, Debug)]
pub struct GammaWord {
    pub word: Word,
    /// Sound bound on `|| gamma_ij - eval(word) ||_op`.
    pub bound: f64,
    pub ladder_length: usize,
    /// `(2 * ladder_length + 1) * eps1`, the per-letter accounting budget.
    pub letter_budget: f64,
}

/// Float slack added to bounds built from computed distances.
pub(crate) const BOUND_SLACK: f64 = 1e-12;

/// Word approximating `gamma` embedded at `(i, j)`, `i < j`.
///
/// The block is approximated at the adjacent pair `(i, i + 1)` (net lookup,
/// or a refined composite when `tol` is given) and moved to `(i, j)` by the
/// ladder for `(i + 1, j)`. The ladder is exact; the sign it introduces is
/// compensated by conjugating the block with `diag(1, s)`.
pub fn approx_gamma_ij(
    gamma: &Matrix2<C64>,
    i: usize,
    j: usize,
    reg: &mut Registry,
    tol: Option<f64>,
) -> Result<GammaWord> {
    let d = reg.dim();
    if i >= j {
        return Err(Error::Precondition(format!("need i < j, got ({i}, {j})")));
    }
    if j >= d {
        return Err(Error::IndexOutOfRange { i, j, d });
    }
    let (ladder, sign) = if j == i + 1 {
        (Word::empty(), 1.0)
    } else {
        let l = transposition_ladder(i + 1, j, reg)?;
        let value = eval(&l, reg)?;
        // l e_{i+1} = s e_j
        (l, value.matrix()[(j, i + 1)].re)
    };
    let s = C64::new(sign, 0.0);
    let inner_target = Matrix2::new(gamma[(0, 0)], gamma[(0, 1)] * s, gamma[(1, 0)] * s, gamma[(1, 1)]);
    let inner = reg.block_word(i, &inner_target, tol)?;
    let mut word = ladder.clone();
    word.append(&inner.word);
    word.append(&ladder.inverse());
    Ok(GammaWord {
        word,
        bound: inner.error + BOUND_SLACK,
        ladder_length: ladder.len(),
        letter_budget: (2 * ladder.len() + 1) as f64 * reg.eps1(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genwords::registry::HaarNetOptions;
    use crate::matcore::{embed_block_matrix, haar_su2_block, operator_norm, stream_rng, CMat};
    use crate::walk::embed;

    fn reg(d: usize) -> Registry {
        Registry::haar(d, HaarNetOptions::new(0.08, 21)).unwrap()
    }

    fn perm_swap(i: usize, j: usize, d: usize) -> CMat {
        let mut p = CMat::identity(d, d);
        p[(i, i)] = C64::new(0.0, 0.0);
        p[(j, j)] = C64::new(0.0, 0.0);
        p[(i, j)] = C64::new(1.0, 0.0);
        p[(j, i)] = C64::new(1.0, 0.0);
        p
    }

    fn abs_pattern(m: &CMat) -> CMat {
        m.map(|z| C64::new(z.norm(), 0.0))
    }

    #[test]
    fn signed_transposition_d2() {
        let r = signed_transposition(0, 1, 2).unwrap();
        let m = embed(&r, 2).unwrap();
        let want = CMat::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(-1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        assert_eq!(m.matrix(), &want);
        assert!((m.det() - C64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn signed_transposition_squares_to_minus_identity_block() {
        let r = signed_transposition(1, 3, 5).unwrap();
        let m = embed(&r, 5).unwrap();
        let sq = m.matrix() * m.matrix();
        let minus = Matrix2::new(C64::new(-1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-1.0, 0.0));
        assert_eq!(sq, embed_block_matrix(&minus, 1, 3, 5));
        assert!(operator_norm(&(sq - CMat::identity(5, 5))) > 1.0);
    }

    #[test]
    fn conjugation_moves_block_up_to_signs() {
        let d = 4;
        let mut rng = stream_rng(1, 0);
        let g = haar_su2_block(&mut rng);
        let s = embed(&signed_transposition(1, 3, d).unwrap(), d).unwrap();
        let conj = s.matrix() * embed_block_matrix(&g, 0, 1, d) * s.matrix().adjoint();
        // equal to diag(1, s) g diag(1, s) at (0, 3) for a sign s
        let hits = [1.0, -1.0]
            .iter()
            .filter(|&&s| {
                let s = C64::new(s, 0.0);
                let moved = Matrix2::new(g[(0, 0)], g[(0, 1)] * s, g[(1, 0)] * s, g[(1, 1)]);
                operator_norm(&(&conj - embed_block_matrix(&moved, 0, 3, d))) < 1e-14
            })
            .count();
        assert_eq!(hits, 1);
    }

    #[test]
    fn ladder_lengths_and_patterns() {
        let r = reg(8);
        assert_eq!(transposition_ladder(2, 3, &r).unwrap().len(), 1);
        let w = transposition_ladder(1, 3, &r).unwrap();
        assert_eq!(ladder_indices(1, 3).unwrap(), vec![2, 1, 2]);
        assert_eq!(w.len(), 3);
        let v = eval(&w, &r).unwrap();
        assert_eq!(abs_pattern(v.matrix()), perm_swap(1, 3, 8));
        let w = transposition_ladder(0, 7, &r).unwrap();
        assert_eq!(w.len(), 13);
        let v = eval(&w, &r).unwrap();
        assert_eq!(abs_pattern(v.matrix()), perm_swap(0, 7, 8));
        assert!(transposition_ladder(3, 3, &r).is_err());
        assert!(transposition_ladder(4, 2, &r).is_err());
    }

    #[test]
    fn ladder_length_formula() {
        for i in 0..6 {
            for j in i + 1..7 {
                let n = ladder_indices(i, j).unwrap().len();
                assert_eq!(n, 2 * (j - i) - 1);
                assert!(n <= 2 * 7);
            }
        }
    }

    #[test]
    fn gamma_identity_and_adjacent() {
        let mut r = reg(4);
        let g = approx_gamma_ij(&Matrix2::identity(), 1, 2, &mut r, None).unwrap();
        let e = eval(&g.word, &r).unwrap();
        assert!(operator_norm(&(e.matrix() - CMat::identity(4, 4))) < r.eps1());
        let mut rng = stream_rng(2, 0);
        for _ in 0..20 {
            let gamma = haar_su2_block(&mut rng);
            let gw = approx_gamma_ij(&gamma, 0, 1, &mut r, None).unwrap();
            assert!(gw.word.len() <= 1);
            let err = operator_norm(&(eval(&gw.word, &r).unwrap().matrix() - embed_block_matrix(&gamma, 0, 1, 4)));
            assert!(err <= gw.bound);
            assert!(err < r.eps1(), "{err}");
        }
    }

    #[test]
    fn gamma_nonadjacent_rotation_example() {
        let mut r = Registry::haar(4, HaarNetOptions::new(0.05, 21)).unwrap();
        let gamma = signed_transposition_block();
        let gw = approx_gamma_ij(&gamma, 0, 2, &mut r, None).unwrap();
        let err = operator_norm(&(eval(&gw.word, &r).unwrap().matrix() - embed_block_matrix(&gamma, 0, 2, 4)));
        assert!(err < 0.35);
        assert!(err <= gw.bound && gw.bound <= gw.letter_budget);
    }

    #[test]
    fn gamma_bounds_are_sound() {
        let mut rng = stream_rng(3, 0);
        for d in [3, 4, 6] {
            let mut r = reg(d);
            for _ in 0..100 {
                use rand::Rng;
                let i = rng.gen_range(0..d - 1);
                let j = rng.gen_range(i + 1..d);
                let gamma = haar_su2_block(&mut rng);
                let gw = approx_gamma_ij(&gamma, i, j, &mut r, None).unwrap();
                let err = operator_norm(&(eval(&gw.word, &r).unwrap().matrix() - embed_block_matrix(&gamma, i, j, d)));
                assert!(err <= gw.bound, "d={d} ({i},{j}) {err} > {}", gw.bound);
                assert!(gw.word.len() <= 2 * gw.ladder_length + 1);
            }
        }
    }

    #[test]
    fn gamma_with_tolerance_uses_composites() {
        let mut r = reg(5);
        let mut rng = stream_rng(4, 0);
        let gamma = haar_su2_block(&mut rng);
        let gw = approx_gamma_ij(&gamma, 1, 4, &mut r, Some(1e-7)).unwrap();
        let err = operator_norm(&(eval(&gw.word, &r).unwrap().matrix() - embed_block_matrix(&gamma, 1, 4, 5)));
        assert!(err <= 1e-7 + 1e-12 && err <= gw.bound);
    }
}
