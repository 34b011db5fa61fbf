//! The generator registry: a certified SU(2) net placed on every cyclic pair,
//! the exact signed transpositions, and refined composite generators.

use std::collections::HashMap;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use super::cells::{quat_distance, quat_inv, quat_mul, quat_normalize, CellGrid, NetIndex, Quat};
use super::word::{Letter, Word};
use crate::error::{Error, Result};
use crate::matcore::{
    haar_quaternion, quaternion_from_su2, stream_rng, su2_from_quaternion, Unitary, C64,
    DEFAULT_REPAIR_CADENCE,
};
use crate::walk::LocalMeasure;

/// Where a generator came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// A single atom of the local measure (or its inverse).
    Atom { atom: usize, exp: i8 },
    /// The `sample`-th Haar draw of the build.
    SampledNet { sample: u64 },
    /// Product of `length` atoms.
    ClosureWord { length: usize },
    SignedTransposition { i: usize },
    /// Refined approximation of a prescribed block.
    Composite { pair: usize, depth: usize, tolerance: f64 },
}

#[derive(Clone, Debug)]
struct NetInfo {
    sample: u64,
    parent: u32,
    letter: u16,
    atom_length: u32,
}

const NO_PARENT: u32 = u32::MAX;

/// A block generator created by refinement, at the cyclic pair `pair`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Composite {
    pub pair: usize,
    pub target: Quat,
    pub value: Quat,
    pub tolerance: f64,
    pub error: f64,
    pub depth: usize,
    /// Letters of the underlying net word.
    pub word_length: u64,
    /// Atoms of the local measure in the fully expanded word.
    pub atom_length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegistrySource {
    Haar { seed: u64, samples: u64 },
    Atoms { n_atoms: usize, closure_length: usize },
}

/// Summary of the cell-coverage certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub spacing: f64,
    pub diameter_bound: f64,
    pub cells: usize,
    pub covered: usize,
    pub complete: bool,
}

/// JSON manifest of a registry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub d: usize,
    pub eps1: f64,
    pub source: RegistrySource,
    pub net_size: usize,
    pub generators: usize,
    pub transpositions: usize,
    pub certificate: Certificate,
    pub composites: Vec<Composite>,
}

/// Options for a Haar-sampled net.
#[derive(Clone, Copy, Debug)]
pub struct HaarNetOptions {
    pub eps1: f64,
    pub seed: u64,
    pub max_samples: u64,
}

impl HaarNetOptions {
    pub fn new(eps1: f64, seed: u64) -> Self {
        Self {
            eps1,
            seed,
            max_samples: 200_000_000,
        }
    }
}

/// Options for a net built from products of atoms.
#[derive(Clone, Copy, Debug)]
pub struct ClosureOptions {
    pub eps1: f64,
    pub closure_length: usize,
    pub max_elements: usize,
}

impl ClosureOptions {
    pub fn new(eps1: f64, closure_length: usize) -> Self {
        Self {
            eps1,
            closure_length,
            max_elements: 4_000_000,
        }
    }
}

/// The collection of generators words are written over.
///
/// Ids `p * B + k` (`B` the net size) are net element `k` placed on the
/// cyclic pair `(p, p + 1 mod d)`; the next `d - 1` ids are the signed
/// transpositions at `(i, i + 1)`; composites follow.
#[derive(Clone, Debug)]
pub struct Registry {
    d: usize,
    eps1: f64,
    grid: CellGrid,
    covered: Vec<bool>,
    n_covered: usize,
    net: NetIndex,
    info: Vec<NetInfo>,
    atoms: Vec<Quat>,
    source: RegistrySource,
    composites: Vec<Composite>,
    repair_cadence: u64,
}

fn index_cell_size(n: usize) -> f64 {
    (2.0 * std::f64::consts::PI.powi(2) / n.max(1) as f64).cbrt().max(1e-3)
}

impl Registry {
    /// Samples Haar steps until every cell of the `eps1` grid holds one.
    /// Each cell keeps the sample closest to its centre.
    pub fn haar(d: usize, opts: HaarNetOptions) -> Result<Self> {
        check_dims(d, opts.eps1)?;
        let grid = CellGrid::new(opts.eps1);
        let mut best: Vec<Option<(f64, Quat, u64)>> = vec![None; grid.len()];
        let centers: Vec<Quat> = (0..grid.len()).map(|c| grid.center(c)).collect();
        let mut n_covered = 0;
        let mut rng = stream_rng(opts.seed, 0);
        let mut samples = 0u64;
        // Keep drawing a little past full coverage so cells settle near centres.
        let mut extra: Option<u64> = None;
        while samples < opts.max_samples {
            let q = haar_quaternion(&mut rng);
            let cell = grid.cell_of(&q);
            let dist = quat_distance(&q, &centers[cell]);
            match &mut best[cell] {
                slot @ None => {
                    *slot = Some((dist, q, samples));
                    n_covered += 1;
                }
                Some(b) if dist < b.0 => *b = (dist, q, samples),
                _ => {}
            }
            samples += 1;
            if n_covered == grid.len() && extra.is_none() {
                extra = Some(samples);
            }
            if let Some(e) = extra {
                if samples >= 2 * e {
                    break;
                }
            }
        }
        if n_covered < grid.len() {
            let cell = best.iter().position(Option::is_none).unwrap_or(0);
            return Err(Error::CoverageMissing { cell, pair: 0 });
        }
        let mut points = Vec::with_capacity(grid.len());
        let mut info = Vec::with_capacity(grid.len());
        for (_, q, s) in best.into_iter().flatten() {
            points.push(q);
            info.push(NetInfo {
                sample: s,
                parent: NO_PARENT,
                letter: 0,
                atom_length: 1,
            });
        }
        let cell_size = index_cell_size(points.len());
        Ok(Self {
            d,
            eps1: opts.eps1,
            covered: vec![true; grid.len()],
            n_covered,
            grid,
            net: NetIndex::new(points, cell_size),
            info,
            atoms: Vec::new(),
            source: RegistrySource::Haar {
                seed: opts.seed,
                samples,
            },
            composites: Vec::new(),
            repair_cadence: DEFAULT_REPAIR_CADENCE,
        })
    }

    /// All reduced products of at most `closure_length` atoms and atom
    /// inverses. The certificate may be incomplete; lookups in uncovered
    /// cells fail.
    pub fn from_atoms(d: usize, eta: &LocalMeasure, opts: ClosureOptions) -> Result<Self> {
        check_dims(d, opts.eps1)?;
        let LocalMeasure::Atoms { atoms, .. } = eta else {
            return Err(Error::InvalidMeasure("closure nets need an atomic measure".into()));
        };
        if opts.closure_length == 0 {
            return Err(Error::Precondition("closure length must be at least 1".into()));
        }
        let atom_q: Vec<Quat> = atoms.iter().map(|a| quaternion_from_su2(&a.block)).collect();
        // Letter set: atoms and inverses, dropping inverses that are atoms.
        let mut letters: Vec<Quat> = atom_q.clone();
        for q in &atom_q {
            let inv = quat_inv(q);
            if !letters.iter().any(|l| quat_distance(l, &inv) < 1e-10) {
                letters.push(inv);
            }
        }
        let inverse_of: Vec<Option<usize>> = letters
            .iter()
            .map(|l| {
                let inv = quat_inv(l);
                letters.iter().position(|m| quat_distance(m, &inv) < 1e-10)
            })
            .collect();

        let mut points: Vec<Quat> = Vec::new();
        let mut info: Vec<NetInfo> = Vec::new();
        let mut seen: HashMap<[i64; 4], ()> = HashMap::new();
        let fingerprint = |q: &Quat| q.map(|x| (x * 1e9).round() as i64);
        let mut push = |q: Quat, parent: u32, letter: usize, len: u32, points: &mut Vec<Quat>, info: &mut Vec<NetInfo>| {
            if seen.insert(fingerprint(&q), ()).is_none() {
                points.push(q);
                info.push(NetInfo {
                    sample: 0,
                    parent,
                    letter: letter as u16,
                    atom_length: len,
                });
                true
            } else {
                false
            }
        };
        let mut frontier: Vec<usize> = Vec::new();
        for (l, q) in letters.iter().enumerate() {
            if push(*q, NO_PARENT, l, 1, &mut points, &mut info) {
                frontier.push(points.len() - 1);
            }
        }
        for len in 2..=opts.closure_length {
            let mut next = Vec::new();
            'grow: for &e in &frontier {
                let last = info[e].letter as usize;
                for (l, q) in letters.iter().enumerate() {
                    if inverse_of[last] == Some(l) {
                        continue;
                    }
                    if points.len() >= opts.max_elements {
                        break 'grow;
                    }
                    let p = quat_normalize(quat_mul(&points[e], q));
                    if push(p, e as u32, l, len as u32, &mut points, &mut info) {
                        next.push(points.len() - 1);
                    }
                }
            }
            frontier = next;
        }

        let grid = CellGrid::new(opts.eps1);
        let mut covered = vec![false; grid.len()];
        for q in &points {
            covered[grid.cell_of(q)] = true;
        }
        let n_covered = covered.iter().filter(|&&c| c).count();
        let cell_size = index_cell_size(points.len());
        Ok(Self {
            d,
            eps1: opts.eps1,
            grid,
            covered,
            n_covered,
            net: NetIndex::new(points, cell_size),
            info,
            atoms: letters,
            source: RegistrySource::Atoms {
                n_atoms: atoms.len(),
                closure_length: opts.closure_length,
            },
            composites: Vec::new(),
            repair_cadence: DEFAULT_REPAIR_CADENCE,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn eps1(&self) -> f64 {
        self.eps1
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn net(&self) -> &NetIndex {
        &self.net
    }

    pub fn net_size(&self) -> usize {
        self.net.len()
    }

    pub fn repair_cadence(&self) -> u64 {
        self.repair_cadence
    }

    pub fn set_repair_cadence(&mut self, cadence: u64) {
        self.repair_cadence = cadence;
    }

    pub fn certificate(&self) -> Certificate {
        Certificate {
            spacing: self.grid.spacing(),
            diameter_bound: self.grid.diameter_bound(),
            cells: self.grid.len(),
            covered: self.n_covered,
            complete: self.n_covered == self.grid.len(),
        }
    }

    /// Radius guaranteed by the certificate for targets in covered cells.
    pub fn certified_radius(&self) -> f64 {
        self.grid.diameter_bound()
    }

    pub fn is_covered(&self, q: &Quat) -> bool {
        self.covered[self.grid.cell_of(q)]
    }

    /// `(i, i + 1 mod d)`.
    pub fn pair(&self, p: usize) -> (usize, usize) {
        (p, (p + 1) % self.d)
    }

    pub fn transposition_id(&self, i: usize) -> u32 {
        assert!(i + 1 < self.d, "transposition index out of range");
        (self.d * self.net.len() + i) as u32
    }

    fn composite_base(&self) -> usize {
        self.d * self.net.len() + (self.d - 1)
    }

    pub fn net_id(&self, pair: usize, k: usize) -> u32 {
        (pair * self.net.len() + k) as u32
    }

    pub fn len(&self) -> usize {
        self.composite_base() + self.composites.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn composites(&self) -> &[Composite] {
        &self.composites
    }

    pub(crate) fn push_composite(&mut self, c: Composite) -> u32 {
        self.composites.push(c);
        (self.len() - 1) as u32
    }

    /// The generator as a block `(i, j, b)` acting on the ordered basis
    /// `(e_i, e_j)`.
    pub fn block(&self, id: u32) -> Result<(usize, usize, Matrix2<C64>)> {
        let id = id as usize;
        let b = self.net.len();
        if id < self.d * b {
            let (i, j) = self.pair(id / b);
            return Ok((i, j, su2_from_quaternion(*self.net.point(id % b))));
        }
        if id < self.composite_base() {
            let i = id - self.d * b;
            return Ok((i, i + 1, signed_transposition_block()));
        }
        match self.composites.get(id - self.composite_base()) {
            Some(c) => {
                let (i, j) = self.pair(c.pair);
                Ok((i, j, su2_from_quaternion(c.value)))
            }
            None => Err(Error::UnknownGenerator(id as u32)),
        }
    }

    pub fn provenance(&self, id: u32) -> Result<Provenance> {
        let id = id as usize;
        let b = self.net.len();
        if id < self.d * b {
            let k = id % b;
            let inf = &self.info[k];
            return Ok(match self.source {
                RegistrySource::Haar { .. } => Provenance::SampledNet { sample: inf.sample },
                RegistrySource::Atoms { n_atoms, .. } => {
                    if inf.atom_length == 1 {
                        let l = inf.letter as usize;
                        if l < n_atoms {
                            Provenance::Atom { atom: l, exp: 1 }
                        } else {
                            Provenance::ClosureWord { length: 1 }
                        }
                    } else {
                        Provenance::ClosureWord {
                            length: inf.atom_length as usize,
                        }
                    }
                }
            });
        }
        if id < self.composite_base() {
            return Ok(Provenance::SignedTransposition { i: id - self.d * b });
        }
        match self.composites.get(id - self.composite_base()) {
            Some(c) => Ok(Provenance::Composite {
                pair: c.pair,
                depth: c.depth,
                tolerance: c.tolerance,
            }),
            None => Err(Error::UnknownGenerator(id as u32)),
        }
    }

    /// Atoms of the local measure consumed by one use of the generator.
    pub fn atom_length(&self, id: u32) -> Result<u64> {
        let idu = id as usize;
        let b = self.net.len();
        if idu < self.d * b {
            return Ok(self.info[idu % b].atom_length as u64);
        }
        if idu < self.composite_base() {
            return Ok(1);
        }
        self.composites
            .get(idu - self.composite_base())
            .map(|c| c.atom_length)
            .ok_or(Error::UnknownGenerator(id))
    }

    /// Net element `k` as a product of atom letters, for closure nets.
    /// Letter indices `>= n_atoms` are inverses of atoms.
    pub fn closure_word(&self, k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = k as u32;
        while cur != NO_PARENT {
            let inf = &self.info[cur as usize];
            out.push(inf.letter as usize);
            cur = inf.parent;
        }
        out.reverse();
        out
    }

    pub fn atom_letters(&self) -> &[Quat] {
        &self.atoms
    }

    /// Sum of [`Registry::atom_length`] over the letters of `w`.
    pub fn word_atom_length(&self, w: &Word) -> Result<u64> {
        w.letters().iter().map(|l| self.atom_length(l.gen)).sum()
    }

    /// Nearest net element to `q`, refusing targets in uncovered cells.
    /// Returns the element index and its distance.
    pub fn lookup(&self, pair: usize, q: &Quat) -> Result<(usize, f64)> {
        let cell = self.grid.cell_of(q);
        if !self.covered[cell] {
            return Err(Error::CoverageMissing { cell, pair });
        }
        self.net
            .nearest(q)
            .ok_or_else(|| Error::Numerical("empty net".into()))
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            d: self.d,
            eps1: self.eps1,
            source: self.source.clone(),
            net_size: self.net.len(),
            generators: self.len(),
            transpositions: self.d - 1,
            certificate: self.certificate(),
            composites: self.composites.clone(),
        }
    }
}

fn check_dims(d: usize, eps1: f64) -> Result<()> {
    if d < 2 {
        return Err(Error::Precondition(format!("dimension {d} must be at least 2")));
    }
    if !(eps1 > 0.0 && eps1 < 1.0) {
        return Err(Error::Precondition(format!("eps1 = {eps1} must lie in (0, 1)")));
    }
    Ok(())
}

/// `[[0, -1], [1, 0]]`: `e_i -> e_j`, `e_j -> -e_i`.
pub fn signed_transposition_block() -> Matrix2<C64> {
    let z = C64::new(0.0, 0.0);
    let o = C64::new(1.0, 0.0);
    Matrix2::new(z, -o, o, z)
}

/// Ordered product of the word's generators.
pub fn eval(word: &Word, reg: &Registry) -> Result<Unitary> {
    let mut u = Unitary::identity(reg.dim());
    for l in word.letters() {
        let (i, j, b) = reg.block(l.gen)?;
        let b = if l.exp < 0 { b.adjoint() } else { b };
        u.right_apply_block(i, j, &b);
        u.repair_if_due(reg.repair_cadence());
    }
    Ok(u)
}

/// Evaluates and stores the value in the word's cache.
pub fn eval_cached(word: &mut Word, reg: &Registry) -> Result<Unitary> {
    let u = eval(word, reg)?;
    word.set_cached(u.clone());
    Ok(u)
}

/// A word made of one letter.
pub fn letter_word(gen: u32, exp: i8) -> Word {
    Word::from_letters(vec![Letter::new(gen, exp)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{haar_sud, mul};
    use crate::walk::LocalMeasure;

    pub(crate) fn small_haar(d: usize) -> Registry {
        Registry::haar(d, HaarNetOptions::new(0.2, 11)).unwrap()
    }

    #[test]
    fn haar_net_is_certified() {
        let reg = small_haar(3);
        let cert = reg.certificate();
        assert!(cert.complete);
        assert_eq!(reg.net_size(), cert.cells);
        let mut rng = stream_rng(5, 0);
        for _ in 0..500 {
            let q = haar_quaternion(&mut rng);
            let (_, dist) = reg.lookup(0, &q).unwrap();
            assert!(dist <= reg.certified_radius());
        }
    }

    #[test]
    fn generators_are_special_unitary() {
        let reg = small_haar(3);
        for id in (0..reg.len() as u32).step_by(97) {
            let (i, j, b) = reg.block(id).unwrap();
            assert!(i < 3 && j < 3 && i != j);
            let m = crate::matcore::embed_block_matrix(&b, i, j, 3);
            let u = Unitary::special_from_matrix(m, 1e-9).unwrap();
            assert!(u.measured_defect() < 1e-9);
        }
        assert!(matches!(reg.block(reg.len() as u32), Err(Error::UnknownGenerator(_))));
    }

    #[test]
    fn eval_examples() {
        let reg = small_haar(4);
        assert_eq!(eval(&Word::empty(), &reg).unwrap().matrix(), &crate::matcore::CMat::identity(4, 4));
        let mut rng = stream_rng(6, 0);
        let n = reg.len() as u32;
        for _ in 0..20 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                use rand::Rng;
                let len = rng.gen_range(1..30);
                Word::from_letters(
                    (0..len)
                        .map(|_| Letter::new(rng.gen_range(0..n), if rng.gen_bool(0.5) { 1 } else { -1 }))
                        .collect(),
                )
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            let ea = eval(&a, &reg).unwrap();
            let eb = eval(&b, &reg).unwrap();
            let eab = eval(&a.concat(&b), &reg).unwrap();
            assert!(eab.distance(&mul(&ea, &eb).unwrap()) < 1e-10);
            let id = eval(&a.concat(&a.inverse()), &reg).unwrap();
            assert!(id.distance(&Unitary::identity(4)) < 1e-10);
        }
        let _ = haar_sud(2, &mut rng);
    }

    #[test]
    fn unknown_generator_is_an_error() {
        let reg = small_haar(2);
        let w = letter_word(reg.len() as u32 + 5, 1);
        assert!(matches!(eval(&w, &reg), Err(Error::UnknownGenerator(_))));
    }

    #[test]
    fn closure_net_words_reproduce_elements() {
        let eta = LocalMeasure::two_axis(1.0);
        let reg = Registry::from_atoms(2, &eta, ClosureOptions::new(0.3, 6)).unwrap();
        let letters = reg.atom_letters().to_vec();
        for k in (0..reg.net_size()).step_by(37) {
            let word = reg.closure_word(k);
            let mut q = [1.0, 0.0, 0.0, 0.0];
            for l in &word {
                q = quat_mul(&q, &letters[*l]);
            }
            assert!(quat_distance(&q, reg.net().point(k)) < 1e-9);
            assert_eq!(word.len() as u64, reg.atom_length(reg.net_id(0, k)).unwrap());
        }
        let m = reg.manifest();
        assert_eq!(m.net_size, reg.net_size());
        assert!(matches!(m.source, RegistrySource::Atoms { closure_length: 6, .. }));
    }

    #[test]
    fn uncovered_cells_are_refused() {
        let eta = LocalMeasure::two_axis(1.0);
        let reg = Registry::from_atoms(2, &eta, ClosureOptions::new(0.05, 2)).unwrap();
        assert!(!reg.certificate().complete);
        let mut rng = stream_rng(7, 0);
        let refused = (0..50)
            .filter(|_| {
                let q = haar_quaternion(&mut rng);
                matches!(reg.lookup(1, &q), Err(Error::CoverageMissing { pair: 1, .. }))
            })
            .count();
        assert!(refused > 40);
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let reg = small_haar(3);
        let m = reg.manifest();
        let s = serde_json::to_string(&m).unwrap();
        let back: Manifest = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
