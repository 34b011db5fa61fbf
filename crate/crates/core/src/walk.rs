//! The local-rotation walk on SU(d).
//!
//! One step picks `i` uniformly in `Z/dZ`, draws a block `g` from the local
//! measure on SU(2) and multiplies the state on the left by `g` acting on the
//! plane `[e_i, e_{i+1}]`. Left multiplication is the only convention used in
//! this crate: after `n` steps the state is `g_n ... g_2 g_1`.
//!
//! The random-environment variant fixes one realization of the step sequence
//! `(i_k, g_k)` (replayable from the config seed) and lets every chain flip an
//! independent fair coin per step to apply `g_k` or its inverse.

use std::io::BufRead;

use nalgebra::Matrix2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{
    embed_block_matrix, haar_su2_block, left_apply_block, project_unitary, stream_rng,
    su2_from_quaternion, unitarity_defect, CMat, Unitary, C64, CONE, CZERO,
    DEFAULT_REPAIR_CADENCE,
};

/// Weighted SU(2) atom.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub block: Matrix2<C64>,
    pub weight: f64,
}

/// The local measure on SU(2): exact Haar or a finite weighted list.
#[derive(Clone, Debug, PartialEq)]
pub enum LocalMeasure {
    Haar,
    Atoms { atoms: Vec<Atom>, symmetric: bool },
}

fn su2_defect(b: &Matrix2<C64>) -> f64 {
    let m = CMat::from_fn(2, 2, |r, c| b[(r, c)]);
    unitarity_defect(&m).max((b.determinant() - CONE).norm())
}

fn block_distance(a: &Matrix2<C64>, b: &Matrix2<C64>) -> f64 {
    crate::matcore::operator_norm(&CMat::from_fn(2, 2, |r, c| a[(r, c)] - b[(r, c)]))
}

/// Rotation angle of the reference dense two-atom measure,
/// `LocalMeasure::two_axis(STANDARD_DENSE_ANGLE)`.
pub const STANDARD_DENSE_ANGLE: f64 = 0.7;

/// Rotation by `angle` about the unit `axis`: `cos(t/2) I - i sin(t/2) n.sigma`.
pub fn axis_rotation(axis: [f64; 3], angle: f64) -> Matrix2<C64> {
    let n = (axis[0].powi(2) + axis[1].powi(2) + axis[2].powi(2)).sqrt();
    let (s, c) = (angle / 2.0).sin_cos();
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    // a = c - i s z, b = -i s x + s y  in the [[a, -conj b], [b, conj a]] form
    su2_from_quaternion([c, -s * z, s * y, -s * x])
}

impl LocalMeasure {
    pub fn haar() -> Self {
        LocalMeasure::Haar
    }

    /// Validates weights (nonnegative, summing to 1 within 1e-12) and atoms
    /// (special unitary within 1e-10). When `symmetric` is declared, checks
    /// closure under inversion with matching weights.
    pub fn atoms(atoms: Vec<Atom>, symmetric: bool) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        if atoms.iter().any(|a| !(a.weight >= 0.0)) {
            return Err(Error::InvalidMeasure("negative weight".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}")));
        }
        for (k, a) in atoms.iter().enumerate() {
            let defect = su2_defect(&a.block);
            if defect >= 1e-10 {
                return Err(Error::InvalidMeasure(format!(
                    "atom {k} is not special unitary (defect {defect:.3e})"
                )));
            }
        }
        let m = LocalMeasure::Atoms { atoms, symmetric };
        if symmetric && !m.is_closed_under_inversion() {
            return Err(Error::InvalidMeasure(
                "declared symmetric but not closed under inversion".into(),
            ));
        }
        Ok(m)
    }

    /// Equal-weight measure on `blocks`.
    pub fn uniform_atoms(blocks: Vec<Matrix2<C64>>, symmetric: bool) -> Result<Self> {
        let w = 1.0 / blocks.len().max(1) as f64;
        Self::atoms(
            blocks
                .into_iter()
                .map(|block| Atom { block, weight: w })
                .collect(),
            symmetric,
        )
    }

    /// Two rotations by `angle` about the x and y axes, equal weights. For
    /// angles that are irrational multiples of pi they generate a dense
    /// subgroup of SU(2).
    pub fn two_axis(angle: f64) -> Self {
        Self::uniform_atoms(
            vec![
                axis_rotation([1.0, 0.0, 0.0], angle),
                axis_rotation([0.0, 1.0, 0.0], angle),
            ],
            false,
        )
        .expect("axis rotations are special unitary")
    }

    /// [`LocalMeasure::two_axis`] together with the inverses.
    pub fn two_axis_symmetric(angle: f64) -> Self {
        Self::uniform_atoms(
            vec![
                axis_rotation([1.0, 0.0, 0.0], angle),
                axis_rotation([1.0, 0.0, 0.0], -angle),
                axis_rotation([0.0, 1.0, 0.0], angle),
                axis_rotation([0.0, 1.0, 0.0], -angle),
            ],
            true,
        )
        .expect("axis rotations are special unitary")
    }

    /// Parses one atom per line: `w re(a) im(a) re(b) im(b)` for the SU(2)
    /// element `[[a, -conj b], [b, conj a]]`. Blank lines and `#` comments are
    /// skipped. Weights are renormalized, with a warning, when their sum is
    /// off by more than 1e-9.
    pub fn parse_atoms<R: BufRead>(reader: R, symmetric: bool) -> Result<(Self, Vec<String>)> {
        let mut atoms = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<f64> = body
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| Error::Parse {
                        line: lineno,
                        message: format!("not a number: {t:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            if fields.len() != 5 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected 5 fields, found {}", fields.len()),
                });
            }
            let q = [fields[1], fields[2], fields[3], fields[4]];
            let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("|a|^2 + |b|^2 = {} is not 1", norm * norm),
                });
            }
            if !(fields[0] >= 0.0) {
                return Err(Error::Parse {
                    line: lineno,
                    message: "weight must be nonnegative".into(),
                });
            }
            atoms.push(Atom {
                block: su2_from_quaternion(q),
                weight: fields[0],
            });
        }
        if atoms.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "no atoms".into(),
            });
        }
        let mut warnings = Vec::new();
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if total <= 0.0 {
            return Err(Error::InvalidMeasure("weights sum to zero".into()));
        }
        if (total - 1.0).abs() > 1e-9 {
            warnings.push(format!("weights sum to {total}; renormalized"));
        }
        for a in atoms.iter_mut() {
            a.weight /= total;
        }
        // exact renormalization may still leave rounding residue
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}")));
        }
        Ok((Self::atoms(atoms, symmetric)?, warnings))
    }

    /// Serializes atoms in the text format read by [`LocalMeasure::parse_atoms`].
    pub fn atoms_to_text(&self) -> Option<String> {
        match self {
            LocalMeasure::Haar => None,
            LocalMeasure::Atoms { atoms, .. } => {
                let mut out = String::new();
                for a in atoms {
                    let q = crate::matcore::quaternion_from_su2(&a.block);
                    out.push_str(&format!(
                        "{:e} {:e} {:e} {:e} {:e}\n",
                        a.weight, q[0], q[1], q[2], q[3]
                    ));
                }
                Some(out)
            }
        }
    }

    pub fn is_haar(&self) -> bool {
        matches!(self, LocalMeasure::Haar)
    }

    /// Declared symmetry flag (Haar is symmetric).
    pub fn declared_symmetric(&self) -> bool {
        match self {
            LocalMeasure::Haar => true,
            LocalMeasure::Atoms { symmetric, .. } => *symmetric,
        }
    }

    /// For every atom `g` there is an atom within 1e-10 of `g^-1` with the
    /// same weight.
    pub fn is_closed_under_inversion(&self) -> bool {
        match self {
            LocalMeasure::Haar => true,
            LocalMeasure::Atoms { atoms, .. } => atoms.iter().all(|a| {
                let inv = a.block.adjoint();
                atoms.iter().any(|b| {
                    block_distance(&b.block, &inv) <= 1e-10 && (a.weight - b.weight).abs() <= 1e-12
                })
            }),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix2<C64> {
        match self {
            LocalMeasure::Haar => haar_su2_block(rng),
            LocalMeasure::Atoms { atoms, .. } => {
                if atoms.len() == 1 {
                    return atoms[0].block;
                }
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.weight;
                    if u < acc {
                        return a.block;
                    }
                }
                atoms[atoms.len() - 1].block
            }
        }
    }

    /// `E[u]` over the measure.
    pub fn mean_block(&self) -> Matrix2<C64> {
        match self {
            LocalMeasure::Haar => Matrix2::zeros(),
            LocalMeasure::Atoms { atoms, .. } => atoms
                .iter()
                .fold(Matrix2::zeros(), |acc, a| acc + a.block * C64::new(a.weight, 0.0)),
        }
    }

    /// `S[x][y][z][w] = E[conj(u_xy) u_zw]`.
    ///
    /// For Haar measure on SU(2) this is `delta_xz delta_yw / 2`.
    pub fn second_moment(&self) -> [[[[C64; 2]; 2]; 2]; 2] {
        let mut s = [[[[CZERO; 2]; 2]; 2]; 2];
        match self {
            LocalMeasure::Haar => {
                for x in 0..2 {
                    for y in 0..2 {
                        s[x][y][x][y] = C64::new(0.5, 0.0);
                    }
                }
            }
            LocalMeasure::Atoms { atoms, .. } => {
                for a in atoms {
                    for x in 0..2 {
                        for y in 0..2 {
                            for z in 0..2 {
                                for w in 0..2 {
                                    s[x][y][z][w] +=
                                        a.block[(x, y)].conj() * a.block[(z, w)] * a.weight;
                                }
                            }
                        }
                    }
                }
            }
        }
        s
    }
}

/// A 2x2 special unitary acting on the ordered basis `(e_i, e_j)`.
///
/// Walk steps use `j = i + 1 mod d`; general pairs appear in word compilation.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedRotation {
    pub i: usize,
    pub j: usize,
    pub block: Matrix2<C64>,
}

impl EmbeddedRotation {
    pub fn new(i: usize, j: usize, block: Matrix2<C64>) -> Result<Self> {
        if i == j {
            return Err(Error::Precondition(format!("rotation indices coincide ({i})")));
        }
        if su2_defect(&block) > 1e-10 {
            return Err(Error::Precondition("rotation block is not special unitary".into()));
        }
        Ok(Self { i, j, block })
    }

    pub fn inverse(&self) -> Self {
        Self {
            i: self.i,
            j: self.j,
            block: self.block.adjoint(),
        }
    }

    /// The block expressed at sorted positions `(min, max)`: equal to `block`
    /// when `i < j`, otherwise conjugated by the basis swap.
    pub fn sorted_block(&self) -> (usize, usize, Matrix2<C64>) {
        if self.i < self.j {
            (self.i, self.j, self.block)
        } else {
            let b = &self.block;
            (self.j, self.i, Matrix2::new(b[(1, 1)], b[(1, 0)], b[(0, 1)], b[(0, 0)]))
        }
    }
}

/// The `d x d` special unitary that equals `rot.block` on `[e_i, e_j]` and
/// fixes every other basis vector.
pub fn embed(rot: &EmbeddedRotation, d: usize) -> Result<Unitary> {
    if rot.i >= d || rot.j >= d {
        return Err(Error::IndexOutOfRange {
            i: rot.i,
            j: rot.j,
            d,
        });
    }
    if rot.i == rot.j {
        return Err(Error::Precondition("rotation indices coincide".into()));
    }
    let m = embed_block_matrix(&rot.block, rot.i, rot.j, d);
    let defect = su2_defect(&rot.block).max(d as f64 * f64::EPSILON);
    Ok(Unitary::from_parts(m, defect, true))
}

/// Which walk to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FixedNu,
    RandomEnvironment,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkConfig {
    pub d: usize,
    pub eta: LocalMeasure,
    pub variant: Variant,
    pub seed: u64,
    pub repair_cadence: u64,
}

impl WalkConfig {
    pub fn new(d: usize, eta: LocalMeasure, variant: Variant, seed: u64) -> Result<Self> {
        if d < 2 {
            return Err(Error::Precondition(format!("dimension must be >= 2, got {d}")));
        }
        Ok(Self {
            d,
            eta,
            variant,
            seed,
            repair_cadence: DEFAULT_REPAIR_CADENCE,
        })
    }

    pub fn haar(d: usize, seed: u64) -> Result<Self> {
        Self::new(d, LocalMeasure::Haar, Variant::FixedNu, seed)
    }
}

/// Draws one step. For the random-environment variant the returned block is
/// `g` or `g^-1` by a fair coin, i.e. a sample of the symmetrized step.
pub fn sample_step<R: Rng + ?Sized>(cfg: &WalkConfig, rng: &mut R) -> EmbeddedRotation {
    let i = rng.gen_range(0..cfg.d);
    let j = (i + 1) % cfg.d;
    let mut block = cfg.eta.sample(rng);
    if cfg.variant == Variant::RandomEnvironment && rng.gen::<bool>() {
        block = block.adjoint();
    }
    EmbeddedRotation { i, j, block }
}

/// One realization of the time-indexed step sequence, generated lazily from
/// a seed so that it is replayable.
#[derive(Clone, Debug)]
pub struct Environment {
    d: usize,
    eta: LocalMeasure,
    rng: ChaCha8Rng,
    steps: Vec<(usize, Matrix2<C64>)>,
}

impl Environment {
    /// Stream id reserved for environment realizations.
    pub const STREAM: u64 = u64::MAX;

    pub fn new(cfg: &WalkConfig) -> Self {
        Self {
            d: cfg.d,
            eta: cfg.eta.clone(),
            rng: stream_rng(cfg.seed, Self::STREAM),
            steps: Vec::new(),
        }
    }

    /// Step `k` (0-based) of the realization.
    pub fn step(&mut self, k: usize) -> (usize, Matrix2<C64>) {
        while self.steps.len() <= k {
            let i = self.rng.gen_range(0..self.d);
            let g = self.eta.sample(&mut self.rng);
            self.steps.push((i, g));
        }
        self.steps[k]
    }
}

/// Single-chain state.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub current: Unitary,
    pub steps_taken: u64,
}

impl ChainState {
    pub fn multiplication_count(&self) -> u64 {
        self.current.multiplication_count()
    }
}

/// Runs one chain for `n_steps` from the identity. For the random-environment
/// variant the realization comes from `cfg.seed` and the coins from `rng`.
pub fn run_chain<R: Rng + ?Sized>(cfg: &WalkConfig, n_steps: u64, rng: &mut R) -> ChainState {
    let mut state = ChainState {
        current: Unitary::identity(cfg.d),
        steps_taken: 0,
    };
    let mut env = match cfg.variant {
        Variant::RandomEnvironment => Some(Environment::new(cfg)),
        Variant::FixedNu => None,
    };
    for k in 0..n_steps {
        let (i, block) = match env.as_mut() {
            Some(env) => {
                let (i, g) = env.step(k as usize);
                (i, if rng.gen::<bool>() { g.adjoint() } else { g })
            }
            None => {
                let i = rng.gen_range(0..cfg.d);
                (i, cfg.eta.sample(rng))
            }
        };
        state.current.left_apply_block(i, (i + 1) % cfg.d, &block);
        state.current.repair_if_due(cfg.repair_cadence);
        state.steps_taken += 1;
    }
    state
}

/// Trace moments of an ensemble at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMoments {
    pub mean_trace_re: f64,
    pub mean_trace_im: f64,
    pub mean_abs_trace_sq: f64,
}

impl TraceMoments {
    pub fn abs_mean_trace(&self) -> f64 {
        self.mean_trace_re.hypot(self.mean_trace_im)
    }

    /// `|E|tr U|^2 - 1|`; zero under Haar measure on SU(d), d >= 2.
    pub fn second_moment_deviation(&self) -> f64 {
        (self.mean_abs_trace_sq - 1.0).abs()
    }
}

/// Neumaier-compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct MomentAccumulator {
    re: CompensatedSum,
    im: CompensatedSum,
    abs2: CompensatedSum,
}

impl MomentAccumulator {
    fn push(&mut self, t: C64) {
        self.re.add(t.re);
        self.im.add(t.im);
        self.abs2.add(t.norm_sqr());
    }

    fn merge(&mut self, o: &MomentAccumulator) {
        self.re.merge(&o.re);
        self.im.merge(&o.im);
        self.abs2.merge(&o.abs2);
    }
}

#[derive(Clone, Debug)]
struct Chain {
    m: CMat,
    rng: ChaCha8Rng,
    since_repair: u64,
}

const CHUNK: usize = 64;

/// Many independent chains advanced in lockstep. Chain `k` owns RNG stream
/// `k`; per-step moments are reduced in chain order, so results do not depend
/// on the thread count.
#[derive(Clone, Debug)]
pub struct Ensemble {
    cfg: WalkConfig,
    chains: Vec<Chain>,
    env: Option<Environment>,
    steps: u64,
}

impl Ensemble {
    pub fn new(cfg: &WalkConfig, n_chains: usize) -> Self {
        let chains = (0..n_chains)
            .map(|k| Chain {
                m: CMat::identity(cfg.d, cfg.d),
                rng: stream_rng(cfg.seed, k as u64),
                since_repair: 0,
            })
            .collect();
        let env = match cfg.variant {
            Variant::RandomEnvironment => Some(Environment::new(cfg)),
            Variant::FixedNu => None,
        };
        Self {
            cfg: cfg.clone(),
            chains,
            env,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = &CMat> {
        self.chains.iter().map(|c| &c.m)
    }

    /// Advances every chain by one step and returns the trace moments.
    pub fn advance(&mut self) -> TraceMoments {
        let d = self.cfg.d;
        let cadence = self.cfg.repair_cadence;
        let shared = self.env.as_mut().map(|e| e.step(self.steps as usize));
        let eta = &self.cfg.eta;
        let partials: Vec<MomentAccumulator> = self
            .chains
            .par_chunks_mut(CHUNK)
            .map(|chunk| {
                let mut acc = MomentAccumulator::default();
                for ch in chunk.iter_mut() {
                    let (i, block) = match shared {
                        Some((i, g)) => (i, if ch.rng.gen::<bool>() { g.adjoint() } else { g }),
                        None => {
                            let i = ch.rng.gen_range(0..d);
                            (i, eta.sample(&mut ch.rng))
                        }
                    };
                    left_apply_block(&mut ch.m, i, (i + 1) % d, &block);
                    ch.since_repair += 1;
                    if cadence > 0 && ch.since_repair >= cadence {
                        if let Ok(p) = project_unitary(&ch.m) {
                            ch.m = p.into_matrix();
                        }
                        ch.since_repair = 0;
                    }
                    acc.push(ch.m.trace());
                }
                acc
            })
            .collect();
        self.steps += 1;
        let mut total = MomentAccumulator::default();
        for p in &partials {
            total.merge(p);
        }
        let n = self.chains.len().max(1) as f64;
        TraceMoments {
            mean_trace_re: total.re.value() / n,
            mean_trace_im: total.im.value() / n,
            mean_abs_trace_sq: total.abs2.value() / n,
        }
    }
}

/// Moment deviations of `ell`-fold products of samples from a local measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionReport {
    pub ell: usize,
    pub samples: usize,
    pub abs_mean_trace: f64,
    pub second_moment_deviation: f64,
    pub max_entry_mean: f64,
    /// Standard error scale `1/sqrt(samples)` of the reported means.
    pub noise_floor: f64,
}

/// Samples `ell`-fold products `u_ell ... u_1` of independent draws from `eta`
/// and reports how far their trace and entry moments are from Haar values.
pub fn convolution_power_check<R: Rng + ?Sized>(
    eta: &LocalMeasure,
    ell: usize,
    samples: usize,
    rng: &mut R,
) -> Result<ConvolutionReport> {
    if ell < 1 {
        return Err(Error::Precondition("convolution power must be >= 1".into()));
    }
    if samples == 0 {
        return Err(Error::Precondition("need at least one sample".into()));
    }
    let mut acc = MomentAccumulator::default();
    let mut entries = [CZERO; 4];
    for _ in 0..samples {
        let mut u = Matrix2::<C64>::identity();
        for _ in 0..ell {
            u = eta.sample(rng) * u;
        }
        acc.push(u.trace());
        for (k, z) in u.iter().enumerate() {
            entries[k] += z;
        }
    }
    let n = samples as f64;
    let mean_tr = C64::new(acc.re.value() / n, acc.im.value() / n);
    Ok(ConvolutionReport {
        ell,
        samples,
        abs_mean_trace: mean_tr.norm(),
        second_moment_deviation: (acc.abs2.value() / n - 1.0).abs(),
        max_entry_mean: entries.iter().map(|z| (z / n).norm()).fold(0.0, f64::max),
        noise_floor: 1.0 / n.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{haar_sud, mul, operator_norm};

    fn rng(seed: u64) -> ChaCha8Rng {
        stream_rng(seed, 0)
    }

    #[test]
    fn embed_identity_block() {
        let rot = EmbeddedRotation::new(1, 3, Matrix2::identity()).unwrap();
        let e = embed(&rot, 5).unwrap();
        assert!(e.distance(&Unitary::identity(5)) < 1e-15);
    }

    #[test]
    fn embed_quarter_turn() {
        let block = Matrix2::new(CZERO, -CONE, CONE, CZERO);
        let e = embed(&EmbeddedRotation::new(0, 1, block).unwrap(), 3).unwrap();
        let m = e.matrix();
        // columns are images of basis vectors
        assert_eq!(m.column(0).iter().copied().collect::<Vec<_>>(), vec![CZERO, CONE, CZERO]);
        assert_eq!(m.column(1).iter().copied().collect::<Vec<_>>(), vec![-CONE, CZERO, CZERO]);
        assert_eq!(m.column(2).iter().copied().collect::<Vec<_>>(), vec![CZERO, CZERO, CONE]);
    }

    #[test]
    fn embed_random_block_is_special_unitary() {
        let mut r = rng(1);
        let rot = EmbeddedRotation::new(2, 5, haar_su2_block(&mut r)).unwrap();
        let e = embed(&rot, 7).unwrap();
        let p = mul(&e, &e.inverse()).unwrap();
        assert!(p.distance(&Unitary::identity(7)) < 1e-13);
        assert!((e.det() - CONE).norm() < 1e-12);
    }

    #[test]
    fn embed_rejects_out_of_range() {
        let rot = EmbeddedRotation::new(2, 5, Matrix2::identity()).unwrap();
        assert_eq!(
            embed(&rot, 4).unwrap_err(),
            Error::IndexOutOfRange { i: 2, j: 5, d: 4 }
        );
    }

    #[test]
    fn embed_is_block_homomorphism() {
        let mut r = rng(2);
        for (i, j) in [(0, 1), (3, 1), (4, 0)] {
            let a = haar_su2_block(&mut r);
            let b = haar_su2_block(&mut r);
            let ab = embed(&EmbeddedRotation::new(i, j, a * b).unwrap(), 5).unwrap();
            let ea = embed(&EmbeddedRotation::new(i, j, a).unwrap(), 5).unwrap();
            let eb = embed(&EmbeddedRotation::new(i, j, b).unwrap(), 5).unwrap();
            assert!(ab.distance(&mul(&ea, &eb).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn sorted_block_describes_same_matrix() {
        let mut r = rng(3);
        let rot = EmbeddedRotation::new(4, 1, haar_su2_block(&mut r)).unwrap();
        let (a, b, blk) = rot.sorted_block();
        assert_eq!((a, b), (1, 4));
        let e1 = embed(&rot, 6).unwrap();
        let e2 = embed(&EmbeddedRotation::new(a, b, blk).unwrap(), 6).unwrap();
        assert!(e1.distance(&e2) < 1e-15);
    }

    #[test]
    fn index_frequencies_are_uniform() {
        let cfg = WalkConfig::haar(10, 0).unwrap();
        let mut r = rng(4);
        let n = 1_000_000;
        let mut counts = [0u64; 10];
        for _ in 0..n {
            let s = sample_step(&cfg, &mut r);
            assert_eq!(s.j, (s.i + 1) % 10);
            counts[s.i] += 1;
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square with 9 dof: 0.001 and 0.999 quantiles
        assert!(chi2 > 1.152 && chi2 < 27.877, "chi2 = {chi2}");
    }

    #[test]
    fn single_atom_measure_is_deterministic() {
        let g0 = axis_rotation([0.3, 0.1, 0.9], 0.7);
        let eta = LocalMeasure::uniform_atoms(vec![g0], false).unwrap();
        let cfg = WalkConfig::new(4, eta, Variant::FixedNu, 0).unwrap();
        let mut r = rng(5);
        for _ in 0..100 {
            assert_eq!(sample_step(&cfg, &mut r).block, g0);
        }
    }

    #[test]
    fn zero_steps_is_identity() {
        let cfg = WalkConfig::haar(5, 1).unwrap();
        let s = run_chain(&cfg, 0, &mut rng(6));
        assert_eq!(s.current.matrix(), Unitary::identity(5).matrix());
    }

    #[test]
    fn one_step_at_d2_is_haar() {
        let cfg = WalkConfig::haar(2, 1).unwrap();
        let mut r = rng(7);
        let n = 100_000;
        let mut tr2 = 0.0;
        for _ in 0..n {
            tr2 += run_chain(&cfg, 1, &mut r).current.trace().norm_sqr();
        }
        assert!((tr2 / n as f64 - 1.0).abs() < 2e-2);
    }

    #[test]
    fn long_chain_stays_unitary() {
        let cfg = WalkConfig::haar(16, 2).unwrap();
        let s = run_chain(&cfg, 100_000, &mut rng(8));
        assert!(s.current.measured_defect() < 1e-8);
        assert!((s.current.det() - CONE).norm() < 1e-8);
        assert_eq!(s.steps_taken, 100_000);
    }

    #[test]
    fn chain_uses_left_multiplication() {
        // replaying the same stream by hand must give g2 g1
        let cfg = WalkConfig::haar(4, 3).unwrap();
        let mut r1 = rng(9);
        let s = run_chain(&cfg, 2, &mut r1);
        let mut r2 = rng(9);
        let i1 = r2.gen_range(0..4);
        let g1 = cfg.eta.sample(&mut r2);
        let i2 = r2.gen_range(0..4);
        let g2 = cfg.eta.sample(&mut r2);
        let e1 = embed_block_matrix(&g1, i1, (i1 + 1) % 4, 4);
        let e2 = embed_block_matrix(&g2, i2, (i2 + 1) % 4, 4);
        assert!(s.current.distance_to(&(e2 * e1)) < 1e-14);
    }

    #[test]
    fn symmetric_measure_gives_symmetric_steps() {
        let cfg = WalkConfig::new(3, LocalMeasure::two_axis_symmetric(0.9), Variant::FixedNu, 0)
            .unwrap();
        let mut r = rng(10);
        let n = 100_000;
        let (mut s1, mut s2, mut q) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let step = sample_step(&cfg, &mut r);
            let g = embed(&step, 3).unwrap();
            let t = g.trace();
            let ti = g.inverse().trace();
            s1 += t.im;
            s2 += ti.im;
            q += t.im * t.im;
        }
        let sigma = (q / n as f64).sqrt() / (n as f64).sqrt();
        assert!(((s1 - s2) / n as f64).abs() <= 3.0 * sigma * 2f64.sqrt());
    }

    #[test]
    fn left_translation_consistency() {
        // law of U x equals the law of U translated by fixed x: compare E Re tr(U x)
        // with tr(E[U] x) where E[U] = ((d-2)/d)^n I for Haar steps
        let d = 4;
        let cfg = WalkConfig::haar(d, 0).unwrap();
        let mut r = rng(11);
        let x = haar_sud(d, &mut r);
        let n = 40_000;
        let steps = 3;
        let mut acc = CZERO;
        for _ in 0..n {
            let u = run_chain(&cfg, steps, &mut r).current;
            acc += (u.matrix() * x.matrix()).trace();
        }
        let expected = x.trace() * ((d as f64 - 2.0) / d as f64).powi(steps as i32);
        assert!((acc / n as f64 - expected).norm() < 0.05);
    }

    #[test]
    fn ball_mass_scales_like_fourth_power() {
        let cfg = WalkConfig::haar(6, 0).unwrap();
        let mut r = rng(12);
        let n = 1_000_000;
        for eps in [0.3, 0.5] {
            let mut hits = 0usize;
            for _ in 0..n {
                let s = sample_step(&cfg, &mut r);
                let diff = s.block - Matrix2::identity();
                let m = CMat::from_fn(2, 2, |a, b| diff[(a, b)]);
                if operator_norm(&m) <= eps {
                    hits += 1;
                }
            }
            let ratio = hits as f64 / n as f64 / eps.powi(4);
            assert!((0.01..=100.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn measure_validation() {
        let g = axis_rotation([1.0, 0.0, 0.0], 0.4);
        assert!(LocalMeasure::atoms(vec![Atom { block: g, weight: 0.5 }], false).is_err());
        assert!(LocalMeasure::atoms(vec![Atom { block: g, weight: 1.0 }], true).is_err());
        let bad = g * C64::new(1.1, 0.0);
        assert!(LocalMeasure::atoms(vec![Atom { block: bad, weight: 1.0 }], false).is_err());
        assert!(LocalMeasure::two_axis_symmetric(0.4).is_closed_under_inversion());
        assert!(!LocalMeasure::two_axis(0.4).is_closed_under_inversion());
    }

    #[test]
    fn atom_file_round_trip_and_renormalization() {
        let eta = LocalMeasure::two_axis_symmetric(1.0);
        let text = eta.atoms_to_text().unwrap();
        let (back, warnings) = LocalMeasure::parse_atoms(text.as_bytes(), true).unwrap();
        assert!(warnings.is_empty());
        assert!(back.is_closed_under_inversion());
        let (m, warnings) =
            LocalMeasure::parse_atoms("2 1 0 0 0\n# comment\n\n2 0 1 0 0\n".as_bytes(), false)
                .unwrap();
        assert_eq!(warnings.len(), 1);
        match m {
            LocalMeasure::Atoms { atoms, .. } => assert_eq!(atoms[0].weight, 0.5),
            _ => unreachable!(),
        }
    }

    #[test]
    fn atom_file_errors_name_the_line() {
        let err = LocalMeasure::parse_atoms("1 1 0 0 0\n1 0.5 0 0\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = LocalMeasure::parse_atoms("1 1 0 0 x\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = LocalMeasure::parse_atoms("1 0.5 0 0 0\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn convolution_of_identity_does_not_mix() {
        let eta = LocalMeasure::uniform_atoms(vec![Matrix2::identity()], true).unwrap();
        let rep = convolution_power_check(&eta, 1, 100, &mut rng(13)).unwrap();
        assert!((rep.abs_mean_trace - 2.0).abs() < 1e-15);
        assert!(convolution_power_check(&eta, 0, 100, &mut rng(13)).is_err());
    }

    #[test]
    fn convolution_of_dense_pair_mixes() {
        let rep =
            convolution_power_check(&LocalMeasure::two_axis(1.0), 200, 100_000, &mut rng(14))
                .unwrap();
        assert!(rep.abs_mean_trace < 0.05, "{rep:?}");
    }

    #[test]
    fn convolution_of_haar_is_at_noise_floor() {
        let rep = convolution_power_check(&LocalMeasure::Haar, 1, 100_000, &mut rng(15)).unwrap();
        assert!(rep.abs_mean_trace < 4.0 * rep.noise_floor);
        assert!(rep.second_moment_deviation < 6.0 * rep.noise_floor);
        assert!(rep.max_entry_mean < 4.0 * rep.noise_floor);
    }

    #[test]
    fn ensemble_is_independent_of_thread_count() {
        let cfg = WalkConfig::haar(5, 42).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut e = Ensemble::new(&cfg, 500);
                (0..20).map(|_| e.advance()).collect::<Vec<_>>()
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn ensemble_matches_single_chain_streams() {
        let cfg = WalkConfig::haar(4, 9).unwrap();
        let mut e = Ensemble::new(&cfg, 3);
        for _ in 0..7 {
            e.advance();
        }
        for (k, m) in e.states().enumerate() {
            let s = run_chain(&cfg, 7, &mut stream_rng(9, k as u64));
            assert!(s.current.distance_to(m) < 1e-14);
        }
    }

    #[test]
    fn random_environment_is_replayable() {
        let cfg =
            WalkConfig::new(4, LocalMeasure::Haar, Variant::RandomEnvironment, 77).unwrap();
        let mut e = Ensemble::new(&cfg, 2);
        for _ in 0..5 {
            e.advance();
        }
        for (k, m) in e.states().enumerate() {
            let s = run_chain(&cfg, 5, &mut stream_rng(77, k as u64));
            assert!(s.current.distance_to(m) < 1e-14);
        }
    }
}
