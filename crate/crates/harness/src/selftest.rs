//! Executable catalogue of the documented examples, grouped by module.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use liewalk::genwords::{
    calibrate_c_sk, compile, eval, exp_splitting_word, first_order_word, givens_oracle,
    predicted_errors, sk_refine, transposition_ladder, approx_gamma_ij, ClosureOptions,
    CompileOptions, FirstOrderOptions, HaarNetOptions, Letter, NetBase, Registry, SkStats, Word,
};
use liewalk::matcore::{
    embed_block_matrix, expm, haar_su2, haar_su2_block, haar_sud, hermitian_eigen, mul,
    operator_norm, project_unitary, stream_rng, su2_from_quaternion, CMat, SkewHermitian,
    Unitary, C64,
};
use liewalk::spectra::{
    contraction_estimate, degree1_transfer, degree2_matrix, degree2_transfer, fit_power_law,
    iterate_decay, mixing_time, vec_identity, TestFunction, D_GAP_BRACKET,
};
use liewalk::walk::{
    convolution_power_check, embed, run_chain, sample_step, Atom, EmbeddedRotation, LocalMeasure,
    WalkConfig, STANDARD_DENSE_ANGLE,
};
use nalgebra::Matrix2;
use rand::Rng;

use crate::commands::{cmd_compile, cmd_spectra, cmd_sweep, cmd_walk};
use crate::config::RunConfig;
use crate::error::HarnessError;
use crate::output::format_matrix;

type Outcome = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Deliberate defects used to check that the suite notices them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Faults {
    /// Flip the sign of the upper-right block entry in `embed`.
    pub embed_sign: bool,
}

impl Faults {
    pub fn parse(name: &str) -> Result<Self, HarnessError> {
        match name {
            "embed-sign" => Ok(Self { embed_sign: true }),
            _ => Err(HarnessError::Usage(format!("unknown fault {name:?}; known: embed-sign"))),
        }
    }
}

pub struct Ctx {
    pub faults: Faults,
    tmp: PathBuf,
    reg4: OnceLock<Registry>,
    closure: OnceLock<Registry>,
}

impl Ctx {
    pub fn new(faults: Faults) -> Self {
        let tmp = std::env::temp_dir().join(format!("liewalk-selftest-{}", std::process::id()));
        Self {
            faults,
            tmp,
            reg4: OnceLock::new(),
            closure: OnceLock::new(),
        }
    }

    fn embed(&self, rot: &EmbeddedRotation, d: usize) -> Result<CMat, String> {
        let mut m = embed(rot, d).map_err(|e| e.to_string())?.into_matrix();
        if self.faults.embed_sign {
            m[(rot.i, rot.j)] = -m[(rot.i, rot.j)];
        }
        Ok(m)
    }

    /// Haar registry at `d = 4`, `eps1 = 0.05`.
    fn reg4(&self) -> Registry {
        self.reg4
            .get_or_init(|| Registry::haar(4, HaarNetOptions::new(0.05, 1)).expect("registry"))
            .clone()
    }

    /// Closure of words of length <= 12 over a two-axis measure in SU(2).
    fn closure(&self) -> &Registry {
        self.closure.get_or_init(|| {
            let eta = LocalMeasure::two_axis_symmetric(1.0);
            Registry::from_atoms(2, &eta, ClosureOptions::new(0.2, CLOSURE_LENGTH)).expect("closure net")
        })
    }

    fn out_dir(&self, name: &str) -> String {
        self.tmp.join(name).to_string_lossy().into_owned()
    }
}

const CLOSURE_LENGTH: usize = 12;

pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub run: fn(&Ctx) -> Outcome,
}

macro_rules! checks {
    ($($module:literal $name:ident),* $(,)?) => {
        vec![$(Check { module: $module, name: stringify!($name), run: $name }),*]
    };
}

pub fn catalogue() -> Vec<Check> {
    checks![
        "matcore" mul_identity,
        "matcore" mul_inverse,
        "matcore" mul_associative,
        "matcore" norm_zero,
        "matcore" norm_diagonal,
        "matcore" norm_matches_eigen_oracle,
        "matcore" expm_zero,
        "matcore" expm_diagonal,
        "matcore" expm_inverse,
        "matcore" haar_su2_mean,
        "matcore" haar_su2_entry_modulus,
        "matcore" haar_su2_det,
        "matcore" haar_sud_trace,
        "matcore" haar_sud_trace_modulus,
        "matcore" haar_sud_entries,
        "matcore" project_fixed_point,
        "matcore" project_scaling,
        "matcore" project_noise,
        "walk" embed_identity_block,
        "walk" embed_definition,
        "walk" embed_random_is_special,
        "walk" step_index_uniform,
        "walk" step_d2_haar,
        "walk" step_single_atom,
        "walk" chain_zero_steps,
        "walk" chain_one_step_d2,
        "walk" chain_repair,
        "walk" convolution_identity,
        "walk" convolution_dense,
        "walk" convolution_haar,
        "spectra" degree1_d2_zero,
        "spectra" degree1_d4_half,
        "spectra" degree1_identity_measure,
        "spectra" degree2_d2_rank_one,
        "spectra" degree2_invariant,
        "spectra" degree2_gap_range,
        "spectra" contraction_linear,
        "spectra" contraction_zero_rejected,
        "spectra" contraction_trace,
        "spectra" decay_d4,
        "spectra" decay_d10,
        "spectra" decay_rho_rejected,
        "spectra" mixing_d2,
        "spectra" mixing_loose,
        "spectra" mixing_stationary,
        "spectra" fit_square,
        "spectra" fit_constant,
        "spectra" fit_haar_runs,
        "genwords" eval_empty,
        "genwords" eval_inverse,
        "genwords" eval_concat,
        "genwords" transposition_d2,
        "genwords" transposition_square,
        "genwords" transposition_conjugation,
        "genwords" ladder_adjacent,
        "genwords" ladder_1_3,
        "genwords" ladder_0_7,
        "genwords" gamma_identity,
        "genwords" gamma_rotation,
        "genwords" gamma_adjacent,
        "genwords" first_order_zero,
        "genwords" first_order_single_block,
        "genwords" first_order_random_bound,
        "genwords" splitting_zero,
        "genwords" splitting_ratio,
        "genwords" splitting_doubling,
        "genwords" sk_net_word,
        "genwords" sk_prediction,
        "genwords" sk_length,
        "genwords" compile_identity,
        "genwords" compile_rotation,
        "genwords" compile_two_tolerances,
        "genwords" givens_diagonal,
        "genwords" givens_two_level,
        "genwords" givens_haar,
        "harness" walk_d4,
        "harness" walk_d2,
        "harness" walk_missing_d,
        "harness" spectra_d4,
        "harness" spectra_d2,
        "harness" spectra_too_large,
        "harness" compile_identity_target,
        "harness" compile_rotation_target,
        "harness" compile_garbled,
        "harness" sweep_haar,
        "harness" sweep_two_entries,
        "harness" sweep_replay,
        "harness" selftest_filter,
    ]
}

/// Result of one check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub module: &'static str,
    pub name: &'static str,
    pub outcome: Outcome,
    pub seconds: f64,
}

/// Runs every check whose module or `module::name` contains `filter`.
pub fn run(filter: Option<&str>, faults: Faults, mut report: impl FnMut(&CheckResult)) -> Vec<CheckResult> {
    let ctx = Ctx::new(faults);
    let mut out = Vec::new();
    for c in catalogue() {
        let full = format!("{}::{}", c.module, c.name);
        if let Some(f) = filter {
            if c.module != f && !full.contains(f) {
                continue;
            }
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| (c.run)(&ctx)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let r = CheckResult {
            module: c.module,
            name: c.name,
            outcome,
            seconds: t.elapsed().as_secs_f64(),
        };
        report(&r);
        out.push(r);
    }
    let _ = std::fs::remove_dir_all(&ctx.tmp);
    out
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn dist(a: &CMat, b: &CMat) -> f64 {
    operator_norm(&(a - b))
}

fn random_skew(d: usize, seed: u64) -> SkewHermitian {
    let mut rng = stream_rng(seed, 0);
    let m = CMat::from_fn(d, d, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    SkewHermitian::new(SkewHermitian::project(&m)).expect("projected")
}

// matcore

fn mul_identity(_: &Ctx) -> Outcome {
    let u = haar_sud(5, &mut stream_rng(1, 0));
    let p = mul(&Unitary::identity(5), &u).map_err(e2s)?;
    ensure!(p.matrix() == u.matrix(), "I * U != U");
    Ok(())
}

fn mul_inverse(_: &Ctx) -> Outcome {
    let u = haar_sud(8, &mut stream_rng(2, 0));
    let p = mul(&u, &u.inverse()).map_err(e2s)?;
    let e = dist(p.matrix(), &CMat::identity(8, 8));
    ensure!(e < 1e-12, "U U^-1 off identity by {e:e}");
    Ok(())
}

fn mul_associative(_: &Ctx) -> Outcome {
    let mut rng = stream_rng(3, 0);
    for _ in 0..5 {
        let (a, b, cc) = (haar_sud(16, &mut rng), haar_sud(16, &mut rng), haar_sud(16, &mut rng));
        let l = mul(&mul(&a, &b).map_err(e2s)?, &cc).map_err(e2s)?;
        let r = mul(&a, &mul(&b, &cc).map_err(e2s)?).map_err(e2s)?;
        let e = dist(l.matrix(), r.matrix());
        ensure!(e < 1e-11, "associativity defect {e:e}");
    }
    Ok(())
}

fn norm_zero(_: &Ctx) -> Outcome {
    ensure!(operator_norm(&CMat::zeros(4, 4)) == 0.0, "norm of zero matrix");
    Ok(())
}

fn norm_diagonal(_: &Ctx) -> Outcome {
    let m = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(3.0, 0.0), c(1.0, 0.0), c(-2.0, 0.0)]));
    let n = operator_norm(&m);
    ensure!((n - 3.0).abs() < 1e-14, "norm {n} != 3");
    Ok(())
}

fn norm_matches_eigen_oracle(_: &Ctx) -> Outcome {
    let mut rng = stream_rng(4, 0);
    let m = CMat::from_fn(5, 5, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    let (ev, _) = hermitian_eigen(&(m.adjoint() * &m));
    let oracle = ev.iter().cloned().fold(0.0f64, f64::max).sqrt();
    let n = operator_norm(&m);
    ensure!((n - oracle).abs() < 1e-9, "norm {n} vs eigen oracle {oracle}");
    Ok(())
}

fn expm_zero(_: &Ctx) -> Outcome {
    let u = expm(&SkewHermitian::zeros(3));
    ensure!(dist(u.matrix(), &CMat::identity(3, 3)) == 0.0, "exp(0) != I");
    Ok(())
}

fn expm_diagonal(_: &Ctx) -> Outcome {
    let pi = std::f64::consts::PI;
    let a = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.0, pi), c(0.0, -pi)]));
    let u = expm(&SkewHermitian::new(a).map_err(e2s)?);
    let e = dist(u.matrix(), &(-CMat::identity(2, 2)));
    ensure!(e < 1e-14, "exp(i pi diag(1,-1)) off -I by {e:e}");
    Ok(())
}

fn expm_inverse(_: &Ctx) -> Outcome {
    let a = random_skew(6, 5);
    let p = expm(&a).matrix() * expm(&a.neg()).matrix();
    let e = dist(&p, &CMat::identity(6, 6));
    ensure!(e < 1e-11, "exp(A) exp(-A) off identity by {e:e}");
    Ok(())
}

fn haar_su2_mean(_: &Ctx) -> Outcome {
    let mut rng = stream_rng(6, 0);
    let n = 1_000_000;
    let mut s = Matrix2::<C64>::zeros();
    for _ in 0..n {
        s += haar_su2_block(&mut rng);
    }
    let m = s.map(|z| z.norm()).max() / n as f64;
    ensure!(m < 3e-3, "largest |E u_kl| = {m:e}");
    Ok(())
}

fn haar_su2_entry_modulus(_: &Ctx) -> Outcome {
    let mut rng = stream_rng(7, 0);
    let n = 1_000_000;
    let s: f64 = (0..n).map(|_| haar_su2_block(&mut rng)[(0, 0)].norm_sqr()).sum();
    let m = s / n as f64;
    ensure!((m - 0.5).abs() < 2e-3, "E|u11|^2 = {m}");
    Ok(())
}

fn haar_su2_det(_: &Ctx) -> Outcome {
    let mut rng = stream_rng(8, 0);
    for _ in 0..1000 {
        let u = haar_su2(&mut rng);
        ensure!((u.det() - c(1.0, 0.0)).norm() < 1e-14, "det = {}", u.det());
    }
    Ok(())
}

fn trace_samples(d: usize, n: usize, seed: u64) -> Vec<C64> {
    let mut rng = stream_rng(seed, 0);
    (0..n).map(|_| haar_sud(d, &mut rng).trace()).collect()
}

fn haar_sud_trace(_: &Ctx) -> Outcome {
    let t = trace_samples(4, 100_000, 9);
    let m = t.iter().sum::<C64>().norm() / t.len() as f64;
    ensure!(m < 1e-2, "|E tr U| = {m}");
    Ok(())
}

fn haar_sud_trace_modulus(_: &Ctx) -> Outcome {
    let t = trace_samples(4, 100_000, 10);
    let m = t.iter().map(|z| z.norm_sqr()).sum::<f64>() / t.len() as f64;
    ensure!((m - 1.0).abs() < 2e-2, "E|tr U|^2 = {m}");
    // d = 2 against the angle density: E|tr|^2 = E[4 cos^2 t] under (2/pi) sin^2 t dt
    let t2 = trace_samples(2, 100_000, 11);
    let m2 = t2.iter().map(|z| z.norm_sqr()).sum::<f64>() / t2.len() as f64;
    let steps = 100_000;
    let h = std::f64::consts::PI / steps as f64;
    let oracle: f64 = (0..steps)
        .map(|k| {
            let t = (k as f64 + 0.5) * h;
            4.0 * t.cos().powi(2) * 2.0 / std::f64::consts::PI * t.sin().powi(2) * h
        })
        .sum();
    ensure!((m2 - oracle).abs() < 2e-2, "d=2 E|tr U|^2 = {m2} vs angle-density value {oracle}");
    Ok(())
}

fn haar_sud_entries(_: &Ctx) -> Outcome {
    let mut rng = stream_rng(12, 0);
    let n = 100_000;
    let mut s = nalgebra::DMatrix::<f64>::zeros(4, 4);
    for _ in 0..n {
        s += haar_sud(4, &mut rng).matrix().map(|z| z.norm_sqr());
    }
    let worst = s.map(|x| (x / n as f64 - 0.25).abs()).max();
    ensure!(worst < 1e-2, "max |E|u_kl|^2 - 1/4| = {worst}");
    Ok(())
}

fn project_fixed_point(_: &Ctx) -> Outcome {
    let u = haar_sud(5, &mut stream_rng(13, 0));
    let p = project_unitary(u.matrix()).map_err(e2s)?;
    let e = dist(p.matrix(), u.matrix());
    ensure!(e < 1e-13, "moved a unitary by {e:e}");
    Ok(())
}

fn project_scaling(_: &Ctx) -> Outcome {
    let p = project_unitary(&(CMat::identity(3, 3) * c(1.1, 0.0))).map_err(e2s)?;
    let e = dist(p.matrix(), &CMat::identity(3, 3));
    ensure!(e < 1e-14, "1.1 I projected off I by {e:e}");
    Ok(())
}

fn project_noise(_: &Ctx) -> Outcome {
    let mut rng = stream_rng(14, 0);
    let u = haar_sud(6, &mut rng);
    let noise = CMat::from_fn(6, 6, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)) * c(1e-6, 0.0);
    let p = project_unitary(&(u.matrix() + noise)).map_err(e2s)?;
    let e = dist(p.matrix(), u.matrix());
    ensure!(e < 1e-5, "projection moved {e:e} from U");
    ensure!(p.measured_defect() < 1e-12, "defect {:e}", p.measured_defect());
    Ok(())
}

// walk

fn embed_identity_block(ctx: &Ctx) -> Outcome {
    let m = ctx.embed(&EmbeddedRotation::new(1, 3, Matrix2::identity()).map_err(e2s)?, 5)?;
    ensure!(m == CMat::identity(5, 5), "identity block did not embed to I");
    Ok(())
}

fn embed_definition(ctx: &Ctx) -> Outcome {
    let b = Matrix2::new(c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0));
    let m = ctx.embed(&EmbeddedRotation::new(0, 1, b).map_err(e2s)?, 3)?;
    let col = |k: usize| m.column(k).into_owned();
    let e = |k: usize, s: f64| {
        let mut v = nalgebra::DVector::<C64>::zeros(3);
        v[k] = c(s, 0.0);
        v
    };
    ensure!(col(0) == e(1, 1.0), "embed: e0 -> e1 violated");
    ensure!(col(1) == e(0, -1.0), "embed: e1 -> -e0 violated");
    ensure!(col(2) == e(2, 1.0), "embed: e2 fixed violated");
    Ok(())
}

fn embed_random_is_special(ctx: &Ctx) -> Outcome {
    let g = haar_su2_block(&mut stream_rng(15, 0));
    let m = ctx.embed(&EmbeddedRotation::new(2, 5, g).map_err(e2s)?, 7)?;
    let e = dist(&(&m * m.adjoint()), &CMat::identity(7, 7));
    ensure!(e < 1e-13, "embed: unitarity defect {e:e}");
    let det = m.determinant();
    ensure!((det - c(1.0, 0.0)).norm() < 1e-12, "embed: det = {det}");
    Ok(())
}

fn step_index_uniform(_: &Ctx) -> Outcome {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let d = 10;
    let cfg = WalkConfig::haar(d, 16).map_err(e2s)?;
    let mut rng = stream_rng(16, 0);
    let n = 1_000_000;
    let mut counts = vec![0u64; d];
    for _ in 0..n {
        counts[sample_step(&cfg, &mut rng).i] += 1;
    }
    let expect = n as f64 / d as f64;
    let chi2: f64 = counts.iter().map(|&k| (k as f64 - expect).powi(2) / expect).sum();
    let p = 1.0 - ChiSquared::new((d - 1) as f64).map_err(e2s)?.cdf(chi2);
    ensure!((0.001..=0.999).contains(&p), "chi-square p-value {p}");
    Ok(())
}

fn step_d2_haar(_: &Ctx) -> Outcome {
    let cfg = WalkConfig::haar(2, 17).map_err(e2s)?;
    let mut rng = stream_rng(17, 0);
    let n = 100_000;
    let mut s = 0.0;
    for _ in 0..n {
        let st = sample_step(&cfg, &mut rng);
        ensure!([(0, 1), (1, 0)].contains(&(st.i, st.j)), "d=2 step at ({}, {})", st.i, st.j);
        s += (st.block[(0, 0)] + st.block[(1, 1)]).norm_sqr();
    }
    let m = s / n as f64;
    ensure!((m - 1.0).abs() < 2e-2, "one d=2 step: E|tr|^2 = {m}");
    Ok(())
}

fn step_single_atom(_: &Ctx) -> Outcome {
    let g0 = haar_su2_block(&mut stream_rng(18, 0));
    let eta = LocalMeasure::atoms(vec![Atom { block: g0, weight: 1.0 }], false).map_err(e2s)?;
    let cfg = WalkConfig::new(5, eta, liewalk::walk::Variant::FixedNu, 18).map_err(e2s)?;
    let mut rng = stream_rng(18, 1);
    for _ in 0..1000 {
        ensure!(sample_step(&cfg, &mut rng).block == g0, "single-atom step drew another block");
    }
    Ok(())
}

fn chain_zero_steps(_: &Ctx) -> Outcome {
    let cfg = WalkConfig::haar(4, 19).map_err(e2s)?;
    let s = run_chain(&cfg, 0, &mut stream_rng(19, 0));
    ensure!(s.current.matrix() == &CMat::identity(4, 4), "zero steps moved the chain");
    Ok(())
}

fn chain_one_step_d2(_: &Ctx) -> Outcome {
    let cfg = WalkConfig::haar(2, 20).map_err(e2s)?;
    let mut rng = stream_rng(20, 0);
    let n = 100_000;
    let s: f64 = (0..n).map(|_| run_chain(&cfg, 1, &mut rng).current.trace().norm_sqr()).sum();
    let m = s / n as f64;
    ensure!((m - 1.0).abs() < 2e-2, "E|tr|^2 after one step = {m}");
    Ok(())
}

fn chain_repair(_: &Ctx) -> Outcome {
    let cfg = WalkConfig::haar(16, 21).map_err(e2s)?;
    let s = run_chain(&cfg, 100_000, &mut stream_rng(21, 0));
    let d = s.current.measured_defect();
    ensure!(d < 1e-8, "defect after 1e5 steps {d:e}");
    Ok(())
}

fn convolution_identity(_: &Ctx) -> Outcome {
    let eta = LocalMeasure::atoms(vec![Atom { block: Matrix2::identity(), weight: 1.0 }], false).map_err(e2s)?;
    let r = convolution_power_check(&eta, 1, 1000, &mut stream_rng(22, 0)).map_err(e2s)?;
    ensure!((r.abs_mean_trace - 2.0).abs() < 1e-12, "E tr = {}", r.abs_mean_trace);
    Ok(())
}

fn convolution_dense(_: &Ctx) -> Outcome {
    let eta = LocalMeasure::two_axis(STANDARD_DENSE_ANGLE);
    let r = convolution_power_check(&eta, 200, 100_000, &mut stream_rng(23, 0)).map_err(e2s)?;
    ensure!(r.abs_mean_trace < 0.05, "|E tr| = {}", r.abs_mean_trace);
    Ok(())
}

fn convolution_haar(_: &Ctx) -> Outcome {
    let r = convolution_power_check(&LocalMeasure::haar(), 1, 100_000, &mut stream_rng(24, 0)).map_err(e2s)?;
    let floor = 4.0 * r.noise_floor;
    ensure!(r.abs_mean_trace < floor, "|E tr| = {} above {floor}", r.abs_mean_trace);
    ensure!(r.second_moment_deviation < floor, "second moment {} above {floor}", r.second_moment_deviation);
    Ok(())
}

// spectra

fn degree1_d2_zero(_: &Ctx) -> Outcome {
    let m = degree1_transfer(&WalkConfig::haar(2, 0).map_err(e2s)?);
    ensure!(operator_norm(&m) < 1e-15, "M = {m}");
    Ok(())
}

fn degree1_d4_half(_: &Ctx) -> Outcome {
    let cfg = WalkConfig::haar(4, 25).map_err(e2s)?;
    let m = degree1_transfer(&cfg);
    let e = dist(&m, &(CMat::identity(4, 4) * c(0.5, 0.0)));
    ensure!(e < 1e-12, "M off 0.5 I by {e:e}");
    let mut rng = stream_rng(25, 0);
    let n = 4_000_000;
    let mut s = CMat::zeros(4, 4);
    for _ in 0..n {
        let st = sample_step(&cfg, &mut rng);
        s += embed_block_matrix(&st.block, st.i, st.j, 4);
    }
    let worst = (s / c(n as f64, 0.0) - m).map(|z| z.norm()).max();
    ensure!(worst < 1e-3, "Monte Carlo mean step off M by {worst:e}");
    Ok(())
}

fn degree1_identity_measure(_: &Ctx) -> Outcome {
    let eta = LocalMeasure::atoms(vec![Atom { block: Matrix2::identity(), weight: 1.0 }], false).map_err(e2s)?;
    let cfg = WalkConfig::new(4, eta, liewalk::walk::Variant::FixedNu, 0).map_err(e2s)?;
    ensure!(degree1_transfer(&cfg) == CMat::identity(4, 4), "M != I for the point mass at I");
    Ok(())
}

fn degree2_d2_rank_one(_: &Ctx) -> Outcome {
    let r = degree2_transfer(&WalkConfig::haar(2, 0).map_err(e2s)?).map_err(e2s)?;
    ensure!(r.second_eigenvalue.abs() < 1e-10, "second eigenvalue {}", r.second_eigenvalue);
    Ok(())
}

fn degree2_invariant(_: &Ctx) -> Outcome {
    for eta in [LocalMeasure::haar(), LocalMeasure::two_axis(STANDARD_DENSE_ANGLE)] {
        for d in 2..=6 {
            let cfg = WalkConfig::new(d, eta.clone(), liewalk::walk::Variant::FixedNu, 0).map_err(e2s)?;
            let m2 = degree2_matrix(&cfg).map_err(e2s)?;
            let v = vec_identity(d);
            let e = (&m2 * &v - &v).norm();
            ensure!(e < 1e-12, "d={d}: M2 vec(I) != vec(I) ({e:e})");
            let r = degree2_transfer(&cfg).map_err(e2s)?;
            ensure!((r.top_eigenvalue - 1.0).abs() < 1e-10, "d={d}: top eigenvalue {}", r.top_eigenvalue);
        }
    }
    Ok(())
}

fn degree2_gap_range(_: &Ctx) -> Outcome {
    let mut prev = f64::INFINITY;
    for d in 3..=12 {
        let r = degree2_transfer(&WalkConfig::haar(d, 0).map_err(e2s)?).map_err(e2s)?;
        ensure!(r.gap > 0.0, "d={d}: gap {}", r.gap);
        ensure!(r.gap <= prev + 1e-12, "d={d}: gap {} above previous {prev}", r.gap);
        let (lo, hi) = D_GAP_BRACKET;
        ensure!((lo..=hi).contains(&r.d_times_gap), "d={d}: d*gap {} outside [{lo}, {hi}]", r.d_times_gap);
        prev = r.gap;
    }
    Ok(())
}

fn contraction_linear(_: &Ctx) -> Outcome {
    let cfg = WalkConfig::haar(4, 26).map_err(e2s)?;
    let f = TestFunction::linear_coeff(4, 0, 0).map_err(e2s)?;
    let est = contraction_estimate(&f, &cfg, 10_000, 100, &mut stream_rng(26, 0)).map_err(e2s)?;
    ensure!(
        (est.estimate - 0.5).abs() <= 3.0 * est.std_error,
        "estimate {} +- {} vs 0.5",
        est.estimate,
        est.std_error
    );
    Ok(())
}

fn contraction_zero_rejected(_: &Ctx) -> Outcome {
    let cfg = WalkConfig::haar(4, 27).map_err(e2s)?;
    let f = TestFunction::user(4, |_| c(0.0, 0.0), 0.0, 0.0, c(0.0, 0.0));
    ensure!(
        contraction_estimate(&f, &cfg, 10, 10, &mut stream_rng(27, 0)).is_err(),
        "zero function accepted"
    );
    Ok(())
}

fn contraction_trace(_: &Ctx) -> Outcome {
    let cfg = WalkConfig::haar(4, 28).map_err(e2s)?;
    let f = TestFunction::trace_power(4, 1).map_err(e2s)?;
    let est = contraction_estimate(&f, &cfg, 10_000, 100, &mut stream_rng(28, 0)).map_err(e2s)?;
    ensure!(
        (est.estimate - 0.5).abs() <= 3.0 * est.std_error,
        "estimate {} +- {} vs 0.5",
        est.estimate,
        est.std_error
    );
    Ok(())
}

fn decay_steps(d: usize, rho: f64) -> Result<Option<u64>, String> {
    let cfg = WalkConfig::haar(d, 0).map_err(e2s)?;
    let f = TestFunction::linear_coeff(d, 0, 0).map_err(e2s)?;
    Ok(iterate_decay(&f, &cfg, rho, 10, 10, 1000, &mut stream_rng(29, 0)).map_err(e2s)?.steps)
}

fn decay_d4(_: &Ctx) -> Outcome {
    // 0.5^1 = 0.5 is not strictly below the threshold
    let s = decay_steps(4, 0.5 - 1e-15)?;
    ensure!(s == Some(2), "steps {s:?}");
    Ok(())
}

fn decay_d10(_: &Ctx) -> Outcome {
    let s = decay_steps(10, (-1.0f64).exp())?;
    ensure!(s == Some(5), "steps {s:?}");
    Ok(())
}

fn decay_rho_rejected(_: &Ctx) -> Outcome {
    ensure!(decay_steps(4, 0.6).is_err(), "rho = 0.6 accepted");
    Ok(())
}

fn mixing_d2(_: &Ctx) -> Outcome {
    let r = mixing_time(&WalkConfig::haar(2, 30).map_err(e2s)?, 0.05, 10_000, 100).map_err(e2s)?;
    ensure!(r.steps_to_target == Some(1), "steps {:?}", r.steps_to_target);
    Ok(())
}

fn mixing_loose(_: &Ctx) -> Outcome {
    let r = mixing_time(&WalkConfig::haar(4, 31).map_err(e2s)?, 0.9, 2000, 100).map_err(e2s)?;
    ensure!(matches!(r.steps_to_target, Some(s) if s <= 5), "steps {:?}", r.steps_to_target);
    Ok(())
}

fn mixing_stationary(_: &Ctx) -> Outcome {
    let eta = LocalMeasure::atoms(vec![Atom { block: Matrix2::identity(), weight: 1.0 }], false).map_err(e2s)?;
    let cfg = WalkConfig::new(3, eta, liewalk::walk::Variant::FixedNu, 0).map_err(e2s)?;
    let r = mixing_time(&cfg, 0.05, 100, 200).map_err(e2s)?;
    ensure!(!r.mixed && r.steps_to_target.is_none(), "stationary chain reported mixed");
    Ok(())
}

fn fit_square(_: &Ctx) -> Outcome {
    let data: Vec<(usize, u64)> = (3..=12).map(|d| (d, (d * d) as u64)).collect();
    let f = fit_power_law(&data).map_err(e2s)?;
    ensure!((f.exponent_estimate - 2.0).abs() < 1e-9, "exponent {}", f.exponent_estimate);
    Ok(())
}

fn fit_constant(_: &Ctx) -> Outcome {
    let data: Vec<(usize, u64)> = (3..=12).map(|d| (d, 7)).collect();
    let f = fit_power_law(&data).map_err(e2s)?;
    ensure!(f.exponent_estimate.abs() < 1e-12, "exponent {}", f.exponent_estimate);
    Ok(())
}

fn fit_haar_runs(_: &Ctx) -> Outcome {
    let mut data = Vec::new();
    for d in 3..=12 {
        let r = mixing_time(&WalkConfig::haar(d, 7).map_err(e2s)?, 0.05, 2000, 100_000).map_err(e2s)?;
        data.push((d, r.steps_to_target.ok_or(format!("d={d} did not mix"))?));
    }
    let f = fit_power_law(&data).map_err(e2s)?;
    ensure!(
        f.exponent_estimate > 0.5 && f.exponent_estimate < 4.0 && f.r_squared > 0.9,
        "exponent {} r^2 {}",
        f.exponent_estimate,
        f.r_squared
    );
    Ok(())
}

// genwords

fn small_reg(d: usize) -> Result<Registry, String> {
    Registry::haar(d, HaarNetOptions::new(0.3, 2)).map_err(e2s)
}

fn random_word(reg: &Registry, len: usize, seed: u64) -> Word {
    let mut rng = stream_rng(seed, 0);
    let n = reg.len() as u32;
    Word::from_letters(
        (0..len)
            .map(|_| Letter::new(rng.gen_range(0..n), if rng.gen::<bool>() { 1 } else { -1 }))
            .collect(),
    )
}

fn eval_empty(_: &Ctx) -> Outcome {
    let reg = small_reg(3)?;
    let u = eval(&Word::empty(), &reg).map_err(e2s)?;
    ensure!(u.matrix() == &CMat::identity(3, 3), "empty word != I");
    Ok(())
}

fn eval_inverse(_: &Ctx) -> Outcome {
    let reg = small_reg(4)?;
    let w = random_word(&reg, 200, 32);
    let u = eval(&w.concat(&w.inverse()), &reg).map_err(e2s)?;
    let e = dist(u.matrix(), &CMat::identity(4, 4));
    ensure!(e < 1e-10, "w w^-1 off I by {e:e}");
    Ok(())
}

fn eval_concat(_: &Ctx) -> Outcome {
    let reg = small_reg(4)?;
    for k in 0..10 {
        let (a, b) = (random_word(&reg, 50, 40 + k), random_word(&reg, 70, 60 + k));
        let ab = eval(&a.concat(&b), &reg).map_err(e2s)?;
        let p = eval(&a, &reg).map_err(e2s)?.matrix() * eval(&b, &reg).map_err(e2s)?.matrix();
        let e = dist(ab.matrix(), &p);
        ensure!(e < 1e-10, "eval(ab) off eval(a) eval(b) by {e:e}");
    }
    Ok(())
}

fn transposition_d2(_: &Ctx) -> Outcome {
    let r = liewalk::genwords::signed_transposition(0, 1, 2).map_err(e2s)?;
    let m = embed(&r, 2).map_err(e2s)?;
    let want = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
    ensure!(m.matrix() == &want, "got {}", m.matrix());
    Ok(())
}

fn transposition_square(_: &Ctx) -> Outcome {
    let r = liewalk::genwords::signed_transposition(1, 3, 5).map_err(e2s)?;
    let m = embed(&r, 5).map_err(e2s)?;
    let sq = m.matrix() * m.matrix();
    let want = embed_block_matrix(&(Matrix2::identity() * c(-1.0, 0.0)), 1, 3, 5);
    ensure!(sq == want, "square is not -I on the block");
    Ok(())
}

fn transposition_conjugation(_: &Ctx) -> Outcome {
    let d = 4;
    let g = haar_su2_block(&mut stream_rng(33, 0));
    let s = embed(&liewalk::genwords::signed_transposition(1, 3, d).map_err(e2s)?, d).map_err(e2s)?;
    let conj = s.matrix() * embed_block_matrix(&g, 0, 1, d) * s.matrix().adjoint();
    let ok = [1.0, -1.0].iter().any(|&sg| {
        let sg = c(sg, 0.0);
        let moved = Matrix2::new(g[(0, 0)], g[(0, 1)] * sg, g[(1, 0)] * sg, g[(1, 1)]);
        dist(&conj, &embed_block_matrix(&moved, 0, 3, d)) < 1e-14
    });
    ensure!(ok, "conjugate is not the block at (0, 3) up to signs");
    Ok(())
}

fn perm_pattern_ok(w: &Word, reg: &Registry, i: usize, j: usize) -> Outcome {
    let d = reg.dim();
    let v = eval(w, reg).map_err(e2s)?;
    let abs = v.matrix().map(|z| z.norm());
    let mut p = nalgebra::DMatrix::<f64>::identity(d, d);
    p.swap_columns(i, j);
    ensure!(abs == p, "absolute value pattern is not the transposition ({i} {j})");
    Ok(())
}

fn ladder_adjacent(_: &Ctx) -> Outcome {
    let reg = small_reg(5)?;
    let w = transposition_ladder(2, 3, &reg).map_err(e2s)?;
    ensure!(w.len() == 1, "length {}", w.len());
    perm_pattern_ok(&w, &reg, 2, 3)
}

fn ladder_1_3(_: &Ctx) -> Outcome {
    let reg = small_reg(4)?;
    let w = transposition_ladder(1, 3, &reg).map_err(e2s)?;
    ensure!(w.len() == 3, "length {}", w.len());
    perm_pattern_ok(&w, &reg, 1, 3)
}

fn ladder_0_7(_: &Ctx) -> Outcome {
    let reg = small_reg(8)?;
    let w = transposition_ladder(0, 7, &reg).map_err(e2s)?;
    ensure!(w.len() == 13, "length {}", w.len());
    perm_pattern_ok(&w, &reg, 0, 7)
}

fn gamma_identity(ctx: &Ctx) -> Outcome {
    let mut reg = ctx.reg4();
    let g = approx_gamma_ij(&Matrix2::identity(), 1, 2, &mut reg, None).map_err(e2s)?;
    let e = dist(eval(&g.word, &reg).map_err(e2s)?.matrix(), &CMat::identity(4, 4));
    ensure!(e < reg.eps1(), "error {e} >= eps1");
    Ok(())
}

fn gamma_rotation(ctx: &Ctx) -> Outcome {
    let mut reg = ctx.reg4();
    let gamma = liewalk::genwords::signed_transposition_block();
    let g = approx_gamma_ij(&gamma, 0, 2, &mut reg, None).map_err(e2s)?;
    let e = dist(eval(&g.word, &reg).map_err(e2s)?.matrix(), &embed_block_matrix(&gamma, 0, 2, 4));
    ensure!(e < 0.35, "error {e} >= 0.35");
    ensure!(e <= g.bound, "error {e} above reported bound {}", g.bound);
    Ok(())
}

fn gamma_adjacent(ctx: &Ctx) -> Outcome {
    let mut reg = ctx.reg4();
    let mut rng = stream_rng(34, 0);
    for _ in 0..20 {
        let gamma = haar_su2_block(&mut rng);
        let g = approx_gamma_ij(&gamma, 1, 2, &mut reg, None).map_err(e2s)?;
        ensure!(g.word.len() <= 1, "length {}", g.word.len());
        let e = dist(eval(&g.word, &reg).map_err(e2s)?.matrix(), &embed_block_matrix(&gamma, 1, 2, 4));
        ensure!(e < reg.eps1(), "error {e} >= eps1");
    }
    Ok(())
}

fn first_order_zero(ctx: &Ctx) -> Outcome {
    let mut reg = ctx.reg4();
    let fo = first_order_word(&SkewHermitian::zeros(4), 0.1, &mut reg, FirstOrderOptions::default()).map_err(e2s)?;
    ensure!(fo.word.is_empty(), "length {}", fo.word.len());
    Ok(())
}

fn first_order_single_block(ctx: &Ctx) -> Outcome {
    let mut reg = ctx.reg4();
    let mut m = CMat::zeros(4, 4);
    m[(1, 2)] = c(0.0, 1.0);
    m[(2, 1)] = c(0.0, 1.0);
    let a = SkewHermitian::new(m.clone()).map_err(e2s)?;
    let kappa = 0.01;
    let fo = first_order_word(&a, kappa, &mut reg, FirstOrderOptions::default()).map_err(e2s)?;
    let affine = CMat::identity(4, 4) + m * c(kappa, 0.0);
    let e = dist(eval(&fo.word, &reg).map_err(e2s)?.matrix(), &affine);
    ensure!(e <= 1e-4 + fo.net_term, "error {e:e} above 1e-4 + {:e}", fo.net_term);
    Ok(())
}

fn first_order_random_bound(ctx: &Ctx) -> Outcome {
    let mut reg = ctx.reg4();
    let a = random_skew(4, 35);
    let kappa = 1.0 / 64.0;
    let fo = first_order_word(&a, kappa, &mut reg, FirstOrderOptions::default()).map_err(e2s)?;
    let affine = CMat::identity(4, 4) + a.matrix() * c(kappa, 0.0);
    let e = dist(eval(&fo.word, &reg).map_err(e2s)?.matrix(), &affine);
    ensure!(e <= fo.bound, "error {e:e} above bound {:e}", fo.bound);
    Ok(())
}

fn splitting_zero(ctx: &Ctx) -> Outcome {
    let mut reg = ctx.reg4();
    for r in [1, 7] {
        let sp = exp_splitting_word(&SkewHermitian::zeros(4), r, &mut reg, FirstOrderOptions::default()).map_err(e2s)?;
        ensure!(sp.word.is_empty(), "r={r}: length {}", sp.word.len());
    }
    Ok(())
}

/// `0.5 i diag(1, -1, 0, 0)` plus a real rotation generator on `(1, 2)`; the
/// two blocks do not commute.
pub fn splitting_test_algebra() -> SkewHermitian {
    let mut m = CMat::zeros(4, 4);
    m[(0, 0)] = c(0.0, 0.5);
    m[(1, 1)] = c(0.0, -0.5);
    m[(1, 2)] = c(0.5, 0.0);
    m[(2, 1)] = c(-0.5, 0.0);
    SkewHermitian::new(m).expect("skew-Hermitian")
}

/// Measured splitting errors at `r = 16, 64, 256` with block words accurate
/// to a thousandth of the first-order default.
pub fn splitting_errors(reg: &mut Registry) -> Result<Vec<f64>, String> {
    let a = splitting_test_algebra();
    let exact = expm(&a);
    let d = 4.0;
    let mut out = Vec::new();
    for r in [16usize, 64, 256] {
        let tol = 1.0 / (2000.0 * d * d * (r * r) as f64);
        let opts = FirstOrderOptions { c: 1.0, block_tol: Some(tol) };
        let sp = exp_splitting_word(&a, r, reg, opts).map_err(e2s)?;
        let e = eval(&sp.word, reg).map_err(e2s)?.distance(&exact);
        if e > sp.bound {
            return Err(format!("r={r}: error {e:e} above bound {:e}", sp.bound));
        }
        out.push(e);
    }
    Ok(out)
}

fn splitting_ratio(ctx: &Ctx) -> Outcome {
    let mut reg = ctx.reg4();
    let errs = splitting_errors(&mut reg)?;
    for w in errs.windows(2) {
        let q = w[0] / w[1];
        ensure!((2.5..=5.5).contains(&q), "consecutive error ratio {q} ({errs:?})");
    }
    Ok(())
}

fn splitting_doubling(ctx: &Ctx) -> Outcome {
    let mut reg = ctx.reg4();
    let a = SkewHermitian::new(random_skew(4, 36).scaled(0.1)).map_err(e2s)?;
    let s1 = exp_splitting_word(&a, 8, &mut reg, FirstOrderOptions::default()).map_err(e2s)?;
    let s2 = exp_splitting_word(&a, 16, &mut reg, FirstOrderOptions::default()).map_err(e2s)?;
    ensure!(s1.first_order_nominal == 2.0 * s2.first_order_nominal, "d^2/r did not halve");
    Ok(())
}

fn sk_net_word(ctx: &Ctx) -> Outcome {
    let reg = ctx.closure();
    let q = *reg.net().point(reg.net_size() / 2);
    let t = su2_from_quaternion(q);
    let t = CMat::from_fn(2, 2, |r, cc| t[(r, cc)]);
    let mut base = NetBase::new(reg, 0).map_err(e2s)?;
    let r = sk_refine(&t, &mut base, 0, &mut SkStats::default()).map_err(e2s)?;
    ensure!(r.word.len() <= 1, "length {}", r.word.len());
    ensure!(r.chain_errors[0] <= reg.eps1(), "error {} above eps0", r.chain_errors[0]);
    Ok(())
}

fn su2_targets(n: usize, seed: u64) -> Vec<CMat> {
    let mut rng = stream_rng(seed, 0);
    (0..n).map(|_| haar_su2(&mut rng).into_matrix()).collect()
}

/// Calibrated contraction constant of the closure base (safety factor 2).
pub fn closure_c_sk(reg: &Registry) -> Result<f64, String> {
    let mut base = NetBase::new(reg, 0).map_err(e2s)?;
    calibrate_c_sk(&su2_targets(10, 37), &mut base, 4, 2.0).map_err(e2s)
}

fn sk_prediction(ctx: &Ctx) -> Outcome {
    let reg = ctx.closure();
    let c_sk = closure_c_sk(reg)?;
    // eps_n is the worst error at level n over every call, sub-calls included
    let mut stats = SkStats::default();
    let mut chains = Vec::new();
    for t in su2_targets(5, 38) {
        let mut base = NetBase::new(reg, 0).map_err(e2s)?;
        chains.push(sk_refine(&t, &mut base, 4, &mut stats).map_err(e2s)?.chain_errors);
    }
    let eps = &stats.level_errors;
    for (n, w) in eps.windows(2).enumerate() {
        let cap = c_sk * w[0].powf(1.5);
        ensure!(w[1] <= cap || w[1] < 1e-10, "level {}: eps {:e} above c_sk eps^1.5 = {cap:e}", n + 1, w[1]);
    }
    let pred = predicted_errors(eps[0], c_sk, 4);
    for errs in &chains {
        for (n, (e, p)) in errs.iter().zip(&pred).enumerate() {
            ensure!(*e <= *p || *e < 1e-10, "level {n}: error {e:e} above predicted {p:e}");
        }
    }
    Ok(())
}

fn sk_length(ctx: &Ctx) -> Outcome {
    let reg = ctx.closure();
    let t = &su2_targets(1, 39)[0];
    for n in 0..=5u32 {
        let mut base = NetBase::new(reg, 0).map_err(e2s)?;
        let r = sk_refine(t, &mut base, n as usize, &mut SkStats::default()).map_err(e2s)?;
        let atoms = reg.word_atom_length(&r.word).map_err(e2s)?;
        let cap = 2 * 5u64.pow(n) * CLOSURE_LENGTH as u64;
        ensure!(atoms <= cap, "depth {n}: atom length {atoms} above {cap}");
    }
    Ok(())
}

fn compile_identity(ctx: &Ctx) -> Outcome {
    let mut reg = ctx.reg4();
    let (w, _) = compile(&Unitary::identity(4), &mut reg, 1e-3, &CompileOptions::default()).map_err(e2s)?;
    ensure!(w.is_empty(), "length {}", w.len());
    Ok(())
}

fn rotation_target(seed: u64) -> Unitary {
    let g = haar_su2_block(&mut stream_rng(seed, 0));
    Unitary::special_from_matrix(embed_block_matrix(&g, 0, 1, 4), 1e-12).expect("special")
}

fn compile_rotation(ctx: &Ctx) -> Outcome {
    let mut reg = ctx.reg4();
    let t = rotation_target(40);
    let (w, rep) = compile(&t, &mut reg, 1e-3, &CompileOptions::default()).map_err(e2s)?;
    let e = eval(&w, &reg).map_err(e2s)?.distance(&t);
    ensure!(e < 1e-3 && rep.measured_error < 1e-3, "error {e:e}");
    Ok(())
}

fn compile_two_tolerances(ctx: &Ctx) -> Outcome {
    let mut reg = ctx.reg4();
    let t = haar_sud(4, &mut stream_rng(41, 0));
    let tau = 1e-4;
    let mut lens = Vec::new();
    for tol in [tau, tau / 10.0] {
        let (w, rep) = compile(&t, &mut reg, tol, &CompileOptions::default()).map_err(e2s)?;
        let e = eval(&w, &reg).map_err(e2s)?.distance(&t);
        ensure!(e < tol, "tau {tol:e}: error {e:e}");
        ensure!(rep.length == w.len(), "reported length mismatch");
        lens.push(w.len() as f64);
    }
    let ratio = lens[1] / lens[0];
    let cap = ((10.0 / tau).ln() / (1.0 / tau).ln()).powi(5) * 5.0;
    ensure!(ratio <= cap, "length ratio {ratio} above {cap}");
    Ok(())
}

fn givens_diagonal(_: &Ctx) -> Outcome {
    let z = |a: f64| C64::from_polar(1.0, a);
    let m = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![z(0.4), z(-1.3), z(0.9)]));
    let u = Unitary::special_from_matrix(m, 1e-12).map_err(e2s)?;
    for r in givens_oracle(&u).map_err(e2s)? {
        ensure!(r.block[(0, 1)].norm() < 1e-14, "factor at ({}, {}) mixes coordinates", r.i, r.j);
    }
    Ok(())
}

fn givens_two_level(_: &Ctx) -> Outcome {
    let g = haar_su2_block(&mut stream_rng(42, 0));
    let u = Unitary::special_from_matrix(embed_block_matrix(&g, 0, 1, 5), 1e-12).map_err(e2s)?;
    let f = givens_oracle(&u).map_err(e2s)?;
    ensure!(f.len() == 1 && (f[0].i, f[0].j) == (0, 1), "{} factors", f.len());
    Ok(())
}

fn givens_haar(_: &Ctx) -> Outcome {
    let u = haar_sud(6, &mut stream_rng(43, 0));
    let f = givens_oracle(&u).map_err(e2s)?;
    let p = liewalk::genwords::givens::product(&f, 6);
    let e = dist(&p, u.matrix());
    ensure!(e < 1e-10, "reconstruction error {e:e}");
    Ok(())
}

// harness

fn cfg(ctx: &Ctx, command: &str, pairs: &[(&str, &str)]) -> RunConfig {
    let mut c = RunConfig::defaults(command);
    c.output_dir = ctx.out_dir(command);
    for (k, v) in pairs {
        c.set(k, v).expect("valid selftest config");
    }
    c
}

fn walk_d4(ctx: &Ctx) -> Outcome {
    let c = cfg(ctx, "walk", &[("d", "4"), ("epsilon", "0.05"), ("chains", "2000"), ("seed", "7")]);
    let r = cmd_walk(&c).map_err(e2s)?;
    ensure!(matches!(r.steps_to_target, Some(s) if s > 0), "steps {:?}", r.steps_to_target);
    Ok(())
}

fn walk_d2(ctx: &Ctx) -> Outcome {
    let c = cfg(ctx, "walk", &[("d", "2"), ("epsilon", "0.05"), ("chains", "10000")]);
    let r = cmd_walk(&c).map_err(e2s)?;
    ensure!(r.steps_to_target == Some(1), "steps {:?}", r.steps_to_target);
    Ok(())
}

fn walk_missing_d(ctx: &Ctx) -> Outcome {
    let c = cfg(ctx, "walk", &[]);
    ensure!(matches!(cmd_walk(&c), Err(HarnessError::Usage(_))), "no usage error without d");
    Ok(())
}

fn spectra_d4(ctx: &Ctx) -> Outcome {
    let r = cmd_spectra(&cfg(ctx, "spectra", &[("d", "4")])).map_err(e2s)?;
    ensure!((r.degree1.contraction_factor - 0.5).abs() < 1e-12, "factor {}", r.degree1.contraction_factor);
    Ok(())
}

fn spectra_d2(ctx: &Ctx) -> Outcome {
    let r = cmd_spectra(&cfg(ctx, "spectra", &[("d", "2")])).map_err(e2s)?;
    ensure!(r.degree2.second_eigenvalue.abs() < 1e-10, "second {}", r.degree2.second_eigenvalue);
    Ok(())
}

fn spectra_too_large(ctx: &Ctx) -> Outcome {
    match cmd_spectra(&cfg(ctx, "spectra", &[("d", "65")])) {
        Err(HarnessError::Usage(m)) if m.contains("monte_carlo") => Ok(()),
        other => Err(format!("expected an error advising Monte Carlo, got {other:?}")),
    }
}

fn write_target(ctx: &Ctx, name: &str, body: &str) -> Result<String, String> {
    let dir = ctx.tmp.join("targets");
    std::fs::create_dir_all(&dir).map_err(e2s)?;
    let p = dir.join(name);
    std::fs::write(&p, body).map_err(e2s)?;
    Ok(p.to_string_lossy().into_owned())
}

fn compile_identity_target(ctx: &Ctx) -> Outcome {
    let p = write_target(ctx, "id.txt", &format_matrix(&CMat::identity(4, 4)))?;
    let r = cmd_compile(&cfg(ctx, "compile", &[("target", &p), ("eps1", "0.3")])).map_err(e2s)?;
    ensure!(r.compile.length == 0, "length {}", r.compile.length);
    Ok(())
}

fn compile_rotation_target(ctx: &Ctx) -> Outcome {
    let p = write_target(ctx, "rot.txt", &format_matrix(rotation_target(44).matrix()))?;
    let r = cmd_compile(&cfg(ctx, "compile", &[("target", &p), ("tau", "1e-3")])).map_err(e2s)?;
    ensure!(r.compile.measured_error < 1e-3, "measured {:e}", r.compile.measured_error);
    Ok(())
}

fn compile_garbled(ctx: &Ctx) -> Outcome {
    let p = write_target(ctx, "bad.txt", "1 0 0 0\n0 0 one 0\n")?;
    match cmd_compile(&cfg(ctx, "compile", &[("target", &p)])) {
        Err(HarnessError::Usage(m)) if m.contains("line 2") => Ok(()),
        other => Err(format!("expected a parse error naming line 2, got {other:?}")),
    }
}

fn sweep_haar(ctx: &Ctx) -> Outcome {
    let c = cfg(ctx, "sweep", &[("d_list", "3..12"), ("epsilon", "0.05"), ("chains", "2000"), ("seed", "7")]);
    let r = cmd_sweep(&c).map_err(e2s)?;
    let f = r.fit.ok_or("no fit")?;
    ensure!(
        f.exponent_estimate > 0.5 && f.exponent_estimate < 4.0 && f.r_squared > 0.9,
        "exponent {} r^2 {}",
        f.exponent_estimate,
        f.r_squared
    );
    Ok(())
}

fn sweep_two_entries(ctx: &Ctx) -> Outcome {
    let c = cfg(ctx, "sweep", &[("d_list", "3,4")]);
    ensure!(matches!(cmd_sweep(&c), Err(HarnessError::Usage(_))), "two dimensions accepted");
    Ok(())
}

fn sweep_replay(ctx: &Ctx) -> Outcome {
    let body: String = (3..=12).map(|d| format!("{d},{}\n", d * d)).collect();
    let p = write_target(ctx, "replay.csv", &format!("d,steps\n{body}"))?;
    let r = cmd_sweep(&cfg(ctx, "sweep", &[("replay", &p)])).map_err(e2s)?;
    let f = r.fit.ok_or("no fit")?;
    ensure!((f.exponent_estimate - 2.0).abs() < 1e-9, "exponent {}", f.exponent_estimate);
    Ok(())
}

fn selftest_filter(_: &Ctx) -> Outcome {
    let all = catalogue();
    let n = all.iter().filter(|c| c.module == "spectra").count();
    ensure!(n > 0, "no spectra checks");
    ensure!(
        all.iter().all(|c| ["matcore", "walk", "spectra", "genwords", "harness"].contains(&c.module)),
        "unknown module in catalogue"
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut names: Vec<String> = catalogue().iter().map(|c| format!("{}::{}", c.module, c.name)).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn embed_fault_is_caught_by_name() {
        let ctx = Ctx::new(Faults { embed_sign: true });
        let e = embed_definition(&ctx).unwrap_err();
        assert!(e.contains("embed: e1 -> -e0"), "{e}");
        assert!(embed_random_is_special(&ctx).unwrap_err().starts_with("embed:"));
        let clean = Ctx::new(Faults::default());
        assert!(embed_definition(&clean).is_ok());
    }

    #[test]
    fn filter_selects_module() {
        let mut seen = Vec::new();
        // the cheapest module
        run(Some("matcore::norm"), Faults::default(), |r| seen.push((r.module, r.outcome.is_ok())));
        assert_eq!(seen.len(), 3);
        assert!(seen.iter().all(|(m, ok)| *m == "matcore" && *ok));
    }
}
