//! Words over a generator registry approximating elements of SU(d).
//!
//! The pipeline: a certified SU(2) net placed on every adjacent pair,
//! signed-transposition ladders moving blocks to arbitrary pairs, first-order
//! Lie-algebra words, exponential splitting, and Solovay-Kitaev refinement.
//! [`givens_oracle`] gives an independent exact factorization for checks.

pub mod cells;
pub mod givens;
pub mod ladder;
pub mod pipeline;
pub mod registry;
pub mod sk;
pub mod word;

pub use cells::{CellGrid, NetIndex, Quat};
pub use registry::{
    eval, eval_cached, signed_transposition_block, Certificate, ClosureOptions, Composite,
    HaarNetOptions, Manifest, Provenance, Registry, RegistrySource,
};
pub use sk::{
    balanced_commutator, calibrate_c_sk, predicted_errors, principal_log_hermitian, refine_until, sk_refine,
    BaseApproximator, BlockWord, NetBase, SkResult, SkStats,
};
pub use word::{Letter, Word};
pub use givens::givens_oracle;
pub use ladder::{approx_gamma_ij, ladder_indices, signed_transposition, transposition_ladder, GammaWord};
pub use pipeline::{
    compile, coarse_word, decompose, exp_splitting_word, first_order_word, AlgebraBlock,
    CompileOptions, CompileReport, ExpSplitting, FirstOrderOptions, FirstOrderWord, StageReport,
};
