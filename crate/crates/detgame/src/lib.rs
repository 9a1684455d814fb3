//! Adversarial binary hypothesis testing on finite alphabets.
//!
//! An attacker intercepts an i.i.d. sample from one of two sources and may
//! rewrite it subject to a per-letter distortion budget before the detector
//! sees it. This crate computes both sides of that game:
//!
//! * asymptotics: optimal error exponents under a Neyman-Pearson constraint
//!   or a Bayesian cost, their zero-rate limits, and the region of sources
//!   the attacker can make indistinguishable,
//! * exact finite-sample quantities: the dominant attack channel, the
//!   matching detector randomizations, induced output laws, and exact error
//!   probabilities by summation over type classes,
//! * Monte Carlo simulation of the whole game with reproducible streams.
//!
//! The building blocks (probability vectors, couplings, distortion matrices,
//! type-class combinatorics, optimal transport, and the constrained
//! divergence solvers) are exported so they can be used on their own.

pub mod exact;
pub mod exponents;
pub mod game;
pub mod gendiv;
pub mod lp;
pub mod sim;
pub mod simplex;
pub mod solver;
pub mod transport;
pub mod types;

pub use exact::DistortionBound;
pub use exponents::{
    bayes_exponent, indistinguishability, limit_exponents, np_fn_exponent,
    np_fn_exponent_metric_form, region_sweep, BayesExponents, ExponentResult, GameSpec,
    Indistinguishability, LimitExponents, RegionRow, RegionSweep,
};
pub use game::{
    bayes_defense, exact_error_probs, induced_output_pmf, np_defense_prob, BayesMode, Defense,
    DefenseEval, ExactErrorProbs, InducedOutputPmf,
};
pub use gendiv::{gen_divergence, gen_divergence_empirical, EmpiricalGenDiv, GenDiv};
pub use sim::{monte_carlo_simulate, SimulationReport};
pub use simplex::{
    expected_distortion, kl_divergence, make_distortion, Coupling, DistortionKind,
    DistortionMatrix, Pmf,
};
pub use transport::{emd, Transport};
pub use types::{
    conditional_class_size, count_admissible_conditional_classes, enumerate_joint_compositions,
    sample_attack_output, type_class_size, Composition, JointComposition,
};

/// Errors reported by constructors and game evaluations.
///
/// Infinite values are not errors: operations whose mathematical value is
/// `+inf` return `f64::INFINITY` together with a reason in their diagnostics.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid probability vector: {0}")]
    InvalidPmf(String),
    #[error("invalid distortion matrix: {0}")]
    InvalidDistortion(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no admissible conditional class: {0}")]
    NoAdmissibleClass(String),
    #[error("resource budget exceeded: {0}")]
    ResourceBudget(String),
}

pub type Result<T> = std::result::Result<T, Error>;
