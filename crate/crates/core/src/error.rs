use thiserror::Error;

/// Errors surfaced by the toolkit's constructors and estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel tabulation is not positive definite: min spectrum {min:.3e} < -{tol:.3e} * max")]
    NotPositiveDefinite { min: f64, tol: f64 },

    #[error("covariance row is not symmetric under reflection (index {index}, gap {gap:.3e})")]
    AsymmetricRow { index: usize, gap: f64 },

    #[error("grid too coarse: {what} needs spacing <= {required}, got {got}")]
    Resolution {
        what: &'static str,
        required: f64,
        got: f64,
    },

    #[error("quadratic form makes the Gaussian integral divergent (min eigenvalue of I - CA is {min_eig:.3e})")]
    DivergentIntegral { min_eig: f64 },

    #[error("charged sector sum diverges: beta*C(0) = {beta_c0:.4} <= 2*N_C = {two_nc:.4}")]
    ChargedSectorDivergent { beta_c0: f64, two_nc: f64 },

    #[error("activity is not 2*pi periodic in the constant mode (gap {gap:.3e})")]
    NotPeriodic { gap: f64 },

    #[error("activity is not neutral: |k_{q}| = {magnitude:.3e}")]
    NotNeutral { q: i32, magnitude: f64 },

    #[error("dipole sites must be distinct grid nodes")]
    CoincidentDipoles,

    #[error("finite-difference step failed Richardson check: disagreement {gap:.3e} > {tol:.3e}")]
    FiniteDifference { gap: f64, tol: f64 },

    #[error("shooting bracket [{lo:.6e}, {hi:.6e}] has no sign change")]
    Bracket { lo: f64, hi: f64 },

    #[error("no (A, q) in the search range satisfies the large-set regulator bound; witness polymer has {witness_size} blocks")]
    RegulatorSearch { witness_size: usize },

    #[error("reweighting breakdown: effective sample size {ess:.1} < {n_samples}/100")]
    ReweightingBreakdown { ess: f64, n_samples: usize },

    #[error("degenerate fit design: {0}")]
    DegenerateFit(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
