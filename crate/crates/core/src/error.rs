use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("supercell radius {radius:.4e} m contains no carbon sites")]
    EmptyLattice { radius: f64 },

    #[error("no occupied sites for seed {seed} (abundance {abundance})")]
    NoOccupiedSites { seed: u64, abundance: f64 },

    #[error("nucleus at the origin has no defined dipolar coupling")]
    ZeroPosition,

    #[error("all hyperfine couplings vanish; dephasing time is infinite")]
    ZeroCouplings,

    #[error(
        "no configuration within tolerance of target sigma {target:.6e} rad/s after {trials} trials \
         (closest sigma {closest:.6e} rad/s at seed {closest_seed})"
    )]
    TargetNotReached {
        target: f64,
        closest: f64,
        closest_seed: u64,
        trials: usize,
    },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("brute-force oracle refuses N = {n} spins (limit {max})")]
    OracleTooLarge { n: usize, max: usize },

    #[error("internal: assembled Hamiltonian is not Hermitian (deviation {0:e})")]
    NonHermitian(f64),

    #[error("internal: normalized trace has imaginary part {0:e}")]
    ComplexTrace(f64),

    #[error("internal: eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("requested {requested} spins but the configuration holds only {max}")]
    SizeExceedsConfiguration { requested: usize, max: usize },
}
