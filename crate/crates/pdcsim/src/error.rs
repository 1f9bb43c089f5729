use thiserror::Error;

/// Errors surfaced by the simulation and estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error(
        "photon-number truncation at m_max = {m_max} leaves tail mass {tail:.3e} \
         for mean {mean} (budget 1e-9)"
    )]
    TruncationTooCoarse { m_max: usize, mean: f64, tail: f64 },

    #[error("conditioning on n = {n} heralded photons has vanishing probability")]
    ImpossibleCondition { n: usize },

    #[error("occupancy matrix is singular or too ill-conditioned (estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("vector has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },

    #[error(
        "mimic calibration infeasible: target rate {target:.6e} outside the reachable \
         range [{reachable_min:.6e}, {reachable_max:.6e}]"
    )]
    MimicInfeasible {
        target: f64,
        reachable_min: f64,
        reachable_max: f64,
    },

    #[error("attack detection needs at least one usable photon-number ratio with n >= 2")]
    InsufficientOverlap,

    #[error("counts table violates an invariant: {0}")]
    InvalidCounts(String),

    #[error("i/o failure: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
