//! Error type shared by every module in the crate.

use thiserror::Error;

/// Everything that can go wrong while manipulating continued fraction
/// strings, states and transducers.
#[derive(Debug, Error)]
pub enum CfError {
    /// The matrix is singular; the Möbius action collapses to a constant.
    #[error("matrix {0} has zero determinant")]
    ZeroDeterminant(String),

    /// An operation that requires a state matrix was handed a matrix
    /// outside the state set.
    #[error("matrix {0} is not a state matrix (no type I-VI pattern matches)")]
    NotAState(String),

    /// The Möbius transform was evaluated at (or across) its pole.
    #[error("pole: denominator of the Möbius transform vanishes on the input")]
    Pole,

    /// A digit stream ended before the computation could settle.
    #[error("digit source exhausted before the computation settled")]
    NeedsMoreDigits,

    /// A junction rewrite had to consume more context than the left
    /// operand provides.
    #[error("junction reduction consumed the entire left operand")]
    ReductionUnderflow,

    /// A junction rewrite reached digits that were already flushed past
    /// the hold-back window.
    #[error("hold-back window too small: reduction reached flushed digits (H = {holdback})")]
    HoldbackUnderflow { holdback: usize },

    /// The absorption loop failed to land in the state set within its
    /// iteration budget. Carries the offending state and digit so the
    /// failure is reproducible.
    #[error("absorption loop exceeded {cap} iterations (state {state}, digit {digit})")]
    NonTermination { state: String, digit: u64, cap: u64 },

    /// Two zero quotients in a row inside the absorption loop. A single
    /// zero quotient is a row swap that merges the next emitted digit
    /// into the previous one; two in a row would loop forever.
    #[error("two consecutive zero quotients in the absorption loop (state {state}, digit {digit})")]
    ZeroQuotientRun { state: String, digit: u64 },

    /// No (preperiod, period) pair explains the successor pattern of a
    /// state within the probe budget.
    #[error("no eventual periodicity found for state {state} within j_max = {j_max}")]
    PeriodicityNotFound { state: String, j_max: u64 },

    /// A successor escaped the enumerated state set, i.e. the set is not
    /// closed under the step relation.
    #[error("successor {successor} of state {state} is outside the enumerated set for D = {d}")]
    ClosureViolation {
        state: String,
        successor: String,
        d: u64,
    },

    /// An emitted digit does not fit the digit word.
    #[error("digit {0} does not fit in 64 bits")]
    DigitOverflow(String),

    /// A head term does not fit the head word.
    #[error("head term {0} does not fit in 64 bits")]
    HeadOverflow(String),

    /// Digits must be >= 1.
    #[error("invalid digit {0}: tail digits must be >= 1")]
    InvalidDigit(u64),

    /// Malformed `cfd1` input or a malformed CLI argument.
    #[error("format error: {0}")]
    Format(String),

    /// An iterative numerical procedure failed to converge.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// A machine-checked identity failed. This is a bug, never a user
    /// error; the message carries enough context to reproduce it.
    #[error("internal inconsistency: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, CfError>;
