//! Error type shared by every layer of the crate.

use alloc::string::String;
use thiserror::Error;

/// Errors raised by validation, subspace computations, synthesis and
/// simulation.
///
/// The variants mirror the failure modes of the underlying theory: tails that
/// leave the generator's domain, kernel memberships that cannot be certified
/// beyond the inspection window, and the rank condition required when solving
/// for a friend of a conditioned-invariant subspace.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The system data does not describe a regular Riesz-spectral system.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A power-law tail, pushed through the generator, is no longer square
    /// summable, i.e. the vector does not belong to `dom(A)`.
    #[error("unbounded tail: {0}")]
    UnboundedTail(String),

    /// An operation required a vector inside `dom(A)` but received one whose
    /// tail (or iterate) leaves the domain.
    #[error("domain violation: {0}")]
    DomainViolation(String),

    /// The output map restricted to the transversal part of a
    /// conditioned-invariant subspace is rank deficient, so no friend exists.
    #[error("singular C|W: {0}")]
    SingularCw(String),

    /// A kernel/zero-set membership could not be certified beyond the
    /// inspection window from the tail rules alone.
    #[error("unverified tail: {0}")]
    UnverifiedTail(String),

    /// An iteration (subspace recursion, Schur/SVD sweep, ...) failed to
    /// reach stationarity within its budget.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// Resolvent evaluation at a point within tolerance of the spectrum.
    #[error("spectrum hit: {0}")]
    SpectrumHit(String),

    /// Observer/filter synthesis is infeasible (undetectable unstable modes,
    /// failed pole placement, ...).
    #[error("synthesis failed: {0}")]
    Synthesis(String),

    /// A fault signature intersects its own unobservability subspace, so no
    /// residual can isolate it.
    #[error("fault not isolable: {0}")]
    NotIsolable(String),

    /// Mismatched dimensions or indices in the supplied data.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A simulated coefficient left the representable range (an unstable
    /// configuration run without a certificate).
    #[error("non-finite state: {0}")]
    NonFinite(String),

    /// The requested operation is outside the representable algebra
    /// (e.g. a resolvent applied to an infinite tail).
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Convenience alias used across the crate.
pub type Result<T> = core::result::Result<T, Error>;
