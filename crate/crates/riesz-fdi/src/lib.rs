//! Geometric fault detection and isolation for regular Riesz-spectral systems.
//!
//! This crate implements the structural side of observer-based fault diagnosis
//! for infinite-dimensional linear systems whose generator is diagonalizable
//! over a Riesz basis of (generalized) eigenvectors,
//!
//! ```text
//!     A x = Σ_f Σ_k λ_k^f ⟨x, ψ_k^f⟩ φ_k^f ,
//! ```
//!
//! with finitely many non-simple eigenvalues. States, output functionals and
//! fault signatures are stored as coefficient sequences against that basis
//! (finite entries plus analytic power-law tails), so the key invariant
//! subspaces — the unobservable subspace, minimal conditioned-invariant
//! subspaces and minimal unobservability subspaces — can be represented
//! exactly as closed spans of sub-eigenspaces plus a finite-dimensional part,
//! instead of through ad-hoc modal truncation.
//!
//! On top of the subspace layer the crate synthesizes residual generators
//! (detection filters) that decouple all but one fault, certifies their error
//! dynamics, and simulates plant + filter banks with exact per-mode
//! integration for threshold calibration and detection studies.
//!
//! The crate is `no_std` (with `alloc`); file formats and the command line
//! front end live in the companion `riesz-fdi-cli` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod config;
pub mod error;
pub mod invariant;
pub mod linalg;
pub mod sim;
pub mod spectral;
pub mod subspace;
pub mod synthesis;

pub use config::{PipelineConfig, Tolerances};
pub use error::{Error, Result};
pub use invariant::{
    a_unobservable_subspace, check_fdi_necessary, check_isolability, compute_w_ell,
    friend_operator, is_controlled_invariant_dual, is_t_conditioned_invariant,
    min_conditioned_invariant, min_unobservability_subspace, unobservable_subspace,
    ConditionedInvariant, FriendOperator, InvarianceVerdict, SolvabilityReport,
    UnobservabilityResult,
};
pub use sim::{
    detect, healthy_run_maxima, monte_carlo_thresholds, simulate, simulate_joint, DecisionTable,
    FaultEvent, FaultProfile, FilterDecision, InputSignal, ResidualTrace, Scenario, StateTrace,
    ThresholdSet,
};
pub use synthesis::{
    build_detection_filter, observer_gain, quotient_spectrum, quotient_system,
    synthesize_filter, verify_error_dynamics, CertificateKind, DetectionFilter, ObserverGain,
    ObserverStrategy, QuotientOperator, QuotientOutputMap, StabilityCertificate,
};
pub use spectral::{
    EigenvalueRule, ModeFamily, RieszSpectralSystem, SpectralVector, Tail, TailTerm,
    ValidationReport,
};
pub use subspace::{IndexSelection, QuotientMap, StructuredSubspace};
