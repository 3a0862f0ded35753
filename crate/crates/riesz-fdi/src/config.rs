//! Numeric tolerances and pipeline-wide configuration.

/// Tolerances used by the numeric kernels.
///
/// All geometric decisions (zero tests, rank cuts, eigenvalue coincidence)
/// funnel through these values so that a pipeline run is reproducible and the
/// acceptance tests can pin them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Absolute tolerance for inner-product zero tests.
    pub inner: f64,
    /// Orthonormality defect allowed in computed bases.
    pub orth: f64,
    /// Two eigenvalues closer than this are treated as coincident.
    pub eig: f64,
    /// Relative singular-value cutoff for rank decisions.
    pub rank_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            inner: 1e-9,
            orth: 1e-10,
            eig: 1e-9,
            rank_rel: 1e-9,
        }
    }
}

/// Configuration shared by analysis, synthesis and simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Numeric tolerances.
    pub tol: Tolerances,
    /// Per-family mode window used when certifying kernels and zero sets.
    pub analysis_modes: u32,
    /// Per-family truncation used by the simulator.
    pub sim_modes: u32,
    /// Required decay margin for filter error dynamics: every closed-loop
    /// eigenvalue must satisfy `Re λ ≤ -stability_margin`.
    pub stability_margin: f64,
    /// Consecutive samples above threshold required to latch a detection.
    pub persistence: u32,
    /// Accept memberships whose tails cannot be certified beyond the window
    /// (they are reported instead of raising [`crate::Error::UnverifiedTail`]).
    pub allow_unverified_tails: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            analysis_modes: 200,
            sim_modes: 50,
            stability_margin: 0.05,
            persistence: 3,
            allow_unverified_tails: false,
        }
    }
}
