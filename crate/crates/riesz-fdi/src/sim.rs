//! Scenario simulation: the faulty spectral plant, the detection filters,
//! noise injection, Monte-Carlo thresholds and the detection logic.
//!
//! The integrator is modal: every plant mode (and every structural filter
//! coordinate) advances by the exact matrix exponential of its block with
//! zero-order-hold forcing,
//!
//! ```text
//!     x_k(t+dt) = e^{B_k dt} x_k(t) + (∫₀^dt e^{B_k s} ds) w_k(t),
//! ```
//!
//! so piecewise-constant inputs and step faults are integrated without local
//! truncation error. The dense filter core advances by one exponential pair
//! of its closed-loop matrix. Process noise enters per mode coefficient as
//! the increment `√(variance·dt)·N(0,1)` (Euler–Maruyama for the modal
//! Ornstein–Uhlenbeck equations); measurement noise is sampled per output and
//! step as `√(variance·dt)·N(0,1)`, the same discretization read as
//! band-limited white noise of the declared intensity.
//!
//! One approximation remains: a filter with a nonzero output gain `E` sees
//! `y(t)` sampled zero-order-hold, so its coupling to the plant is exact only
//! at the samples where `y` is constant. [`simulate_joint`] removes that
//! error by co-propagating plant and filters through one joint exponential;
//! it is the reference integrator for decoupling verification. Filters with
//! `E = 0` (the reaction–diffusion example ships one) are exact on the modal
//! path already.
//!
//! Simulation truncates every family at `sim_modes`; plant and filters use
//! the same cutoff, so residual cancellations hold on the truncated model
//! exactly rather than up to a tail estimate.

// `f64` float math lives in std; route through `num_traits::Float` (libm)
// so the crate stays `no_std`. Inherent methods shadow these under test builds.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::BTreeSet;
use alloc::{format, vec, vec::Vec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::linalg;
use crate::spectral::{ModeKey, RieszSpectralSystem};
use crate::synthesis::DetectionFilter;

// ---------------------------------------------------------------------------
// Scenario description.
// ---------------------------------------------------------------------------

/// Time profile of one fault occurrence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultProfile {
    /// Full severity from the onset on.
    Step,
    /// Linear rise to full severity over `rise` seconds.
    Ramp { rise: f64 },
}

/// One fault occurrence: `f_i(t) = severity · profile(t − onset)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultEvent {
    pub fault: usize,
    pub onset: f64,
    pub severity: f64,
    pub profile: FaultProfile,
}

/// Deterministic input channel `u_j(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSignal {
    Constant(f64),
    /// Right-continuous staircase: `values[i]` from `times[i]` on, `0`
    /// before `times[0]`.
    PiecewiseConstant { times: Vec<f64>, values: Vec<f64> },
}

impl InputSignal {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::PiecewiseConstant { times, values } => times
                .iter()
                .rposition(|s| *s <= t)
                .map_or(0.0, |i| values[i]),
        }
    }
}

/// A complete simulation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Horizon `T` in seconds.
    pub horizon: f64,
    /// Step `dt` in seconds.
    pub dt: f64,
    /// One signal per system input.
    pub inputs: Vec<InputSignal>,
    pub faults: Vec<FaultEvent>,
    /// Process noise variance per mode family.
    pub process_noise: Vec<f64>,
    /// Measurement noise variance per output.
    pub measurement_noise: Vec<f64>,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self, sys: &RieszSpectralSystem) -> Result<()> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::Validation(format!("step dt = {} must be > 0", self.dt)));
        }
        if !self.horizon.is_finite() || self.horizon < 0.0 {
            return Err(Error::Validation(format!(
                "horizon T = {} must be finite and ≥ 0",
                self.horizon
            )));
        }
        if self.inputs.len() != sys.inputs.len() {
            return Err(Error::Dimension(format!(
                "{} input signals for {} input channels",
                self.inputs.len(),
                sys.inputs.len()
            )));
        }
        for sig in &self.inputs {
            if let InputSignal::PiecewiseConstant { times, values } = sig {
                if times.len() != values.len() {
                    return Err(Error::Dimension(
                        "piecewise input: times and values differ in length".into(),
                    ));
                }
                if times.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::Validation(
                        "piecewise input: switch times must be sorted".into(),
                    ));
                }
            }
        }
        for ev in &self.faults {
            if ev.fault >= sys.faults.len() {
                return Err(Error::Dimension(format!(
                    "fault event references fault {} of {}",
                    ev.fault,
                    sys.faults.len()
                )));
            }
            if !(0.0..=self.horizon).contains(&ev.onset) {
                return Err(Error::Validation(format!(
                    "fault onset {} outside [0, {}]",
                    ev.onset, self.horizon
                )));
            }
            if !ev.severity.is_finite() {
                return Err(Error::Validation("fault severity must be finite".into()));
            }
            if let FaultProfile::Ramp { rise } = ev.profile {
                if !rise.is_finite() || rise <= 0.0 {
                    return Err(Error::Validation(format!(
                        "ramp rise time {rise} must be > 0"
                    )));
                }
            }
        }
        if self.process_noise.len() != sys.families.len() {
            return Err(Error::Dimension(format!(
                "{} process variances for {} families",
                self.process_noise.len(),
                sys.families.len()
            )));
        }
        if self.measurement_noise.len() != sys.n_outputs() {
            return Err(Error::Dimension(format!(
                "{} measurement variances for {} outputs",
                self.measurement_noise.len(),
                sys.n_outputs()
            )));
        }
        if self
            .process_noise
            .iter()
            .chain(&self.measurement_noise)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::Validation("noise variances must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Same scenario without fault events (threshold calibration runs).
    pub fn healthy(&self) -> Self {
        let mut s = self.clone();
        s.faults.clear();
        s
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seed = seed;
        s
    }

    /// Number of steps; the grid has `n_steps() + 1` samples.
    pub fn n_steps(&self) -> usize {
        let raw = self.horizon / self.dt;
        if (raw - raw.round()).abs() < 1e-6 {
            raw.round() as usize
        } else {
            raw.floor() as usize
        }
    }

    /// Superposed fault levels at time `t` (one entry per system fault).
    pub fn fault_levels(&self, n_faults: usize, t: f64) -> DVector<f64> {
        let mut f = DVector::zeros(n_faults);
        for ev in &self.faults {
            if t < ev.onset {
                continue;
            }
            let shape = match ev.profile {
                FaultProfile::Step => 1.0,
                FaultProfile::Ramp { rise } => ((t - ev.onset) / rise).min(1.0),
            };
            f[ev.fault] += ev.severity * shape;
        }
        f
    }

    fn input_values(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|s| s.eval(t)))
    }
}

// ---------------------------------------------------------------------------
// Traces, thresholds, decisions.
// ---------------------------------------------------------------------------

/// Plant-side record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    pub time: Vec<f64>,
    /// Measured outputs per sample (`y` includes measurement noise).
    pub outputs: Vec<Vec<f64>>,
    /// Euclidean norm of the truncated modal state per sample.
    pub state_norm: Vec<f64>,
}

/// Residual magnitude of one filter along a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTrace {
    /// Fault the generating filter targets.
    pub fault: usize,
    pub time: Vec<f64>,
    /// `‖r(t)‖` per sample.
    pub magnitude: Vec<f64>,
    /// Threshold used by the last detection pass, if any.
    pub threshold: Option<f64>,
    /// First time from which the magnitude exceeds the threshold for the
    /// configured number of consecutive samples.
    pub detection: Option<f64>,
}

/// Per-filter thresholds from healthy Monte-Carlo runs (max over runs and
/// samples).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet {
    pub thresholds: Vec<f64>,
    pub runs: u32,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDecision {
    pub fault: usize,
    pub threshold: f64,
    pub detection: Option<f64>,
}

/// Outcome of the detection logic over a set of traces.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTable {
    pub decisions: Vec<FilterDecision>,
    /// Faults whose filters fired, ascending.
    pub isolated: Vec<usize>,
}

// ---------------------------------------------------------------------------
// Precomputed models.
// ---------------------------------------------------------------------------

/// Block-diagonal exponential scheme over a list of mode blocks.
struct ModalScheme {
    keys: Vec<ModeKey>,
    offsets: Vec<usize>,
    dims: Vec<usize>,
    n: usize,
    /// `(e^{B dt}, ∫₀^dt e^{B s} ds)` per block.
    phis: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

impl ModalScheme {
    fn new(sys: &RieszSpectralSystem, keys: Vec<ModeKey>, dt: f64) -> Result<Self> {
        let mut offsets = Vec::with_capacity(keys.len());
        let mut dims = Vec::with_capacity(keys.len());
        let mut phis = Vec::with_capacity(keys.len());
        let mut n = 0usize;
        for (f, k) in &keys {
            let fam = &sys.families[*f];
            let dim = fam.block_dim(*k);
            let (phi0, phi1) = linalg::expm_with_integral(&fam.block_matrix(*k), dt)?;
            offsets.push(n);
            dims.push(dim);
            phis.push((phi0, phi1));
            n += dim;
        }
        Ok(Self {
            keys,
            offsets,
            dims,
            n,
            phis,
        })
    }

    /// `x ← Φ₀ x + Φ₁ w`, block by block (no allocation for blocks ≤ 4).
    fn step(&self, x: &mut DVector<f64>, w: &DVector<f64>) {
        for i in 0..self.keys.len() {
            let (off, dim) = (self.offsets[i], self.dims[i]);
            let (phi0, phi1) = &self.phis[i];
            if dim == 1 {
                x[off] = phi0[(0, 0)] * x[off] + phi1[(0, 0)] * w[off];
            } else {
                let mut buf = [0.0f64; 4];
                if dim <= 4 {
                    for r in 0..dim {
                        let mut acc = 0.0;
                        for c in 0..dim {
                            acc += phi0[(r, c)] * x[off + c] + phi1[(r, c)] * w[off + c];
                        }
                        buf[r] = acc;
                    }
                    for r in 0..dim {
                        x[off + r] = buf[r];
                    }
                } else {
                    let xv = x.rows(off, dim).clone_owned();
                    let wv = w.rows(off, dim).clone_owned();
                    let new = phi0 * xv + phi1 * wv;
                    x.rows_mut(off, dim).copy_from(&new);
                }
            }
        }
    }

    /// Dense coefficient matrix of a list of spectral vectors on these
    /// coordinates (raw biorthogonal coefficients, tails evaluated).
    fn densify(&self, cols: &[crate::spectral::SpectralVector]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, cols.len());
        for (j, v) in cols.iter().enumerate() {
            for i in 0..self.keys.len() {
                let (f, k) = self.keys[i];
                let block = v.block_at(f, k, self.dims[i]);
                for (comp, val) in block.iter().enumerate() {
                    m[(self.offsets[i] + comp, j)] = *val;
                }
            }
        }
        m
    }

    /// Output rows: `y = C·x` on raw coordinates (`⟨x, c_j⟩` truncated, Gram
    /// weight folded in).
    fn output_rows(&self, sys: &RieszSpectralSystem) -> DMatrix<f64> {
        let q = sys.n_outputs();
        let mut c = DMatrix::zeros(q, self.n);
        for j in 0..q {
            for i in 0..self.keys.len() {
                let (f, k) = self.keys[i];
                let g = sys.gram(f);
                let block = sys.outputs[j].block_at(f, k, self.dims[i]);
                for (comp, val) in block.iter().enumerate() {
                    c[(j, self.offsets[i] + comp)] = g * val;
                }
            }
        }
        c
    }
}

/// Plant side: truncated modal dynamics plus input/fault/output matrices.
struct PlantModel {
    scheme: ModalScheme,
    b: DMatrix<f64>,
    l: DMatrix<f64>,
    c: DMatrix<f64>,
    /// Per-coordinate noise standard deviation `√(variance_f · dt)`.
    noise_std: DVector<f64>,
}

impl PlantModel {
    fn new(sys: &RieszSpectralSystem, cfg: &PipelineConfig, sc: &Scenario) -> Result<Self> {
        let mut keys = Vec::new();
        for f in 0..sys.families.len() {
            for k in 1..=cfg.sim_modes.max(1) {
                keys.push((f, k));
            }
        }
        let scheme = ModalScheme::new(sys, keys, sc.dt)?;
        let b = scheme.densify(&sys.inputs);
        let l = scheme.densify(&sys.faults);
        let c = scheme.output_rows(sys);
        let mut noise_std = DVector::zeros(scheme.n);
        for i in 0..scheme.keys.len() {
            let (f, _) = scheme.keys[i];
            let sd = (sc.process_noise[f] * sc.dt).sqrt();
            for comp in 0..scheme.dims[i] {
                noise_std[scheme.offsets[i] + comp] = sd;
            }
        }
        Ok(Self {
            scheme,
            b,
            l,
            c,
            noise_std,
        })
    }
}

/// Filter side: structural coordinates (pass-through modes outside the dense
/// core) plus the closed-loop core, with all couplings densified.
struct FilterModel {
    fault: usize,
    scheme: ModalScheme,
    /// Core exponential pair for `F|_core`.
    z_phi: (DMatrix<f64>, DMatrix<f64>),
    n_z: usize,
    /// Coupling of structural coordinates into the core (`n_z × n_s`).
    w: DMatrix<f64>,
    /// Forcing maps: columns act on `u` and `y`.
    g_s: DMatrix<f64>,
    g_z: DMatrix<f64>,
    e_s: DMatrix<f64>,
    e_z: DMatrix<f64>,
    /// Residual readout: `r = h·y − m_s·s − m_z·z`.
    h: DMatrix<f64>,
    m_s: DMatrix<f64>,
    m_z: DMatrix<f64>,
}

impl FilterModel {
    fn new(
        sys: &RieszSpectralSystem,
        cfg: &PipelineConfig,
        filter: &DetectionFilter,
        dt: f64,
    ) -> Result<Self> {
        let core: BTreeSet<ModeKey> = filter.core_keys.iter().cloned().collect();
        let mut keys = Vec::new();
        for (f, sel) in filter.p.passthrough() {
            for k in sel.iter_window(cfg.sim_modes.max(1)) {
                if !core.contains(&(*f, k)) {
                    keys.push((*f, k));
                }
            }
        }
        keys.sort_unstable();
        let scheme = ModalScheme::new(sys, keys, dt)?;
        let n_s = scheme.n;
        let n_z = filter.f_core.nrows();
        let nb = filter.p.block_dim();
        let z_phi = if n_z > 0 {
            linalg::expm_with_integral(&filter.f_core, dt)?
        } else {
            (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
        };

        // Structural outputs seen by the filter: h·C on the structural
        // coordinates; they both read the residual and force the core.
        let c_s = scheme.output_rows(sys);
        let h = filter.h.clone();
        let m_s = &h * &c_s;

        // Core coupling: the observer gain reacts to `M` restricted to the
        // structural part, and the transversal block is forced by the
        // structural outputs through `κ`.
        let d_core = crate::synthesis::core_gain(sys, &filter.d_o, &filter.core_keys, nb);
        let mut w = &d_core * &m_s;
        if nb > 0 {
            let kc = &filter.a_p.coupling * &c_s;
            let mut rows = w.view_mut((n_z - nb, 0), (nb, n_s));
            rows += kc;
        }

        // M on the core coordinates: structural core keys are normalized
        // columns of H·C; the block part is the compressed functional.
        let mut m_z = DMatrix::zeros(h.nrows(), n_z);
        if !filter.core_keys.is_empty() {
            let hc = &h * sys.dense_outputs_on(&filter.core_keys);
            m_z.view_mut((0, 0), (h.nrows(), n_z - nb)).copy_from(&hc);
        }
        if nb > 0 {
            m_z.view_mut((0, n_z - nb), (h.nrows(), nb))
                .copy_from(&filter.m.block);
        }

        // Forcing maps from the quotient-vector columns of G and E.
        let split = |cols: &[crate::subspace::QuotientVector]| -> (DMatrix<f64>, DMatrix<f64>) {
            let structurals: Vec<crate::spectral::SpectralVector> =
                cols.iter().map(|c| c.structural.clone()).collect();
            let s_mat = scheme.densify(&structurals);
            let mut z_mat = DMatrix::zeros(n_z, cols.len());
            for (j, col) in cols.iter().enumerate() {
                let mut off = 0usize;
                for (f, k) in &filter.core_keys {
                    let bd = sys.families[*f].block_dim(*k);
                    let g = sys.gram(*f).sqrt();
                    for (comp, val) in col.structural.block_at(*f, *k, bd).iter().enumerate() {
                        z_mat[(off + comp, j)] = val * g;
                    }
                    off += bd;
                }
                if nb > 0 && col.block.len() == nb {
                    z_mat.view_mut((n_z - nb, j), (nb, 1)).copy_from(&col.block);
                }
            }
            (s_mat, z_mat)
        };
        let (g_s, g_z) = split(&filter.g);
        let (e_s, e_z) = split(&filter.e);

        Ok(Self {
            fault: filter.fault,
            scheme,
            z_phi,
            n_z,
            w,
            g_s,
            g_z,
            e_s,
            e_z,
            h,
            m_s,
            m_z,
        })
    }

    /// Advance `(s, z)` one step under held `(u, y)`.
    fn step(&self, s: &mut DVector<f64>, z: &mut DVector<f64>, u: &DVector<f64>, y: &DVector<f64>) {
        if self.n_z > 0 {
            let mut fz = &self.w * &*s;
            if !u.is_empty() {
                fz += &self.g_z * u;
            }
            fz -= &self.e_z * y;
            *z = &self.z_phi.0 * &*z + &self.z_phi.1 * fz;
        }
        if self.scheme.n > 0 {
            let mut fs = -(&self.e_s * y);
            if !u.is_empty() {
                fs += &self.g_s * u;
            }
            self.scheme.step(s, &fs);
        }
    }

    fn residual(&self, y: &DVector<f64>, s: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let mut r = &self.h * y;
        if self.scheme.n > 0 {
            r -= &self.m_s * s;
        }
        if self.n_z > 0 {
            r -= &self.m_z * z;
        }
        r
    }
}

fn check_distinct_faults(filters: &[DetectionFilter]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for f in filters {
        if !seen.insert(f.fault) {
            return Err(Error::Validation(format!(
                "two filters target fault {}",
                f.fault
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Modal runs.
// ---------------------------------------------------------------------------

struct RunRecord {
    time: Vec<f64>,
    outputs: Vec<Vec<f64>>,
    state_norm: Vec<f64>,
    magnitudes: Vec<Vec<f64>>,
}

fn run_modal(
    sys: &RieszSpectralSystem,
    plant: &PlantModel,
    fmodels: &[FilterModel],
    sc: &Scenario,
    record_state: bool,
) -> Result<RunRecord> {
    let steps = sc.n_steps();
    let q = sys.n_outputs();
    let p = sys.faults.len();
    let mut rng = ChaCha12Rng::seed_from_u64(sc.seed);
    let meas_std: Vec<f64> = sc
        .measurement_noise
        .iter()
        .map(|v| (v * sc.dt).sqrt())
        .collect();

    let mut x: DVector<f64> = DVector::zeros(plant.scheme.n);
    let mut fstate: Vec<(DVector<f64>, DVector<f64>)> = fmodels
        .iter()
        .map(|m| (DVector::zeros(m.scheme.n), DVector::zeros(m.n_z)))
        .collect();

    let mut time = Vec::with_capacity(steps + 1);
    let mut outputs = if record_state { Vec::with_capacity(steps + 1) } else { Vec::new() };
    let mut state_norm = if record_state { Vec::with_capacity(steps + 1) } else { Vec::new() };
    let mut magnitudes = vec![Vec::with_capacity(steps + 1); fmodels.len()];

    let measure = |x: &DVector<f64>, rng: &mut ChaCha12Rng| -> DVector<f64> {
        let mut y = &plant.c * x;
        for j in 0..q {
            if meas_std[j] > 0.0 {
                y[j] += meas_std[j] * rng.sample::<f64, _>(StandardNormal);
            }
        }
        y
    };

    let mut y = measure(&x, &mut rng);
    for i in 0..=steps {
        let t = i as f64 * sc.dt;
        time.push(t);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("output at t = {t:.4}")));
        }
        for (fi, (fm, (s, z))) in fmodels.iter().zip(&fstate).enumerate() {
            let mag = fm.residual(&y, s, z).norm();
            if !mag.is_finite() {
                return Err(Error::NonFinite(format!(
                    "residual for fault {} at t = {t:.4}",
                    fm.fault
                )));
            }
            magnitudes[fi].push(mag);
        }
        if record_state {
            outputs.push(y.iter().copied().collect());
            state_norm.push(x.norm());
        }
        if i == steps {
            break;
        }

        // Advance over [t, t+dt) with forcing held at t.
        let u = sc.input_values(t);
        let f = sc.fault_levels(p, t);
        let mut wf: DVector<f64> = DVector::zeros(plant.scheme.n);
        if !sys.inputs.is_empty() {
            wf += &plant.b * &u;
        }
        if p > 0 {
            wf += &plant.l * &f;
        }
        for (fm, (s, z)) in fmodels.iter().zip(fstate.iter_mut()) {
            fm.step(s, z, &u, &y);
        }
        plant.scheme.step(&mut x, &wf);
        for c in 0..plant.scheme.n {
            if plant.noise_std[c] > 0.0 {
                x[c] += plant.noise_std[c] * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if i % 64 == 0 && x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("plant state at t = {t:.4}")));
        }
        y = measure(&x, &mut rng);
    }
    Ok(RunRecord {
        time,
        outputs,
        state_norm,
        magnitudes,
    })
}

/// Simulate the plant under `scenario` and run every filter alongside it.
///
/// Errors with [`Error::NonFinite`] when a coefficient overflows (an unstable
/// configuration run without a certificate).
pub fn simulate(
    sys: &RieszSpectralSystem,
    cfg: &PipelineConfig,
    filters: &[DetectionFilter],
    scenario: &Scenario,
) -> Result<(StateTrace, Vec<ResidualTrace>)> {
    scenario.validate(sys)?;
    check_distinct_faults(filters)?;
    let plant = PlantModel::new(sys, cfg, scenario)?;
    let fmodels: Vec<FilterModel> = filters
        .iter()
        .map(|f| FilterModel::new(sys, cfg, f, scenario.dt))
        .collect::<Result<_>>()?;
    let rec = run_modal(sys, &plant, &fmodels, scenario, true)?;
    Ok(package(rec, &fmodels))
}

fn package(rec: RunRecord, fmodels: &[FilterModel]) -> (StateTrace, Vec<ResidualTrace>) {
    let state = StateTrace {
        time: rec.time.clone(),
        outputs: rec.outputs,
        state_norm: rec.state_norm,
    };
    let traces = fmodels
        .iter()
        .zip(rec.magnitudes)
        .map(|(fm, magnitude)| ResidualTrace {
            fault: fm.fault,
            time: rec.time.clone(),
            magnitude,
            threshold: None,
            detection: None,
        })
        .collect();
    (state, traces)
}

/// Residual maxima of one healthy run (threshold calibration unit; the
/// Monte-Carlo loop and the CLI's parallel driver both reduce over this).
pub fn healthy_run_maxima(
    sys: &RieszSpectralSystem,
    cfg: &PipelineConfig,
    filters: &[DetectionFilter],
    scenario: &Scenario,
    seed: u64,
) -> Result<Vec<f64>> {
    let sc = scenario.healthy().with_seed(seed);
    sc.validate(sys)?;
    check_distinct_faults(filters)?;
    let plant = PlantModel::new(sys, cfg, &sc)?;
    let fmodels: Vec<FilterModel> = filters
        .iter()
        .map(|f| FilterModel::new(sys, cfg, f, sc.dt))
        .collect::<Result<_>>()?;
    let rec = run_modal(sys, &plant, &fmodels, &sc, false)?;
    Ok(rec
        .magnitudes
        .iter()
        .map(|m| m.iter().fold(0.0f64, |a, b| a.max(*b)))
        .collect())
}

/// Thresholds as the maximum healthy residual over `m` Monte-Carlo runs with
/// seeds `base_seed .. base_seed + m`.
pub fn monte_carlo_thresholds(
    sys: &RieszSpectralSystem,
    cfg: &PipelineConfig,
    filters: &[DetectionFilter],
    scenario: &Scenario,
    m: u32,
    base_seed: u64,
) -> Result<ThresholdSet> {
    if m == 0 {
        return Err(Error::Validation("threshold estimation needs M ≥ 1".into()));
    }
    let sc = scenario.healthy();
    sc.validate(sys)?;
    check_distinct_faults(filters)?;
    let plant = PlantModel::new(sys, cfg, &sc)?;
    let fmodels: Vec<FilterModel> = filters
        .iter()
        .map(|f| FilterModel::new(sys, cfg, f, sc.dt))
        .collect::<Result<_>>()?;
    let mut thresholds = vec![0.0f64; filters.len()];
    for run in 0..m {
        let seeded = sc.with_seed(base_seed + u64::from(run));
        let rec = run_modal(sys, &plant, &fmodels, &seeded, false)?;
        for (th, mags) in thresholds.iter_mut().zip(&rec.magnitudes) {
            for v in mags {
                *th = th.max(*v);
            }
        }
    }
    Ok(ThresholdSet {
        thresholds,
        runs: m,
        base_seed,
    })
}

/// Apply the persistence detection rule and annotate the traces.
///
/// A filter fires at the first sample from which its magnitude exceeds the
/// threshold for `n_persist` consecutive samples; the reported detection time
/// is that first sample's time.
pub fn detect(
    traces: &mut [ResidualTrace],
    thresholds: &ThresholdSet,
    n_persist: u32,
) -> Result<DecisionTable> {
    if n_persist == 0 {
        return Err(Error::Validation("persistence must be ≥ 1".into()));
    }
    if traces.len() != thresholds.thresholds.len() {
        return Err(Error::Dimension(format!(
            "{} traces against {} thresholds",
            traces.len(),
            thresholds.thresholds.len()
        )));
    }
    let np = n_persist as usize;
    let mut decisions = Vec::with_capacity(traces.len());
    let mut isolated = Vec::new();
    for (trace, &th) in traces.iter_mut().zip(&thresholds.thresholds) {
        let mut detection = None;
        let mut run = 0usize;
        for (i, mag) in trace.magnitude.iter().enumerate() {
            if *mag > th {
                run += 1;
                if run == np {
                    detection = Some(trace.time[i + 1 - np]);
                    break;
                }
            } else {
                run = 0;
            }
        }
        trace.threshold = Some(th);
        trace.detection = detection;
        if detection.is_some() {
            isolated.push(trace.fault);
        }
        decisions.push(FilterDecision {
            fault: trace.fault,
            threshold: th,
            detection,
        });
    }
    isolated.sort_unstable();
    Ok(DecisionTable {
        decisions,
        isolated,
    })
}

// ---------------------------------------------------------------------------
// Joint exact integrator (verification path).
// ---------------------------------------------------------------------------

/// Co-propagate plant and filters through one joint matrix exponential.
///
/// This removes the zero-order-hold sampling of `y` in the filter coupling,
/// so residual decoupling holds to round-off even for filters with `E ≠ 0`.
/// Intended for verification runs; cost grows with the square of the joint
/// dimension.
pub fn simulate_joint(
    sys: &RieszSpectralSystem,
    cfg: &PipelineConfig,
    filters: &[DetectionFilter],
    scenario: &Scenario,
) -> Result<(StateTrace, Vec<ResidualTrace>)> {
    scenario.validate(sys)?;
    check_distinct_faults(filters)?;
    let plant = PlantModel::new(sys, cfg, scenario)?;
    let fmodels: Vec<FilterModel> = filters
        .iter()
        .map(|f| FilterModel::new(sys, cfg, f, scenario.dt))
        .collect::<Result<_>>()?;

    let n_x = plant.scheme.n;
    let offsets: Vec<usize> = {
        let mut o = vec![n_x];
        for fm in &fmodels {
            o.push(o.last().unwrap() + fm.scheme.n + fm.n_z);
        }
        o
    };
    let n_tot = *offsets.last().unwrap();

    // Joint generator: plant block-diagonal; each filter couples to the
    // plant through −E·C and internally through its own structure.
    let mut j = DMatrix::zeros(n_tot, n_tot);
    for i in 0..plant.scheme.keys.len() {
        let (f, k) = plant.scheme.keys[i];
        let bm = sys.families[f].block_matrix(k);
        j.view_mut(
            (plant.scheme.offsets[i], plant.scheme.offsets[i]),
            (plant.scheme.dims[i], plant.scheme.dims[i]),
        )
        .copy_from(&bm);
    }
    for (fi, fm) in fmodels.iter().enumerate() {
        let o = offsets[fi];
        let (ns, nz) = (fm.scheme.n, fm.n_z);
        for i in 0..fm.scheme.keys.len() {
            let (f, k) = fm.scheme.keys[i];
            let bm = sys.families[f].block_matrix(k);
            j.view_mut(
                (o + fm.scheme.offsets[i], o + fm.scheme.offsets[i]),
                (fm.scheme.dims[i], fm.scheme.dims[i]),
            )
            .copy_from(&bm);
        }
        if ns > 0 {
            j.view_mut((o, 0), (ns, n_x)).copy_from(&(-(&fm.e_s * &plant.c)));
        }
        if nz > 0 {
            j.view_mut((o + ns, 0), (nz, n_x))
                .copy_from(&(-(&fm.e_z * &plant.c)));
            if ns > 0 {
                j.view_mut((o + ns, o), (nz, ns)).copy_from(&fm.w);
            }
            // F|_core already contains the in-core closed loop.
            let fcore = &filters[fi].f_core;
            j.view_mut((o + ns, o + ns), (nz, nz)).copy_from(fcore);
        }
    }
    let (phi, psi) = linalg::expm_with_integral(&j, scenario.dt)?;

    let steps = scenario.n_steps();
    let q = sys.n_outputs();
    let p = sys.faults.len();
    let mut rng = ChaCha12Rng::seed_from_u64(scenario.seed);
    let meas_std: Vec<f64> = scenario
        .measurement_noise
        .iter()
        .map(|v| (v * scenario.dt).sqrt())
        .collect();

    let mut state: DVector<f64> = DVector::zeros(n_tot);
    let mut time = Vec::with_capacity(steps + 1);
    let mut outputs = Vec::with_capacity(steps + 1);
    let mut state_norm = Vec::with_capacity(steps + 1);
    let mut magnitudes = vec![Vec::with_capacity(steps + 1); fmodels.len()];

    let measure = |state: &DVector<f64>, rng: &mut ChaCha12Rng| -> DVector<f64> {
        let x = state.rows(0, n_x).clone_owned();
        let mut y = &plant.c * x;
        for jdx in 0..q {
            if meas_std[jdx] > 0.0 {
                y[jdx] += meas_std[jdx] * rng.sample::<f64, _>(StandardNormal);
            }
        }
        y
    };

    let mut y = measure(&state, &mut rng);
    for i in 0..=steps {
        let t = i as f64 * scenario.dt;
        time.push(t);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("output at t = {t:.4}")));
        }
        for (fi, fm) in fmodels.iter().enumerate() {
            let s = state.rows(offsets[fi], fm.scheme.n).clone_owned();
            let z = state.rows(offsets[fi] + fm.scheme.n, fm.n_z).clone_owned();
            let mag = fm.residual(&y, &s, &z).norm();
            if !mag.is_finite() {
                return Err(Error::NonFinite(format!(
                    "residual for fault {} at t = {t:.4}",
                    fm.fault
                )));
            }
            magnitudes[fi].push(mag);
        }
        outputs.push(y.iter().copied().collect());
        state_norm.push(state.rows(0, n_x).norm());
        if i == steps {
            break;
        }

        let u = scenario.input_values(t);
        let f = scenario.fault_levels(p, t);
        let mut force: DVector<f64> = DVector::zeros(n_tot);
        {
            let mut fx = force.rows_mut(0, n_x);
            if !sys.inputs.is_empty() {
                fx += &plant.b * &u;
            }
            if p > 0 {
                fx += &plant.l * &f;
            }
        }
        // Measurement noise enters the filters as a held disturbance on y.
        let v = {
            let x = state.rows(0, n_x).clone_owned();
            &y - &plant.c * x
        };
        for (fi, fm) in fmodels.iter().enumerate() {
            let o = offsets[fi];
            if fm.scheme.n > 0 {
                let mut fs = force.rows_mut(o, fm.scheme.n);
                if !sys.inputs.is_empty() {
                    fs += &fm.g_s * &u;
                }
                fs -= &fm.e_s * &v;
            }
            if fm.n_z > 0 {
                let mut fz = force.rows_mut(o + fm.scheme.n, fm.n_z);
                if !sys.inputs.is_empty() {
                    fz += &fm.g_z * &u;
                }
                fz -= &fm.e_z * &v;
            }
        }
        state = &phi * state + &psi * force;
        for c in 0..n_x {
            if plant.noise_std[c] > 0.0 {
                state[c] += plant.noise_std[c] * rng.sample::<f64, _>(StandardNormal);
            }
        }
        y = measure(&state, &mut rng);
    }

    let rec = RunRecord {
        time,
        outputs,
        state_norm,
        magnitudes,
    };
    Ok(package(rec, &fmodels))
}
