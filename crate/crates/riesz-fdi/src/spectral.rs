//! Mode families, coefficient vectors with analytic tails, and the regular
//! Riesz-spectral system type.
//!
//! A system is described by finitely many *mode families*. Family `f` carries
//! an eigenvalue rule `λ_k = ρ_f(k)` for `k = 1, 2, …` and a uniform Gram
//! scale `g_f = ⟨φ_k^f, φ_k^f⟩`; the basis is orthogonal across modes and
//! families. Finitely many modes may be non-simple: either complex-conjugate
//! pairs (realified into 2×2 rotation blocks) or Jordan chains of generalized
//! eigenvectors.
//!
//! Vectors are coefficient sequences against this basis: a finite set of
//! explicit entries plus, per family, an optional analytic tail
//! `Σ_i c_i k^{-p_i}` active for `k ≥ k₀`. Entries and tails are additive, so
//! the representation is closed under linear combinations, under the
//! generator (polynomial rules multiply tails term by term) and under
//! restriction to co-finite mode selections.

// `f64` float math lives in std; route through `num_traits::Float` (libm)
// so the crate stays `no_std`. Inherent methods shadow these under test builds.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::{format, vec, vec::Vec};
use nalgebra::{DMatrix, DVector};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::linalg;

/// Identifies a mode: `(family index, mode index k ≥ 1)`.
pub type ModeKey = (usize, u32);

// ---------------------------------------------------------------------------
// Eigenvalue rules.
// ---------------------------------------------------------------------------

/// Closed-form eigenvalue rule `k ↦ λ_k` for one family.
#[derive(Debug, Clone, PartialEq)]
pub enum EigenvalueRule {
    /// `λ_k = Σ_i coeffs[i] kⁱ` (lowest order first).
    Poly(Vec<f64>),
    /// `λ_k = offset + scale · k²` — the workhorse for diffusion-type
    /// operators, kept as its own variant so file formats stay readable.
    AffineKSq { offset: f64, scale: f64 },
    /// `λ_k = -scale · ln k`. Diverges too slowly to satisfy the separation
    /// certificate; accepted by the parser so validation can reject it with
    /// a meaningful report.
    NegLog { scale: f64 },
}

impl EigenvalueRule {
    /// Evaluate the rule at mode index `k`.
    pub fn eval(&self, k: u32) -> f64 {
        let kf = k as f64;
        match self {
            Self::Poly(c) => {
                let mut acc = 0.0;
                for ci in c.iter().rev() {
                    acc = acc * kf + ci;
                }
                acc
            }
            Self::AffineKSq { offset, scale } => offset + scale * kf * kf,
            Self::NegLog { scale } => -scale * kf.ln(),
        }
    }

    /// Effective polynomial growth degree (the degree of the highest nonzero
    /// coefficient); `None` for non-polynomial rules.
    pub fn degree(&self) -> Option<usize> {
        match self {
            Self::Poly(c) => c
                .iter()
                .enumerate()
                .rev()
                .find(|(_, ci)| **ci != 0.0)
                .map(|(i, _)| i),
            Self::AffineKSq { scale, .. } => Some(if *scale != 0.0 { 2 } else { 0 }),
            Self::NegLog { .. } => None,
        }
    }

    /// Polynomial coefficients (lowest order first), if polynomial.
    pub(crate) fn poly_coeffs(&self) -> Option<Vec<f64>> {
        match self {
            Self::Poly(c) => Some(c.clone()),
            Self::AffineKSq { offset, scale } => Some(vec![*offset, 0.0, *scale]),
            Self::NegLog { .. } => None,
        }
    }

    /// Whether `λ_k → -∞` with a finite supremum, certified from the rule.
    fn sup_re_finite(&self) -> bool {
        match self {
            Self::Poly(c) => match self.degree() {
                None | Some(0) => true,
                Some(d) => c[d] < 0.0,
            },
            Self::AffineKSq { scale, .. } => *scale <= 0.0,
            Self::NegLog { scale } => *scale >= 0.0,
        }
    }

    /// Separation certificate: does `Σ_k 1/d_k²` converge, where `d_k` is the
    /// within-family eigenvalue gap? Rules of growth degree ≥ 2 give gaps
    /// growing like `k^{d-1}`, hence a convergent sum; affine and logarithmic
    /// dispersion do not.
    fn gap_convergent(&self) -> bool {
        match self {
            Self::Poly(_) => self.degree().is_some_and(|d| d >= 2),
            Self::AffineKSq { scale, .. } => *scale != 0.0,
            Self::NegLog { .. } => false,
        }
    }
}

// ---------------------------------------------------------------------------
// Mode families.
// ---------------------------------------------------------------------------

/// One family of modes sharing an eigenvalue rule and a Gram scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeFamily {
    /// Human-readable name used in reports.
    pub label: String,
    /// Rule for the real parts.
    pub re: EigenvalueRule,
    /// Rule for the imaginary parts. When present every mode of the family is
    /// a complex-conjugate pair realified into a 2×2 rotation block.
    pub im: Option<EigenvalueRule>,
    /// Jordan chain lengths (≥ 2) keyed by mode index. Finitely many by
    /// construction; only allowed on real families.
    pub jordan: BTreeMap<u32, u32>,
    /// Reverse the chain coupling (used by adjoint systems).
    pub adjoint_chains: bool,
    /// `⟨φ_k, φ_k⟩`, uniform over the family.
    pub gram_scale: f64,
}

impl ModeFamily {
    /// A real, simple family with unit Gram scale.
    pub fn simple(label: &str, re: EigenvalueRule) -> Self {
        Self {
            label: label.into(),
            re,
            im: None,
            jordan: BTreeMap::new(),
            adjoint_chains: false,
            gram_scale: 1.0,
        }
    }

    /// Real block dimension carried by mode `k`.
    pub fn block_dim(&self, k: u32) -> usize {
        if self.im.is_some() {
            2
        } else {
            self.jordan.get(&k).map_or(1, |m| *m as usize)
        }
    }

    /// `(Re λ_k, Im λ_k)`.
    pub fn eigenvalue(&self, k: u32) -> (f64, f64) {
        (self.re.eval(k), self.im.as_ref().map_or(0.0, |r| r.eval(k)))
    }

    /// Dense action of the generator on the block of mode `k`
    /// (identical in raw and Gram-normalized coordinates because the scale is
    /// uniform inside a block).
    pub fn block_matrix(&self, k: u32) -> DMatrix<f64> {
        let (a, b) = self.eigenvalue(k);
        if self.im.is_some() {
            let (s_re, s_im) = if self.adjoint_chains { (a, -b) } else { (a, b) };
            DMatrix::from_row_slice(2, 2, &[s_re, -s_im, s_im, s_re])
        } else {
            let m = self.block_dim(k);
            DMatrix::from_fn(m, m, |r, c| {
                if r == c {
                    a
                } else if (!self.adjoint_chains && c == r + 1)
                    || (self.adjoint_chains && r == c + 1)
                {
                    1.0
                } else {
                    0.0
                }
            })
        }
    }

    fn is_plain(&self) -> bool {
        self.im.is_none() && self.jordan.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Tails and vectors.
// ---------------------------------------------------------------------------

/// One term `c · k^{-p}` of an analytic tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailTerm {
    pub c: f64,
    pub p: f64,
}

/// Analytic tail `Σ_i c_i k^{-p_i}` active for `k ≥ start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tail {
    pub start: u32,
    pub terms: Vec<TailTerm>,
}

impl Tail {
    /// Single power-law tail `c / k^p` from `start` on.
    pub fn power(start: u32, c: f64, p: f64) -> Self {
        Self {
            start,
            terms: vec![TailTerm { c, p }],
        }
    }

    /// Value at index `k` (zero before `start`).
    pub fn eval(&self, k: u32) -> f64 {
        if k < self.start {
            return 0.0;
        }
        let kf = k as f64;
        self.terms.iter().map(|t| t.c * kf.powf(-t.p)).sum()
    }

    /// Merge equal exponents and drop zero coefficients.
    fn canonicalize(&mut self) {
        self.terms
            .sort_by(|a, b| a.p.partial_cmp(&b.p).unwrap_or(core::cmp::Ordering::Equal));
        let mut merged: Vec<TailTerm> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            match merged.last_mut() {
                Some(last) if (last.p - t.p).abs() < 1e-12 => last.c += t.c,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.c != 0.0);
        self.terms = merged;
    }

    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Decide whether the tail is provably nonzero for every `k > window`,
    /// by dominance of the slowest-decaying term:
    /// `|c₁| k^{-p₁} > Σ_{i≥2} |c_i| k^{-p_i}` for all `k > window` follows
    /// from `|c₁| > Σ_{i≥2} |c_i| window^{p₁-p_i}`.
    ///
    /// Returns `Some(true)` (provably nonzero beyond the window),
    /// `Some(false)` (identically zero), or `None` (cannot certify).
    pub fn nonzero_beyond(&self, window: u32) -> Option<bool> {
        if self.is_zero() {
            return Some(false);
        }
        let w = (window.max(self.start)) as f64;
        let lead = self.terms[0];
        let rest: f64 = self.terms[1..]
            .iter()
            .map(|t| t.c.abs() * w.powf(lead.p - t.p))
            .sum();
        if lead.c.abs() > rest {
            Some(true)
        } else {
            None
        }
    }

    /// Certified bound `|tail(k)| ≥ c · k^{-p}` for every `k > window`, when
    /// one exists: with the slowest-decaying term `c₁ k^{-p₁}` in front,
    /// `|t(k)| ≥ k^{-p₁} (|c₁| - Σ_{i≥2} |c_i| window^{p₁-p_i})` because each
    /// `k^{p₁-p_i}` is decreasing. Returns `(c, p₁)` if `c > 0`.
    pub fn lower_bound_beyond(&self, window: u32) -> Option<(f64, f64)> {
        if self.is_zero() {
            return None;
        }
        let mut terms = self.terms.clone();
        terms.sort_by(|a, b| a.p.partial_cmp(&b.p).unwrap_or(core::cmp::Ordering::Equal));
        let w = (window.max(self.start)) as f64;
        let lead = terms[0];
        let rest: f64 = terms[1..]
            .iter()
            .map(|t| t.c.abs() * w.powf(lead.p - t.p))
            .sum();
        let c = lead.c.abs() - rest;
        (c > 0.0).then_some((c, lead.p))
    }

    /// Bound `|tail(k)| ≤ c · k^{-p}` valid for every `k > window`, with `p`
    /// the slowest-decaying exponent (same windowed-power argument as
    /// [`Self::lower_bound_beyond`], summed instead of subtracted).
    pub fn upper_bound_beyond(&self, window: u32) -> (f64, f64) {
        if self.is_zero() {
            return (0.0, 0.0);
        }
        let mut terms = self.terms.clone();
        terms.sort_by(|a, b| a.p.partial_cmp(&b.p).unwrap_or(core::cmp::Ordering::Equal));
        let w = (window.max(self.start)) as f64;
        let lead_p = terms[0].p;
        let c = terms
            .iter()
            .map(|t| t.c.abs() * w.powf(lead_p - t.p))
            .sum();
        (c, lead_p)
    }

    /// `Σ_{k ≥ max(start, from)} tail(k)²` (used for truncation-error bounds).
    pub fn l2_sq_from(&self, from: u32) -> f64 {
        let k0 = from.max(self.start) as f64;
        let mut acc = 0.0;
        for a in &self.terms {
            for b in &self.terms {
                acc += a.c * b.c * linalg::hurwitz_zeta(a.p + b.p, k0);
            }
        }
        acc
    }
}

/// Coefficient vector: finite entries plus per-family analytic tails.
///
/// The value at a simple mode `(f, k)` is `entry(f, k) + tail_f(k)`; the two
/// layers are additive so that vector arithmetic never needs to merge them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpectralVector {
    entries: BTreeMap<ModeKey, Vec<f64>>,
    tails: BTreeMap<usize, Tail>,
}

impl SpectralVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Unit coefficient on component `comp` of the block at `(family, k)`.
    pub fn unit(family: usize, k: u32, dim: usize, comp: usize) -> Self {
        let mut e = vec![0.0; dim];
        e[comp] = 1.0;
        let mut v = Self::new();
        v.entries.insert((family, k), e);
        v
    }

    /// Simple-mode constructor: scalar coefficients at the given modes.
    pub fn from_coeffs(family: usize, coeffs: &[(u32, f64)]) -> Self {
        let mut v = Self::new();
        for (k, c) in coeffs {
            v.entries.insert((family, *k), vec![*c]);
        }
        v.prune();
        v
    }

    /// Attach (add) a tail on `family`.
    pub fn with_tail(mut self, family: usize, tail: Tail) -> Self {
        self.add_tail(family, tail);
        self
    }

    pub fn add_tail(&mut self, family: usize, mut tail: Tail) {
        tail.canonicalize();
        if tail.is_zero() {
            return;
        }
        match self.tails.remove(&family) {
            None => {
                self.tails.insert(family, tail);
            }
            Some(old) => {
                // Align the starts: both term lists merge from max(start);
                // the head of the earlier tail becomes explicit entries.
                let lo = old.start.min(tail.start);
                let hi = old.start.max(tail.start);
                for k in lo..hi {
                    let val = old.eval(k) + tail.eval(k);
                    if val != 0.0 {
                        let e = self.entries.entry((family, k)).or_insert_with(|| vec![0.0]);
                        e[0] += val;
                    }
                }
                let mut merged = Tail {
                    start: hi,
                    terms: old.terms.into_iter().chain(tail.terms).collect(),
                };
                merged.canonicalize();
                if !merged.is_zero() {
                    self.tails.insert(family, merged);
                }
            }
        }
        self.prune();
    }

    /// Set the block entry at `(family, k)`.
    pub fn set_entry(&mut self, family: usize, k: u32, block: Vec<f64>) {
        self.entries.insert((family, k), block);
        self.prune();
    }

    /// Explicit entry at a mode (without tail contribution).
    pub fn entry(&self, family: usize, k: u32) -> Option<&Vec<f64>> {
        self.entries.get(&(family, k))
    }

    /// Tail attached to `family`, if any.
    pub fn tail(&self, family: usize) -> Option<&Tail> {
        self.tails.get(&family)
    }

    pub fn tails(&self) -> impl Iterator<Item = (&usize, &Tail)> {
        self.tails.iter()
    }

    pub fn entry_keys(&self) -> impl Iterator<Item = &ModeKey> {
        self.entries.keys()
    }

    /// Total coefficient block at a mode: entry plus tail evaluation
    /// (tails only ever live on 1-dimensional blocks).
    pub fn block_at(&self, family: usize, k: u32, dim: usize) -> Vec<f64> {
        let mut b = self
            .entries
            .get(&(family, k))
            .cloned()
            .unwrap_or_else(|| vec![0.0; dim]);
        if b.len() < dim {
            b.resize(dim, 0.0);
        }
        if let Some(t) = self.tails.get(&family) {
            b[0] += t.eval(k);
        }
        b
    }

    /// Scalar coefficient at a simple mode.
    pub fn coeff(&self, family: usize, k: u32) -> f64 {
        self.block_at(family, k, 1)[0]
    }

    pub fn has_tails(&self) -> bool {
        !self.tails.is_empty()
    }

    pub fn is_finite_support(&self) -> bool {
        self.tails.is_empty()
    }

    /// `self ← self + a · other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        if a == 0.0 {
            return;
        }
        for (key, block) in &other.entries {
            let e = self
                .entries
                .entry(*key)
                .or_insert_with(|| vec![0.0; block.len()]);
            if e.len() < block.len() {
                e.resize(block.len(), 0.0);
            }
            for (ei, bi) in e.iter_mut().zip(block) {
                *ei += a * bi;
            }
        }
        for (f, t) in &other.tails {
            let scaled = Tail {
                start: t.start,
                terms: t.terms.iter().map(|q| TailTerm { c: a * q.c, p: q.p }).collect(),
            };
            self.add_tail(*f, scaled);
        }
        self.prune();
    }

    pub fn scale(&mut self, a: f64) {
        for block in self.entries.values_mut() {
            for x in block.iter_mut() {
                *x *= a;
            }
        }
        for t in self.tails.values_mut() {
            for term in t.terms.iter_mut() {
                term.c *= a;
            }
        }
        self.prune();
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut v = self.clone();
        v.scale(a);
        v
    }

    fn prune(&mut self) {
        self.entries.retain(|_, b| b.iter().any(|x| *x != 0.0));
        self.tails.retain(|_, t| {
            t.canonicalize();
            !t.is_zero()
        });
    }

    /// Restrict to one family's index selection, exactly.
    ///
    /// Finite selections materialize the surviving coefficients as entries;
    /// co-finite selections keep the tail and cancel the finitely many
    /// excluded indices with corrective entries.
    pub fn restrict_family(
        &self,
        family: usize,
        sel: &crate::subspace::IndexSelection,
        dim_of: impl Fn(u32) -> usize,
    ) -> Self {
        use crate::subspace::IndexSelection;
        let mut out = Self::new();
        match sel {
            IndexSelection::Finite(set) => {
                for k in set {
                    let dim = dim_of(*k);
                    let b = self.block_at(family, *k, dim);
                    if b.iter().any(|x| *x != 0.0) {
                        out.entries.insert((family, *k), b);
                    }
                }
            }
            IndexSelection::CoFinite(excluded) => {
                for (key, block) in &self.entries {
                    if key.0 == family && !excluded.contains(&key.1) {
                        out.entries.insert(*key, block.clone());
                    }
                }
                if let Some(t) = self.tails.get(&family) {
                    out.tails.insert(family, t.clone());
                    for k in excluded {
                        let tv = t.eval(*k);
                        if tv != 0.0 {
                            let e = out.entries.entry((family, *k)).or_insert_with(|| vec![0.0]);
                            e[0] -= tv;
                        }
                    }
                }
            }
        }
        out.prune();
        out
    }

    /// Drop every coefficient belonging to `family`.
    pub fn without_family(&self, family: usize) -> Self {
        let mut out = self.clone();
        out.entries.retain(|(f, _), _| *f != family);
        out.tails.remove(&family);
        out
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.tails.is_empty()
    }

    /// Families on which this vector carries data.
    pub fn families_touched(&self) -> BTreeSet<usize> {
        self.entries
            .keys()
            .map(|(f, _)| *f)
            .chain(self.tails.keys().cloned())
            .collect()
    }

    /// Largest explicit entry index on any family.
    pub fn max_entry_index(&self) -> u32 {
        self.entries.keys().map(|(_, k)| *k).max().unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// Validation report.
// ---------------------------------------------------------------------------

/// Per-family outcome of the separation certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapClass {
    /// `Σ 1/d_k²` converges (growth degree ≥ 2).
    Convergent,
    /// The within-family gaps disperse too slowly.
    Divergent,
}

/// Gap/well-posedness data for one family.
#[derive(Debug, Clone)]
pub struct FamilyReport {
    pub family: usize,
    pub label: String,
    pub gap_class: GapClass,
    /// Smallest within-family gap over the inspection window.
    pub min_window_gap: f64,
    /// `Σ 1/d_k²` over the window (diagnostic partial sum).
    pub window_gap_sum: f64,
    /// Largest `Re λ` over the (extended) window.
    pub sup_re: f64,
}

/// Result of [`RieszSpectralSystem::validate`].
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub families: Vec<FamilyReport>,
    /// Cross-family coincidences within the window: `(mode, mode, |gap|)`.
    pub collisions: Vec<(ModeKey, ModeKey, f64)>,
    /// Declared orthogonality facts that were checked structurally.
    pub facts_checked: usize,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// The system.
// ---------------------------------------------------------------------------

/// A regular Riesz-spectral system
/// `ẋ = A x + B u + Σ_i L_i f_i`, `y = C x`,
/// with `A` diagonal(izable) over the mode families, finitely many inputs,
/// outputs and fault signatures, all stored in coefficient form.
#[derive(Debug, Clone)]
pub struct RieszSpectralSystem {
    pub families: Vec<ModeFamily>,
    /// Columns of `B`.
    pub inputs: Vec<SpectralVector>,
    /// Riesz representatives of the output functionals: `y_j = ⟨x, c_j⟩`.
    pub outputs: Vec<SpectralVector>,
    /// Fault signatures (columns of `L`).
    pub faults: Vec<SpectralVector>,
    /// Declared structural zeros `(output j, family f)`: output `j` carries no
    /// data on family `f`. Checked by validation, exploited by the geometry.
    pub output_orthogonality: BTreeSet<(usize, usize)>,
    /// Per-family inspection window used by certification scans.
    pub window: u32,
}

impl RieszSpectralSystem {
    /// Number of outputs `q`.
    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Gram scale of family `f`.
    pub fn gram(&self, f: usize) -> f64 {
        self.families[f].gram_scale
    }

    // -- validation --------------------------------------------------------

    /// Full structural validation: Riesz/regularity certificates, domain and
    /// membership checks on every stored vector, and the declared
    /// orthogonality facts.
    pub fn validate(&self) -> Result<ValidationReport> {
        if self.families.is_empty() {
            return Err(Error::Validation("no mode families".into()));
        }
        if self.outputs.is_empty() {
            return Err(Error::Validation("no outputs".into()));
        }
        if self.window < 8 {
            return Err(Error::Validation("inspection window below 8 modes".into()));
        }
        let mut reports = Vec::new();
        let mut warnings = Vec::new();
        for (fi, fam) in self.families.iter().enumerate() {
            if fam.gram_scale <= 0.0 || !fam.gram_scale.is_finite() {
                return Err(Error::Validation(format!(
                    "family {fi} ({}): gram scale must be positive",
                    fam.label
                )));
            }
            if let EigenvalueRule::Poly(c) = &fam.re {
                if c.is_empty() {
                    return Err(Error::Validation(format!(
                        "family {fi} ({}): empty polynomial rule",
                        fam.label
                    )));
                }
            }
            if fam.im.is_some() && !fam.jordan.is_empty() {
                return Err(Error::Validation(format!(
                    "family {fi} ({}): Jordan chains on a complex-pair family",
                    fam.label
                )));
            }
            for (k, len) in &fam.jordan {
                if *k == 0 || *len < 2 {
                    return Err(Error::Validation(format!(
                        "family {fi} ({}): invalid Jordan chain at k={k} (len {len})",
                        fam.label
                    )));
                }
            }
            if !fam.re.sup_re_finite() {
                return Err(Error::Validation(format!(
                    "family {fi} ({}): sup Re λ = +∞, the system is not well posed",
                    fam.label
                )));
            }
            // Window diagnostics.
            let w = self.window;
            let mut min_gap = f64::INFINITY;
            let mut gap_sum = 0.0;
            let mut sup_re = f64::NEG_INFINITY;
            for k in 1..=w {
                sup_re = sup_re.max(fam.re.eval(k));
                if k > 1 {
                    let d = (fam.re.eval(k) - fam.re.eval(k - 1)).abs();
                    min_gap = min_gap.min(d);
                    if d > 0.0 {
                        gap_sum += 1.0 / (d * d);
                    }
                }
            }
            // Extend the sup-Re scan until the rule is visibly decreasing.
            let mut scan = w;
            loop {
                let next = scan.saturating_mul(2);
                let tail_max = (scan..=next).step_by(((next - scan) / 16).max(1) as usize)
                    .map(|k| fam.re.eval(k))
                    .fold(f64::NEG_INFINITY, f64::max);
                sup_re = sup_re.max(tail_max);
                if fam.re.eval(next) < fam.re.eval(scan) - 1.0 || next > 1 << 22 {
                    break;
                }
                scan = next;
            }
            let class = if fam.re.gap_convergent() {
                GapClass::Convergent
            } else {
                GapClass::Divergent
            };
            if min_gap < 1e-9 && fam.is_plain() {
                return Err(Error::Validation(format!(
                    "family {fi} ({}): repeated eigenvalue inside the window without a declared block",
                    fam.label
                )));
            }
            if class == GapClass::Divergent {
                return Err(Error::Validation(format!(
                    "family {fi} ({}): separation certificate failed, Σ 1/d_k² diverges for this rule",
                    fam.label
                )));
            }
            reports.push(FamilyReport {
                family: fi,
                label: fam.label.clone(),
                gap_class: class,
                min_window_gap: min_gap,
                window_gap_sum: gap_sum,
                sup_re,
            });
        }
        // Cross-family coincidences.
        let mut collisions = Vec::new();
        for fa in 0..self.families.len() {
            for fb in (fa + 1)..self.families.len() {
                if self.families[fa].re == self.families[fb].re
                    && self.families[fa].im == self.families[fb].im
                {
                    return Err(Error::Validation(format!(
                        "families {fa} and {fb} share an identical eigenvalue rule (infinitely many coincidences)"
                    )));
                }
                for k in 1..=self.window {
                    let la = self.families[fa].re.eval(k);
                    // Coincidences between different indices are what breaks
                    // per-mode arguments; scan a banded neighborhood.
                    for kk in k.saturating_sub(2).max(1)..=(k + 2).min(self.window) {
                        let lb = self.families[fb].re.eval(kk);
                        if (la - lb).abs() < 1e-9
                            && self.families[fa].im.is_none()
                            && self.families[fb].im.is_none()
                        {
                            collisions.push(((fa, k), (fb, kk), (la - lb).abs()));
                        }
                    }
                }
            }
        }
        if !collisions.is_empty() {
            warnings.push(format!(
                "{} cross-family eigenvalue coincidence(s) inside the window; \
                 per-mode subspace granularity may be coarse there",
                collisions.len()
            ));
        }
        // Vector checks.
        for (name, vecs) in [
            ("input", &self.inputs),
            ("output", &self.outputs),
            ("fault", &self.faults),
        ] {
            for (vi, v) in vecs.iter().enumerate() {
                self.check_vector(v)
                    .map_err(|e| Error::Validation(format!("{name} {vi}: {e}")))?;
            }
        }
        // Declared orthogonality facts are structural statements.
        for (j, f) in &self.output_orthogonality {
            if *j >= self.outputs.len() || *f >= self.families.len() {
                return Err(Error::Validation(format!(
                    "orthogonality fact ({j}, {f}) out of range"
                )));
            }
            if self.outputs[*j].families_touched().contains(f) {
                return Err(Error::Validation(format!(
                    "orthogonality fact ({j}, {f}) contradicts stored coefficients"
                )));
            }
        }
        Ok(ValidationReport {
            families: reports,
            collisions,
            facts_checked: self.output_orthogonality.len(),
            warnings,
        })
    }

    fn check_vector(&self, v: &SpectralVector) -> Result<()> {
        for ((f, k), block) in v.entries.iter().map(|(key, b)| (*key, b)) {
            let (f, k) = (f, k);
            if f >= self.families.len() {
                return Err(Error::Dimension(format!("family index {f} out of range")));
            }
            if k == 0 {
                return Err(Error::Dimension("mode indices are 1-based".into()));
            }
            if k > self.window {
                return Err(Error::Validation(format!(
                    "entry at k={k} beyond the inspection window {}",
                    self.window
                )));
            }
            let dim = self.families[f].block_dim(k);
            if block.len() != dim {
                return Err(Error::Dimension(format!(
                    "block at ({f}, {k}) has {} components, family block dim is {dim}",
                    block.len()
                )));
            }
        }
        for (f, t) in &v.tails {
            if *f >= self.families.len() {
                return Err(Error::Dimension(format!("family index {f} out of range")));
            }
            let fam = &self.families[*f];
            if fam.im.is_some() || !fam.jordan.is_empty() {
                return Err(Error::Validation(format!(
                    "tail on non-simple family {f} ({})",
                    fam.label
                )));
            }
            if t.start == 0 {
                return Err(Error::Dimension("tail start must be ≥ 1".into()));
            }
            for term in &t.terms {
                if term.p <= 0.5 {
                    return Err(Error::Validation(format!(
                        "tail exponent p={} is not square summable (needs p > 1/2)",
                        term.p
                    )));
                }
            }
        }
        Ok(())
    }

    // -- inner products ----------------------------------------------------

    /// Gram-weighted inner product, exact (analytic) on tails.
    pub fn inner_product(&self, x: &SpectralVector, y: &SpectralVector) -> f64 {
        let mut acc = 0.0;
        // entry · entry
        for (key, bx) in &x.entries {
            if let Some(by) = y.entries.get(key) {
                let g = self.gram(key.0);
                acc += g * bx.iter().zip(by).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        // entry(x) · tail(y) and tail(x) · entry(y)
        for (key, bx) in &x.entries {
            if let Some(t) = y.tails.get(&key.0) {
                acc += self.gram(key.0) * bx[0] * t.eval(key.1);
            }
        }
        for (key, by) in &y.entries {
            if let Some(t) = x.tails.get(&key.0) {
                acc += self.gram(key.0) * by[0] * t.eval(key.1);
            }
        }
        // tail · tail
        for (f, tx) in &x.tails {
            if let Some(ty) = y.tails.get(f) {
                let start = tx.start.max(ty.start) as f64;
                let mut s = 0.0;
                for a in &tx.terms {
                    for b in &ty.terms {
                        s += a.c * b.c * linalg::hurwitz_zeta(a.p + b.p, start);
                    }
                }
                acc += self.gram(*f) * s;
            }
        }
        acc
    }

    pub fn norm(&self, x: &SpectralVector) -> f64 {
        self.inner_product(x, x).max(0.0).sqrt()
    }

    /// `y = C x` — all output functionals evaluated at `x`.
    pub fn output_map(&self, x: &SpectralVector) -> Vec<f64> {
        self.outputs.iter().map(|c| self.inner_product(x, c)).collect()
    }

    // -- the generator -----------------------------------------------------

    /// Is `x ∈ dom(A)`? Finite-support vectors always are; a tail survives iff
    /// its slowest term, multiplied by the rule's growth, stays square
    /// summable.
    pub fn in_domain(&self, x: &SpectralVector) -> bool {
        x.tails.iter().all(|(f, t)| {
            let deg = match self.families[*f].re.degree() {
                Some(d) => d as f64,
                None => return false,
            };
            t.terms.iter().all(|term| term.p - deg > 0.5)
        })
    }

    /// Apply the generator: `x ↦ A x`.
    ///
    /// Fails with [`Error::UnboundedTail`] when a tail leaves `dom(A)`.
    pub fn apply_a(&self, x: &SpectralVector) -> Result<SpectralVector> {
        let mut out = SpectralVector::new();
        for ((f, k), block) in &x.entries {
            let m = self.families[*f].block_matrix(*k);
            let b = DVector::from_vec(block.clone());
            let r = &m * &b;
            out.entries.insert((*f, *k), r.iter().cloned().collect());
        }
        for (f, t) in &x.tails {
            let fam = &self.families[*f];
            let coeffs = fam.re.poly_coeffs().ok_or_else(|| {
                Error::Unsupported(format!(
                    "generator on a tail of family {f} ({}): non-polynomial rule",
                    fam.label
                ))
            })?;
            let deg = fam.re.degree().unwrap_or(0) as f64;
            let mut terms = Vec::new();
            for term in &t.terms {
                if term.p - deg <= 0.5 {
                    return Err(Error::UnboundedTail(format!(
                        "family {f} ({}): A maps tail k^-{} to growth k^{}, not square summable",
                        fam.label,
                        term.p,
                        deg - term.p
                    )));
                }
                for (j, aj) in coeffs.iter().enumerate() {
                    if *aj != 0.0 {
                        terms.push(TailTerm {
                            c: aj * term.c,
                            p: term.p - j as f64,
                        });
                    }
                }
            }
            out.add_tail(*f, Tail { start: t.start, terms });
        }
        out.prune();
        Ok(out)
    }

    /// Apply the adjoint generator `A*` (conjugate spectrum: rotation blocks
    /// reverse orientation, Jordan couplings transpose; real rules are
    /// unchanged, so tails behave exactly as under `A`).
    pub fn apply_a_adjoint(&self, x: &SpectralVector) -> Result<SpectralVector> {
        self.adjoint_system().apply_a(x)
    }

    /// The adjoint system: same families with mirrored blocks, inputs and
    /// outputs swapped (fault columns are dropped — duality arguments supply
    /// their own data).
    pub fn adjoint_system(&self) -> Self {
        let families = self
            .families
            .iter()
            .map(|fam| ModeFamily {
                adjoint_chains: !fam.adjoint_chains,
                ..fam.clone()
            })
            .collect();
        Self {
            families,
            inputs: self.outputs.clone(),
            outputs: self.inputs.clone(),
            faults: Vec::new(),
            output_orthogonality: BTreeSet::new(),
            window: self.window,
        }
    }

    /// Resolvent `(s I - A)^{-1} x` for real `s` off the point spectrum.
    ///
    /// Only finite-support vectors are representable: the resolvent of a
    /// power-law tail is not itself a power-law tail.
    pub fn resolvent_apply(&self, s: f64, x: &SpectralVector) -> Result<SpectralVector> {
        if x.has_tails() {
            return Err(Error::Unsupported(
                "resolvent of an analytic tail is outside the representable algebra".into(),
            ));
        }
        let dist = self.spectrum_distance(s, x.max_entry_index());
        if dist < 1e-9 * (1.0 + s.abs()) {
            return Err(Error::SpectrumHit(format!(
                "s = {s} is within {dist:.3e} of the point spectrum"
            )));
        }
        let mut out = SpectralVector::new();
        for ((f, k), block) in &x.entries {
            let fam = &self.families[*f];
            let m = fam.block_matrix(*k);
            let dim = block.len();
            let sm = DMatrix::identity(dim, dim) * s - m;
            let b = DVector::from_vec(block.clone());
            let z = sm
                .lu()
                .solve(&b)
                .ok_or_else(|| Error::SpectrumHit(format!("block ({f}, {k}) singular at s={s}")))?;
            out.entries.insert((*f, *k), z.iter().cloned().collect());
        }
        out.prune();
        Ok(out)
    }

    /// Distance from real `s` to the point spectrum, scanned over an extended
    /// window (rules are eventually monotone toward `-∞`, so the scan
    /// brackets the minimum for any `s` above the scanned range).
    pub fn spectrum_distance(&self, s: f64, support_hint: u32) -> f64 {
        let scan_to = (4 * self.window).max(2 * support_hint).max(64);
        let mut dist = f64::INFINITY;
        for fam in &self.families {
            for k in 1..=scan_to {
                let (re, im) = fam.eigenvalue(k);
                let d = ((s - re) * (s - re) + im * im).sqrt();
                dist = dist.min(d);
            }
        }
        dist
    }

    // -- dense embeddings --------------------------------------------------

    /// Offsets of each mode's block within the dense coordinates of `region`,
    /// plus the total dimension.
    pub fn region_offsets(&self, region: &[ModeKey]) -> (Vec<usize>, usize) {
        let mut offsets = Vec::with_capacity(region.len());
        let mut acc = 0;
        for (f, k) in region {
            offsets.push(acc);
            acc += self.families[*f].block_dim(*k);
        }
        (offsets, acc)
    }

    /// Embed a finite-support vector into Gram-normalized (`√g`-scaled) dense
    /// coordinates over `region`. Errors if the vector carries data outside.
    pub fn dense_from_vector(&self, x: &SpectralVector, region: &[ModeKey]) -> Result<DVector<f64>> {
        if x.has_tails() {
            return Err(Error::Unsupported(
                "dense embedding of a vector with analytic tails".into(),
            ));
        }
        let (offsets, dim) = self.region_offsets(region);
        let index: BTreeMap<ModeKey, usize> = region
            .iter()
            .enumerate()
            .map(|(i, key)| (*key, i))
            .collect();
        let mut v = DVector::zeros(dim);
        for (key, block) in &x.entries {
            let Some(i) = index.get(key) else {
                return Err(Error::Unsupported(format!(
                    "vector has support at ({}, {}) outside the dense region",
                    key.0, key.1
                )));
            };
            let g = self.gram(key.0).sqrt();
            for (c, val) in block.iter().enumerate() {
                v[offsets[*i] + c] = val * g;
            }
        }
        Ok(v)
    }

    /// Inverse of [`Self::dense_from_vector`].
    pub fn vector_from_dense(&self, v: &DVector<f64>, region: &[ModeKey]) -> SpectralVector {
        let (offsets, _) = self.region_offsets(region);
        let mut out = SpectralVector::new();
        for (i, key) in region.iter().enumerate() {
            let dim = self.families[key.0].block_dim(key.1);
            let g = self.gram(key.0).sqrt();
            let block: Vec<f64> = (0..dim).map(|c| v[offsets[i] + c] / g).collect();
            if block.iter().any(|x| *x != 0.0) {
                out.entries.insert(*key, block);
            }
        }
        out.prune();
        out
    }

    /// Dense action of `A` on `region` (block diagonal; identical in raw and
    /// normalized coordinates).
    pub fn dense_a_on(&self, region: &[ModeKey]) -> DMatrix<f64> {
        let (offsets, dim) = self.region_offsets(region);
        let mut m = DMatrix::zeros(dim, dim);
        for (i, (f, k)) in region.iter().enumerate() {
            let b = self.families[*f].block_matrix(*k);
            m.view_mut((offsets[i], offsets[i]), (b.nrows(), b.ncols()))
                .copy_from(&b);
        }
        m
    }

    /// Dense rows of the output map on `region` in normalized coordinates:
    /// row `j` applied to `dense_from_vector(x)` equals `⟨x, c_j⟩` for `x`
    /// supported on the region.
    pub fn dense_outputs_on(&self, region: &[ModeKey]) -> DMatrix<f64> {
        let (offsets, dim) = self.region_offsets(region);
        let q = self.outputs.len();
        let mut m = DMatrix::zeros(q, dim);
        for (j, c) in self.outputs.iter().enumerate() {
            for (i, (f, k)) in region.iter().enumerate() {
                let bd = self.families[*f].block_dim(*k);
                let block = c.block_at(*f, *k, bd);
                let g = self.gram(*f).sqrt();
                for (comp, val) in block.iter().enumerate() {
                    m[(j, offsets[i] + comp)] = val * g;
                }
            }
        }
        m
    }

    /// All modes of every family up to `n` (blocks included whole).
    pub fn window_region(&self, n: u32) -> Vec<ModeKey> {
        let mut region = Vec::new();
        for (f, _) in self.families.iter().enumerate() {
            for k in 1..=n {
                region.push((f, k));
            }
        }
        region
    }

    /// Default pipeline configuration sized to this system's window.
    pub fn default_config(&self) -> PipelineConfig {
        PipelineConfig {
            analysis_modes: self.window,
            ..PipelineConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_family_system() -> RieszSpectralSystem {
        // λ_k = 0.1 - k² and λ_k = -0.1 - k², unit Gram.
        let fam1 = ModeFamily::simple(
            "fast",
            EigenvalueRule::AffineKSq {
                offset: 0.1,
                scale: -1.0,
            },
        );
        let fam2 = ModeFamily::simple(
            "slow",
            EigenvalueRule::AffineKSq {
                offset: -0.1,
                scale: -1.0,
            },
        );
        let c1 = SpectralVector::new().with_tail(0, Tail::power(1, 0.02, 1.0));
        let c2 = SpectralVector::new().with_tail(1, Tail::power(1, 0.012, 1.0));
        RieszSpectralSystem {
            families: vec![fam1, fam2],
            inputs: vec![],
            outputs: vec![c1, c2],
            faults: vec![],
            output_orthogonality: [(0usize, 1usize), (1, 0)].into_iter().collect(),
            window: 200,
        }
    }

    #[test]
    fn rule_eval_matches_closed_forms() {
        let r = EigenvalueRule::AffineKSq {
            offset: 0.1,
            scale: -1.0,
        };
        assert_relative_eq!(r.eval(7), 0.1 - 49.0, epsilon = 1e-12);
        let p = EigenvalueRule::Poly(vec![1.0, -2.0, 0.0, -1.0]);
        assert_relative_eq!(p.eval(3), 1.0 - 6.0 - 27.0, epsilon = 1e-12);
        assert_eq!(p.degree(), Some(3));
    }

    #[test]
    fn validation_accepts_the_two_family_system() {
        let sys = two_family_system();
        let rep = sys.validate().unwrap();
        assert_eq!(rep.families.len(), 2);
        assert!(rep.collisions.is_empty());
        assert_eq!(rep.facts_checked, 2);
        assert_relative_eq!(rep.families[0].sup_re, -0.9, epsilon = 1e-12);
    }

    #[test]
    fn validation_rejects_log_dispersion() {
        let mut sys = two_family_system();
        sys.families[0].re = EigenvalueRule::NegLog { scale: 1.0 };
        sys.outputs[0] = SpectralVector::from_coeffs(0, &[(1, 1.0)]);
        sys.output_orthogonality.clear();
        let err = sys.validate().unwrap_err();
        assert!(matches!(err, Error::Validation(msg) if msg.contains("separation")));
    }

    #[test]
    fn validation_rejects_unbounded_real_part() {
        let mut sys = two_family_system();
        sys.families[0].re = EigenvalueRule::AffineKSq {
            offset: 0.0,
            scale: 1.0,
        };
        let err = sys.validate().unwrap_err();
        assert!(matches!(err, Error::Validation(msg) if msg.contains("well posed")));
    }

    #[test]
    fn validation_rejects_duplicate_rule() {
        let mut sys = two_family_system();
        sys.families[1].re = sys.families[0].re.clone();
        let err = sys.validate().unwrap_err();
        assert!(matches!(err, Error::Validation(msg) if msg.contains("identical")));
    }

    #[test]
    fn validation_rejects_contradicted_fact() {
        let mut sys = two_family_system();
        // Declare c₁ ⊥ family 0 although it carries a tail there.
        sys.output_orthogonality.insert((0, 0));
        let err = sys.validate().unwrap_err();
        assert!(matches!(err, Error::Validation(msg) if msg.contains("contradicts")));
    }

    #[test]
    fn validation_rejects_non_summable_tail() {
        let mut sys = two_family_system();
        sys.outputs[0] = SpectralVector::new().with_tail(0, Tail::power(1, 1.0, 0.5));
        let err = sys.validate().unwrap_err();
        assert!(matches!(err, Error::Validation(msg) if msg.contains("square summable")));
    }

    #[test]
    fn inner_product_splits_entries_and_tails() {
        let sys = two_family_system();
        // x = tail 1/k from 1 on family 0; y = entry 2 at k=3 plus tail 1/k² from 5.
        let x = SpectralVector::new().with_tail(0, Tail::power(1, 1.0, 1.0));
        let mut y = SpectralVector::from_coeffs(0, &[(3, 2.0)]);
        y.add_tail(0, Tail::power(5, 1.0, 2.0));
        // ⟨x,y⟩ = 2·(1/3) + Σ_{k≥5} k^{-3} = 2/3 + ζ(3,5).
        let want = 2.0 / 3.0 + linalg::hurwitz_zeta(3.0, 5.0);
        assert_relative_eq!(sys.inner_product(&x, &y), want, epsilon = 1e-13);
        // Norm of the plain 1/k tail: ζ(2,1) = π²/6.
        assert_relative_eq!(
            sys.inner_product(&x, &x),
            core::f64::consts::PI * core::f64::consts::PI / 6.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn gram_scale_weights_inner_products() {
        let mut sys = two_family_system();
        sys.families[0].gram_scale = 2.0;
        let u = SpectralVector::unit(0, 4, 1, 0);
        assert_relative_eq!(sys.inner_product(&u, &u), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn apply_a_expands_tails_through_the_rule() {
        let sys = two_family_system();
        // A on c₂'s family-1 tail 0.012/k: λ_k = -0.1 - k² needs p - 2 > 1/2.
        let x = SpectralVector::new().with_tail(1, Tail::power(1, 0.012, 1.0));
        let err = sys.apply_a(&x).unwrap_err();
        assert!(matches!(err, Error::UnboundedTail(_)));
        // A tail with p = 3 survives: λ·c/k³ = -0.1/k³ - 1/k.
        let y = SpectralVector::new().with_tail(0, Tail::power(2, 1.0, 3.0));
        let ay = sys.apply_a(&y).unwrap();
        let t = ay.tail(0).unwrap();
        assert_eq!(t.start, 2);
        // Terms sorted by exponent: -1·k^{-1} then 0.1·... offset is 0.1 here.
        assert_relative_eq!(t.eval(4), (0.1 - 16.0) * 1.0 / 64.0, epsilon = 1e-13);
        assert!(sys.in_domain(&y));
        assert!(!sys.in_domain(&x));
    }

    #[test]
    fn apply_a_on_jordan_block_couples_the_chain() {
        let mut sys = two_family_system();
        sys.families[0].jordan.insert(2, 2);
        // x = v₁ (second chain vector): A x = λ x + v₀.
        let x = SpectralVector::unit(0, 2, 2, 1);
        let ax = sys.apply_a(&x).unwrap();
        let lam = 0.1 - 4.0;
        let b = ax.entry(0, 2).unwrap();
        assert_relative_eq!(b[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(b[1], lam, epsilon = 1e-14);
        // Adjoint couples the other way.
        let axs = sys.apply_a_adjoint(&x).unwrap();
        let bs = axs.entry(0, 2).unwrap();
        assert_relative_eq!(bs[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(bs[1], lam, epsilon = 1e-14);
    }

    #[test]
    fn resolvent_inverts_jordan_block() {
        let mut sys = two_family_system();
        sys.families[0].jordan.insert(2, 2);
        let lam = 0.1 - 4.0;
        let s = 0.0;
        // (sI - A)⁻¹ on the block is [[1/(s-λ), 1/(s-λ)²], [0, 1/(s-λ)]].
        let x = SpectralVector::unit(0, 2, 2, 1);
        let r = sys.resolvent_apply(s, &x).unwrap();
        let b = r.entry(0, 2).unwrap();
        assert_relative_eq!(b[0], 1.0 / ((s - lam) * (s - lam)), epsilon = 1e-12);
        assert_relative_eq!(b[1], 1.0 / (s - lam), epsilon = 1e-12);
        // Round trip: (sI - A) r = x.
        let ar = sys.apply_a(&r).unwrap();
        let mut back = r.clone();
        back.scale(s);
        back.axpy(-1.0, &ar);
        let mut diff = back;
        diff.axpy(-1.0, &x);
        assert!(sys.norm(&diff) < 1e-12);
    }

    #[test]
    fn resolvent_refuses_spectrum_and_tails() {
        let sys = two_family_system();
        let x = SpectralVector::unit(0, 3, 1, 0);
        let err = sys.resolvent_apply(0.1 - 9.0, &x).unwrap_err();
        assert!(matches!(err, Error::SpectrumHit(_)));
        let t = SpectralVector::new().with_tail(0, Tail::power(1, 1.0, 2.0));
        assert!(matches!(
            sys.resolvent_apply(0.0, &t),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn dense_round_trip_preserves_vectors_and_products() {
        let mut sys = two_family_system();
        sys.families[0].gram_scale = 2.0;
        let region = sys.window_region(6);
        let x = SpectralVector::from_coeffs(0, &[(1, 1.0), (4, -2.0)]);
        let y = SpectralVector::from_coeffs(0, &[(4, 0.5), (6, 3.0)]);
        let dx = sys.dense_from_vector(&x, &region).unwrap();
        let dy = sys.dense_from_vector(&y, &region).unwrap();
        assert_relative_eq!(dx.dot(&dy), sys.inner_product(&x, &y), epsilon = 1e-13);
        let back = sys.vector_from_dense(&dx, &region);
        let mut diff = back;
        diff.axpy(-1.0, &x);
        assert!(sys.norm(&diff) < 1e-13);
    }

    #[test]
    fn rotation_block_matrix_and_adjoint() {
        let mut sys = two_family_system();
        sys.families[0].im = Some(EigenvalueRule::Poly(vec![0.0, 2.0]));
        let m = sys.families[0].block_matrix(3);
        // a = 0.1 - 9, b = 6.
        assert_relative_eq!(m[(0, 0)], 0.1 - 9.0, epsilon = 1e-14);
        assert_relative_eq!(m[(0, 1)], -6.0, epsilon = 1e-14);
        assert_relative_eq!(m[(1, 0)], 6.0, epsilon = 1e-14);
        let adj = sys.adjoint_system();
        let ms = adj.families[0].block_matrix(3);
        assert_relative_eq!(ms[(0, 1)], 6.0, epsilon = 1e-14);
    }

    #[test]
    fn tail_dominance_certificate() {
        // 1/k dominates 10/k³ beyond k = 4: |1| > 10·4^{1-3} = 0.625.
        let t = Tail {
            start: 1,
            terms: vec![TailTerm { c: 1.0, p: 1.0 }, TailTerm { c: 10.0, p: 3.0 }],
        };
        assert_eq!(t.nonzero_beyond(4), Some(true));
        // At window 2 the bound fails: 10·2^{-2} = 2.5 > 1.
        assert_eq!(t.nonzero_beyond(2), None);
        let z = Tail { start: 1, terms: vec![] };
        assert_eq!(z.nonzero_beyond(2), Some(false));
    }

    #[test]
    fn restriction_to_cofinite_selection_is_exact() {
        use crate::subspace::IndexSelection;
        let sys = two_family_system();
        let mut x = SpectralVector::from_coeffs(0, &[(2, 5.0)]);
        x.add_tail(0, Tail::power(1, 1.0, 2.0));
        // Keep k ≥ 3 (exclude 1, 2).
        let sel = IndexSelection::from_k(3);
        let r = x.restrict_family(0, &sel, |_| 1);
        assert_relative_eq!(r.coeff(0, 1), 0.0, epsilon = 1e-15);
        assert_relative_eq!(r.coeff(0, 2), 0.0, epsilon = 1e-15);
        assert_relative_eq!(r.coeff(0, 7), 1.0 / 49.0, epsilon = 1e-15);
        // Norm² = Σ_{k≥3} k⁻⁴ = ζ(4, 3).
        assert_relative_eq!(
            sys.inner_product(&r, &r),
            linalg::hurwitz_zeta(4.0, 3.0),
            epsilon = 1e-13
        );
    }
}
