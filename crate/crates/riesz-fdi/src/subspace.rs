//! Closed subspaces in structured form: per-family sub-eigenspace selections
//! plus a finite-dimensional transversal part.
//!
//! Every closed invariant subspace of a regular Riesz-spectral generator is
//! the closed span of sub-eigenspaces; the subspaces produced by the
//! fault-isolation geometry are of the slightly richer form
//! `V = (⊕_f span{φ_k : k ∈ sel_f}) ⊕ span{w_1, …, w_m}` with finitely many
//! transversal vectors `w_i`. The selections are finite or co-finite index
//! sets, which is the exact closure of that family under sums, intersections
//! and orthogonal complements — no truncation enters the set algebra.

// `f64` float math lives in std; route through `num_traits::Float` (libm)
// so the crate stays `no_std`. Inherent methods shadow these under test builds.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::{format, vec::Vec};
use nalgebra::{DMatrix, DVector};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg;
use crate::spectral::{ModeKey, RieszSpectralSystem, SpectralVector};

// ---------------------------------------------------------------------------
// Index selections.
// ---------------------------------------------------------------------------

/// A set of mode indices that is either finite or co-finite — the exact
/// closure needed by sub-eigenspace arithmetic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexSelection {
    Finite(BTreeSet<u32>),
    /// All indices except the listed ones.
    CoFinite(BTreeSet<u32>),
}

impl IndexSelection {
    pub fn empty() -> Self {
        Self::Finite(BTreeSet::new())
    }

    pub fn all() -> Self {
        Self::CoFinite(BTreeSet::new())
    }

    /// `{k : k ≥ k0}`.
    pub fn from_k(k0: u32) -> Self {
        Self::CoFinite((1..k0).collect())
    }

    pub fn singleton(k: u32) -> Self {
        Self::Finite([k].into_iter().collect())
    }

    pub fn contains(&self, k: u32) -> bool {
        match self {
            Self::Finite(s) => s.contains(&k),
            Self::CoFinite(e) => !e.contains(&k),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Self::Finite(s) if s.is_empty())
    }

    pub fn is_cofinite(&self) -> bool {
        matches!(self, Self::CoFinite(_))
    }

    /// Number of indices if finite.
    pub fn finite_len(&self) -> Option<usize> {
        match self {
            Self::Finite(s) => Some(s.len()),
            Self::CoFinite(_) => None,
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        use IndexSelection::*;
        match (self, other) {
            (Finite(a), Finite(b)) => Finite(a.union(b).cloned().collect()),
            (Finite(a), CoFinite(e)) | (CoFinite(e), Finite(a)) => {
                CoFinite(e.difference(a).cloned().collect())
            }
            (CoFinite(e1), CoFinite(e2)) => CoFinite(e1.intersection(e2).cloned().collect()),
        }
    }

    pub fn intersect(&self, other: &Self) -> Self {
        use IndexSelection::*;
        match (self, other) {
            (Finite(a), Finite(b)) => Finite(a.intersection(b).cloned().collect()),
            (Finite(a), CoFinite(e)) | (CoFinite(e), Finite(a)) => {
                Finite(a.difference(e).cloned().collect())
            }
            (CoFinite(e1), CoFinite(e2)) => CoFinite(e1.union(e2).cloned().collect()),
        }
    }

    pub fn complement(&self) -> Self {
        match self {
            Self::Finite(s) => Self::CoFinite(s.clone()),
            Self::CoFinite(e) => Self::Finite(e.clone()),
        }
    }

    pub fn minus(&self, other: &Self) -> Self {
        self.intersect(&other.complement())
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        use IndexSelection::*;
        match (self, other) {
            (Finite(a), _) => a.iter().all(|k| other.contains(*k)),
            (CoFinite(_), Finite(_)) => false,
            (CoFinite(e1), CoFinite(e2)) => e2.is_subset(e1),
        }
    }

    /// Indices of a finite selection (empty iterator for co-finite ones).
    pub fn iter_finite(&self) -> impl Iterator<Item = u32> + '_ {
        match self {
            Self::Finite(s) => Some(s.iter().cloned()),
            Self::CoFinite(_) => None,
        }
        .into_iter()
        .flatten()
    }

    /// Members of the selection up to `n`.
    pub fn iter_window(&self, n: u32) -> impl Iterator<Item = u32> + '_ {
        (1..=n).filter(move |k| self.contains(*k))
    }

    /// Human-readable form: `all`, `k ≥ 5`, `{2, 7}`, `all except {3}`.
    pub fn describe(&self) -> String {
        match self {
            Self::Finite(s) if s.is_empty() => "∅".into(),
            Self::Finite(s) => {
                let items: Vec<String> = s.iter().map(|k| format!("{k}")).collect();
                format!("{{{}}}", items.join(", "))
            }
            Self::CoFinite(e) if e.is_empty() => "all".into(),
            Self::CoFinite(e) => {
                // Detect the contiguous-head pattern {1, …, k0-1}.
                let max = *e.iter().max().unwrap();
                if e.len() as u32 == max {
                    format!("k ≥ {}", max + 1)
                } else {
                    let items: Vec<String> = e.iter().map(|k| format!("{k}")).collect();
                    format!("all except {{{}}}", items.join(", "))
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Structured subspaces.
// ---------------------------------------------------------------------------

/// Closed subspace `(⊕_f span{φ_k^f : k ∈ sel_f}) ⊕ span{w_1, …, w_m}`.
///
/// Canonical form maintained by every constructor and operation:
/// the `w_i` are orthonormal, orthogonal to all selected modes, and no
/// complete mode block hides inside their span (such blocks are absorbed
/// into the selections).
#[derive(Debug, Clone, Default)]
pub struct StructuredSubspace {
    selections: BTreeMap<usize, IndexSelection>,
    finite: Vec<SpectralVector>,
}

impl StructuredSubspace {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The whole state space.
    pub fn whole(sys: &RieszSpectralSystem) -> Self {
        let selections = (0..sys.families.len())
            .map(|f| (f, IndexSelection::all()))
            .collect();
        Self {
            selections,
            finite: Vec::new(),
        }
    }

    pub fn from_selections<I: IntoIterator<Item = (usize, IndexSelection)>>(sels: I) -> Self {
        let mut selections = BTreeMap::new();
        for (f, s) in sels {
            if !s.is_empty() {
                selections.insert(f, s);
            }
        }
        Self {
            selections,
            finite: Vec::new(),
        }
    }

    /// Closed span of finitely many vectors (plus optional selections added
    /// later through [`Self::sum`]).
    pub fn span(
        sys: &RieszSpectralSystem,
        vectors: &[SpectralVector],
        tol: &Tolerances,
    ) -> Result<Self> {
        let mut s = Self::empty();
        for v in vectors {
            s.add_vector(sys, v, tol);
        }
        s.absorb_blocks(sys, tol);
        Ok(s)
    }

    pub fn selection(&self, f: usize) -> IndexSelection {
        self.selections
            .get(&f)
            .cloned()
            .unwrap_or_else(IndexSelection::empty)
    }

    pub fn selections(&self) -> &BTreeMap<usize, IndexSelection> {
        &self.selections
    }

    pub fn finite_part(&self) -> &[SpectralVector] {
        &self.finite
    }

    pub fn dim_finite(&self) -> usize {
        self.finite.len()
    }

    pub fn is_zero(&self) -> bool {
        self.selections.is_empty() && self.finite.is_empty()
    }

    pub fn has_tail_vectors(&self) -> bool {
        self.finite.iter().any(|v| v.has_tails())
    }

    /// Does any selection contain infinitely many modes?
    pub fn has_cofinite_part(&self) -> bool {
        self.selections.values().any(|s| s.is_cofinite())
    }

    /// Mode blocks touched by the finite part.
    pub fn finite_region(&self) -> Vec<ModeKey> {
        let mut region: BTreeSet<ModeKey> = BTreeSet::new();
        for v in &self.finite {
            for key in v.entry_keys() {
                region.insert(*key);
            }
        }
        region.into_iter().collect()
    }

    // -- canonical form helpers ---------------------------------------------

    /// Project `v` off the selections and orthonormalize against the current
    /// finite part; append the residual if it is numerically nonzero.
    fn add_vector(&mut self, sys: &RieszSpectralSystem, v: &SpectralVector, tol: &Tolerances) {
        let scale = sys.norm(v);
        if scale == 0.0 {
            return;
        }
        let mut r = self.off_selections(sys, v);
        // Twice-is-enough Gram–Schmidt.
        for _ in 0..2 {
            for q in &self.finite {
                let d = sys.inner_product(&r, q);
                r.axpy(-d, q);
            }
        }
        let nrm = sys.norm(&r);
        if nrm > tol.rank_rel.max(1e-12) * scale + 1e-14 {
            r.scale(1.0 / nrm);
            self.finite.push(r);
        }
    }

    /// Component of `v` orthogonal to every selected mode.
    fn off_selections(&self, sys: &RieszSpectralSystem, v: &SpectralVector) -> SpectralVector {
        let mut r = v.clone();
        for (f, sel) in &self.selections {
            let keep = sel.complement();
            let fam_dim = |k: u32| sys.families[*f].block_dim(k);
            let part = r.restrict_family(*f, &keep, fam_dim);
            let mut out = r.without_family(*f);
            out.axpy(1.0, &part);
            r = out;
        }
        r
    }

    /// Move complete mode blocks hiding inside the finite span into the
    /// selections, then restore the canonical form.
    fn absorb_blocks(&mut self, sys: &RieszSpectralSystem, tol: &Tolerances) {
        loop {
            let mut absorbed = None;
            'outer: for key in self.finite_region() {
                let (f, k) = key;
                if self.selection(f).contains(k) {
                    continue;
                }
                let dim = sys.families[f].block_dim(k);
                let g = sys.gram(f).sqrt();
                for comp in 0..dim {
                    let u = SpectralVector::unit(f, k, dim, comp);
                    let mut r = u.clone();
                    for q in &self.finite {
                        r.axpy(-sys.inner_product(&u, q), q);
                    }
                    if sys.norm(&r) > tol.orth.max(1e-12) * (1.0 + g) {
                        continue 'outer;
                    }
                }
                absorbed = Some(key);
                break;
            }
            let Some((f, k)) = absorbed else { break };
            let sel = self.selection(f).union(&IndexSelection::singleton(k));
            self.selections.insert(f, sel);
            // Re-project the finite part off the enlarged selections.
            let old = core::mem::take(&mut self.finite);
            for v in old {
                self.add_vector(sys, &v, tol);
            }
        }
        self.selections.retain(|_, s| !s.is_empty());
    }

    // -- projections and membership ------------------------------------------

    /// Orthogonal projection of `v` onto this subspace (exact, including
    /// analytic tails).
    pub fn project(&self, sys: &RieszSpectralSystem, v: &SpectralVector) -> SpectralVector {
        let mut out = SpectralVector::new();
        for (f, sel) in &self.selections {
            let fam_dim = |k: u32| sys.families[*f].block_dim(k);
            out.axpy(1.0, &v.restrict_family(*f, sel, fam_dim));
        }
        for q in &self.finite {
            out.axpy(sys.inner_product(v, q), q);
        }
        out
    }

    /// Is `v` inside the subspace (residual below `tol.inner` relative to
    /// the vector's norm)? Exact for tails because residual norms are
    /// evaluated analytically.
    pub fn contains_vector(
        &self,
        sys: &RieszSpectralSystem,
        v: &SpectralVector,
        tol: &Tolerances,
    ) -> bool {
        let nrm = sys.norm(v);
        if nrm == 0.0 {
            return true;
        }
        let mut r = v.clone();
        r.axpy(-1.0, &self.project(sys, v));
        sys.norm(&r) <= tol.inner.max(1e-12) * (1.0 + nrm)
    }

    /// Is `other ⊆ self` (up to the tolerances)?
    pub fn contains(
        &self,
        sys: &RieszSpectralSystem,
        other: &Self,
        tol: &Tolerances,
    ) -> Result<bool> {
        for (f, sel) in &other.selections {
            let mine = self.selection(*f);
            if sel.is_subset_of(&mine) {
                continue;
            }
            // The part of `sel` outside my selection must be finite and lie
            // inside my finite span, block by block.
            let extra = sel.minus(&mine);
            let IndexSelection::Finite(extra_set) = extra else {
                return Ok(false);
            };
            for k in extra_set {
                let dim = sys.families[*f].block_dim(k);
                for comp in 0..dim {
                    let u = SpectralVector::unit(*f, k, dim, comp);
                    if !self.contains_vector(sys, &u, tol) {
                        return Ok(false);
                    }
                }
            }
        }
        for w in &other.finite {
            if !self.contains_vector(sys, w, tol) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    // -- lattice operations ---------------------------------------------------

    /// Closed sum `self + other`.
    pub fn sum(&self, other: &Self, sys: &RieszSpectralSystem, tol: &Tolerances) -> Self {
        let mut out = Self::empty();
        let fams: BTreeSet<usize> = self
            .selections
            .keys()
            .chain(other.selections.keys())
            .cloned()
            .collect();
        for f in fams {
            let s = self.selection(f).union(&other.selection(f));
            if !s.is_empty() {
                out.selections.insert(f, s);
            }
        }
        for v in self.finite.iter().chain(&other.finite) {
            out.add_vector(sys, v, tol);
        }
        out.absorb_blocks(sys, tol);
        out
    }

    /// Intersection `self ∩ other`.
    ///
    /// Exact: the structural parts intersect through index-set algebra, the
    /// finite parts through a dense computation on their (finite) support
    /// region. Finite parts carrying analytic tails are not supported here.
    pub fn intersect(
        &self,
        other: &Self,
        sys: &RieszSpectralSystem,
        tol: &Tolerances,
    ) -> Result<Self> {
        if self.has_tail_vectors() || other.has_tail_vectors() {
            return Err(Error::Unsupported(
                "intersection with tail-carrying transversal vectors".into(),
            ));
        }
        let mut out = Self::empty();
        let fams: BTreeSet<usize> = self
            .selections
            .keys()
            .chain(other.selections.keys())
            .cloned()
            .collect();
        for f in &fams {
            let s = self.selection(*f).intersect(&other.selection(*f));
            if !s.is_empty() {
                out.selections.insert(*f, s);
            }
        }
        // Dense part on the union of the finite supports.
        let region: Vec<ModeKey> = {
            let mut r: BTreeSet<ModeKey> = BTreeSet::new();
            r.extend(self.finite_region());
            r.extend(other.finite_region());
            r.into_iter().collect()
        };
        if region.is_empty() {
            return Ok(out);
        }
        let a = self.dense_side_on(sys, &region, tol)?;
        let b = other.dense_side_on(sys, &region, tol)?;
        let inter = linalg::span_intersect(&a, &b, tol.rank_rel)?;
        for j in 0..inter.ncols() {
            let col = inter.column(j).into_owned();
            let v = sys.vector_from_dense(&col, &region);
            out.add_vector(sys, &v, tol);
        }
        out.absorb_blocks(sys, tol);
        Ok(out)
    }

    /// Dense basis (normalized coordinates) of this subspace's footprint on
    /// `region`: selected blocks inside the region plus the finite part.
    fn dense_side_on(
        &self,
        sys: &RieszSpectralSystem,
        region: &[ModeKey],
        tol: &Tolerances,
    ) -> Result<DMatrix<f64>> {
        let (offsets, dim) = sys.region_offsets(region);
        let mut cols: Vec<DVector<f64>> = Vec::new();
        for (i, (f, k)) in region.iter().enumerate() {
            if self.selection(*f).contains(*k) {
                let bd = sys.families[*f].block_dim(*k);
                for comp in 0..bd {
                    let mut e = DVector::zeros(dim);
                    e[offsets[i] + comp] = 1.0;
                    cols.push(e);
                }
            }
        }
        for w in &self.finite {
            cols.push(sys.dense_from_vector(w, region)?);
        }
        let m = DMatrix::from_fn(dim, cols.len(), |r, c| cols[c][r]);
        linalg::range_basis(&m, tol.rank_rel)
    }

    /// Orthonormal dense basis of the subspace restricted to `region`
    /// (test/diagnostic helper; the subspace must not extend beyond the
    /// region except through selections, which are cut to the region).
    pub fn dense_basis_on(
        &self,
        sys: &RieszSpectralSystem,
        region: &[ModeKey],
        tol: &Tolerances,
    ) -> Result<DMatrix<f64>> {
        self.dense_side_on(sys, region, tol)
    }

    /// Orthogonal complement within the whole space.
    pub fn orthogonal_complement(
        &self,
        sys: &RieszSpectralSystem,
        tol: &Tolerances,
    ) -> Result<Self> {
        if self.has_tail_vectors() {
            return Err(Error::Unsupported(
                "complement of a tail-carrying transversal part".into(),
            ));
        }
        let region = self.finite_region();
        let region_by_family: BTreeMap<usize, BTreeSet<u32>> = {
            let mut m: BTreeMap<usize, BTreeSet<u32>> = BTreeMap::new();
            for (f, k) in &region {
                m.entry(*f).or_default().insert(*k);
            }
            m
        };
        let mut out = Self::empty();
        for f in 0..sys.families.len() {
            let mut sel = self.selection(f).complement();
            if let Some(ks) = region_by_family.get(&f) {
                sel = sel.minus(&IndexSelection::Finite(ks.clone()));
            }
            if !sel.is_empty() {
                out.selections.insert(f, sel);
            }
        }
        if !region.is_empty() {
            let fin = self.dense_side_on(sys, &region, tol)?;
            let comp = linalg::complement(&fin, tol.rank_rel)?;
            for j in 0..comp.ncols() {
                let col = comp.column(j).into_owned();
                let v = sys.vector_from_dense(&col, &region);
                out.add_vector(sys, &v, tol);
            }
            out.absorb_blocks(sys, tol);
        }
        Ok(out)
    }

    /// Quotient map `P : X → X/self` in structured coordinates.
    pub fn quotient_map(&self, sys: &RieszSpectralSystem, tol: &Tolerances) -> Result<QuotientMap> {
        if self.has_tail_vectors() {
            return Err(Error::Unsupported(
                "quotient by a subspace with tail-carrying transversal part".into(),
            ));
        }
        let region = self.finite_region();
        let (_, dim) = sys.region_offsets(&region);
        let rep = if region.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            let fin = self.dense_side_on(sys, &region, tol)?;
            linalg::complement(&fin, tol.rank_rel)?
        };
        let region_by_family: BTreeMap<usize, BTreeSet<u32>> = {
            let mut m: BTreeMap<usize, BTreeSet<u32>> = BTreeMap::new();
            for (f, k) in &region {
                m.entry(*f).or_default().insert(*k);
            }
            m
        };
        let mut passthrough = BTreeMap::new();
        for f in 0..sys.families.len() {
            let mut sel = self.selection(f).complement();
            if let Some(ks) = region_by_family.get(&f) {
                sel = sel.minus(&IndexSelection::Finite(ks.clone()));
            }
            if !sel.is_empty() {
                passthrough.insert(f, sel);
            }
        }
        debug_assert_eq!(rep.nrows(), dim);
        Ok(QuotientMap {
            kernel: self.clone(),
            region,
            rep,
            passthrough,
        })
    }
}

// ---------------------------------------------------------------------------
// Quotient maps and quotient vectors.
// ---------------------------------------------------------------------------

/// Canonical projection `P : X → X/V` for a structured `V`, represented by
/// pass-through structural coordinates (mode selections untouched by `V`)
/// plus an orthonormal transversal basis on `V`'s finite region.
#[derive(Debug, Clone)]
pub struct QuotientMap {
    kernel: StructuredSubspace,
    /// Mode blocks spanned by the kernel's finite part.
    region: Vec<ModeKey>,
    /// Orthonormal basis (columns, normalized coordinates on `region`) of the
    /// quotient's dense coordinates: region-span ⊖ kernel-part.
    rep: DMatrix<f64>,
    /// Structural quotient coordinates per family.
    passthrough: BTreeMap<usize, IndexSelection>,
}

/// Element of the quotient space: structural coefficients on the pass-through
/// selections plus dense coordinates on the region transversal.
#[derive(Debug, Clone, Default)]
pub struct QuotientVector {
    pub structural: SpectralVector,
    pub block: DVector<f64>,
}

impl QuotientVector {
    pub fn zeros(block_dim: usize) -> Self {
        Self {
            structural: SpectralVector::new(),
            block: DVector::zeros(block_dim),
        }
    }

    pub fn axpy(&mut self, a: f64, other: &Self) {
        self.structural.axpy(a, &other.structural);
        if !other.block.is_empty() {
            if self.block.is_empty() {
                self.block = DVector::zeros(other.block.len());
            }
            self.block.axpy(a, &other.block, 1.0);
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.structural.scale(a);
        self.block *= a;
    }
}

impl QuotientMap {
    pub fn kernel(&self) -> &StructuredSubspace {
        &self.kernel
    }

    pub fn region(&self) -> &[ModeKey] {
        &self.region
    }

    /// Dimension of the dense transversal block.
    pub fn block_dim(&self) -> usize {
        self.rep.ncols()
    }

    pub fn rep_basis(&self) -> &DMatrix<f64> {
        &self.rep
    }

    pub fn passthrough(&self) -> &BTreeMap<usize, IndexSelection> {
        &self.passthrough
    }

    /// Apply the projection to a vector (tails permitted; the restriction to
    /// pass-through selections is exact).
    pub fn apply(&self, sys: &RieszSpectralSystem, x: &SpectralVector) -> QuotientVector {
        let mut structural = SpectralVector::new();
        for (f, sel) in &self.passthrough {
            let fam_dim = |k: u32| sys.families[*f].block_dim(k);
            structural.axpy(1.0, &x.restrict_family(*f, sel, fam_dim));
        }
        let block = if self.region.is_empty() {
            DVector::zeros(0)
        } else {
            let dense = self.dense_eval_on_region(sys, x);
            self.rep.transpose() * dense
        };
        QuotientVector { structural, block }
    }

    /// Evaluate a vector's coefficients (entries plus tails) on the region in
    /// normalized coordinates.
    fn dense_eval_on_region(&self, sys: &RieszSpectralSystem, x: &SpectralVector) -> DVector<f64> {
        let (offsets, dim) = sys.region_offsets(&self.region);
        let mut v = DVector::zeros(dim);
        for (i, (f, k)) in self.region.iter().enumerate() {
            let bd = sys.families[*f].block_dim(*k);
            let block = x.block_at(*f, *k, bd);
            let g = sys.gram(*f).sqrt();
            for (comp, val) in block.iter().enumerate() {
                v[offsets[i] + comp] = val * g;
            }
        }
        v
    }

    /// Right inverse of [`Self::apply`]: embed a quotient element as the
    /// representative orthogonal to the kernel.
    pub fn embed(&self, sys: &RieszSpectralSystem, w: &QuotientVector) -> SpectralVector {
        let mut out = w.structural.clone();
        if self.rep.ncols() > 0 && !w.block.is_empty() {
            let dense = &self.rep * &w.block;
            out.axpy(1.0, &sys.vector_from_dense(&dense, &self.region));
        }
        out
    }

    /// Inner product on the quotient (the embedding is isometric).
    pub fn inner(&self, sys: &RieszSpectralSystem, a: &QuotientVector, b: &QuotientVector) -> f64 {
        let mut acc = sys.inner_product(&a.structural, &b.structural);
        if !a.block.is_empty() && !b.block.is_empty() {
            acc += a.block.dot(&b.block);
        }
        acc
    }

    pub fn norm(&self, sys: &RieszSpectralSystem, a: &QuotientVector) -> f64 {
        self.inner(sys, a, a).max(0.0).sqrt()
    }
}
