//! Dense finite-dimensional oracles for the integration suites.
//!
//! Everything here is written directly against `nalgebra` — classical
//! geometric-control recursions on explicit matrices, subspace algebra on
//! column-pivoted QR factors and plain quadrature — so it shares no code
//! path (and no factorization routine) with the structured implementation
//! it cross-checks. Random instances come in two
//! sizes — single-family draws of state dimension ≤ 10 on the comparison
//! window and two-family draws roughly twice as large — and cover Jordan
//! chains, non-unit Gram weights and both eigenvalue-rule forms; rotation
//! pairs are exercised by the unit layers instead, where the realified
//! blocks have closed-form references.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use riesz_fdi::{
    EigenvalueRule, ModeFamily, PipelineConfig, RieszSpectralSystem, SpectralVector,
};

/// Mode window of the random instances (per family).
pub const WIN: u32 = 8;
/// Rank cutoff of the dense oracles.
pub const RANK_TOL: f64 = 1e-9;

pub type ModeKey = (usize, u32);

// ---------------------------------------------------------------------------
// Subspace algebra on orthonormal bases.
// ---------------------------------------------------------------------------

/// Orthonormal basis of the column space via column-pivoted QR (leading
/// columns of `Q` up to the rank; pivoting makes the diagonal of `R`
/// non-increasing in magnitude, so it doubles as the rank revealer).
pub fn range_basis(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let qr = m.clone().col_piv_qr();
    let r = qr.r();
    let rmax = r[(0, 0)].abs();
    let rank = (0..r.nrows().min(r.ncols()))
        .take_while(|&i| r[(i, i)].abs() > tol * rmax.max(1.0))
        .count();
    qr.q().columns(0, rank).into_owned()
}

/// Orthogonal projector `B Bᵀ` of an orthonormal basis.
pub fn projector(basis: &DMatrix<f64>) -> DMatrix<f64> {
    basis * basis.transpose()
}

/// Orthogonal complement of an orthonormal basis inside ℝⁿ.
pub fn complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    // The residual projector has singular values in {0, 1}; cut at 1/2.
    range_basis(&(DMatrix::identity(n, n) - projector(basis)), 0.5)
}

/// Orthonormal basis of `ker m`.
pub fn nullspace(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return DMatrix::identity(m.ncols(), m.ncols());
    }
    complement(&range_basis(&m.transpose(), RANK_TOL))
}

pub fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    m.view_mut((0, a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
    m
}

/// Sum of two subspaces given by bases.
pub fn sum(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    range_basis(&hcat(a, b), RANK_TOL)
}

/// Intersection of two subspaces given by orthonormal bases: the joint
/// kernel of the two residual projectors.
pub fn intersect(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let id = DMatrix::identity(n, n);
    let mut stacked = DMatrix::zeros(2 * n, n);
    stacked
        .view_mut((0, 0), (n, n))
        .copy_from(&(&id - projector(a)));
    stacked
        .view_mut((n, 0), (n, n))
        .copy_from(&(&id - projector(b)));
    nullspace(&stacked)
}

/// Preimage `A⁻¹ S = { x : A x ∈ S }` for a subspace basis `s`. The residual
/// is computed on `A/‖A‖` — the preimage of a subspace is scale-invariant and
/// the rank decision then runs on order-one data.
pub fn preimage(a: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let a_hat = a / a.norm().max(1.0);
    nullspace(&((DMatrix::identity(n, n) - projector(s)) * a_hat))
}

/// Operator-norm distance between the projectors of two subspaces. The
/// difference is symmetric, so the norm is its largest eigenvalue magnitude.
pub fn projector_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = projector(a) - projector(b);
    if d.nrows() == 0 {
        return 0.0;
    }
    d.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, ev| acc.max(ev.abs()))
}

// ---------------------------------------------------------------------------
// Classical geometric-control recursions.
// ---------------------------------------------------------------------------

/// Minimal (C,A) conditioned-invariant subspace containing `Im l`:
/// `W₀ = Im l`, `W_{k+1} = Im l + A (W_k ∩ ker C)`.
pub fn dense_wonham(a: &DMatrix<f64>, c: &DMatrix<f64>, l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let ker_c = nullspace(c);
    let l_basis = range_basis(l, RANK_TOL);
    let mut w = l_basis.clone();
    // The exact chain is nested increasing, so the first stationary
    // dimension is the fixed point; iterating past it only accumulates the
    // drift that every multiplication by `a` amplifies.
    for _ in 0..=n {
        let grown = a * intersect(&w, &ker_c);
        let next = sum(&l_basis, &grown);
        if next.ncols() == w.ncols() {
            return next;
        }
        w = next;
    }
    w
}

/// Minimal unobservability subspace containing `Im l`: the non-increasing
/// dual recursion `S⁰ = X`, `S^{k+1} = W* + (A⁻¹ S^k) ∩ ker C`, stopped at
/// the first stationary dimension (the exact chain is nested decreasing).
pub fn dense_min_uos(a: &DMatrix<f64>, c: &DMatrix<f64>, l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let w_star = dense_wonham(a, c, l);
    let ker_c = nullspace(c);
    let mut s = DMatrix::identity(n, n);
    for _ in 0..=n {
        let next = sum(&w_star, &intersect(&preimage(a, &s), &ker_c));
        if next.ncols() == s.ncols() {
            return next;
        }
        s = next;
    }
    s
}

/// Kalman unobservable subspace: largest `a`-invariant subspace inside
/// `ker c`, through the nested recursion `V ← V ∩ a⁻¹(V)` from `V = ker c`.
/// (Stacking `c aᵏ` powers instead would let ‖a‖ᵏ swamp the rank cutoff.)
pub fn dense_unobservable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let mut v = nullspace(c);
    loop {
        if v.ncols() == 0 {
            return v;
        }
        let next = intersect(&v, &preimage(a, &v));
        if next.ncols() == v.ncols() {
            return next;
        }
        v = next;
    }
}

/// A friend of a conditioned-invariant subspace: `D = −T Y⁺` with
/// `Y = C·W` and `T = (I−P_W) A W`, so `(A + DC) W ⊆ W`.
pub fn dense_friend(a: &DMatrix<f64>, c: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let y = c * w;
    let t = (DMatrix::identity(n, n) - projector(w)) * a * w;
    let y_pinv = y.svd(true, true).pseudo_inverse(RANK_TOL).expect("pinv");
    -t * y_pinv
}

// ---------------------------------------------------------------------------
// Random structured instances with a faithful dense truncation.
// ---------------------------------------------------------------------------

/// A random spectral system together with its dense truncation on the
/// comparison window. Outputs and faults are finite-support inside the
/// window, so the truncation is exact: every structural result cut to
/// `region` must coincide with the classical recursion on `(a, c, l)`.
pub struct RandomInstance {
    pub sys: RieszSpectralSystem,
    pub cfg: PipelineConfig,
    pub region: Vec<ModeKey>,
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// One dense column per fault.
    pub l: Vec<DVector<f64>>,
}

impl RandomInstance {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Dense column of a finite-support vector on the window.
    pub fn densify(&self, v: &SpectralVector) -> DVector<f64> {
        self.sys
            .dense_from_vector(v, &self.region)
            .expect("vector supported on the window")
    }
}

fn normal(rng: &mut ChaCha12Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_block(rng: &mut ChaCha12Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| normal(rng)).collect()
}

/// Random fault signature supported on 1–3 modes of the given families.
fn random_fault(rng: &mut ChaCha12Rng, sys: &RieszSpectralSystem, fams: &[usize]) -> SpectralVector {
    loop {
        let mut v = SpectralVector::new();
        for _ in 0..rng.gen_range(1..=3u32) {
            let f = fams[rng.gen_range(0..fams.len())];
            let k = rng.gen_range(1..=WIN);
            v.set_entry(f, k, random_block(rng, sys.families[f].block_dim(k)));
        }
        let norm = sys.norm(&v);
        if norm.is_finite() && norm > 0.1 {
            return v;
        }
    }
}

/// Random eigenvalue rule that satisfies the realness and separation
/// certificates: either the dedicated `offset + scale·k²` form or a general
/// quadratic with a negative leading coefficient, so that the polynomial
/// code path is exercised beyond the `AffineKSq` special case.
fn random_rule(rng: &mut ChaCha12Rng) -> EigenvalueRule {
    if rng.gen_bool(0.5) {
        EigenvalueRule::AffineKSq {
            offset: rng.gen_range(-2.0..0.4),
            scale: -rng.gen_range(0.5..1.5),
        }
    } else {
        EigenvalueRule::Poly(vec![
            rng.gen_range(-4.0..-0.5),
            rng.gen_range(-0.5..0.5),
            -rng.gen_range(0.4..1.4),
        ])
    }
}

/// Draw one valid random instance of state dimension ≤ 10 on the window: a
/// single family of `WIN` modes (one extra state when a Jordan chain is
/// drawn), 1–3 outputs, two faults. Retries internally; rejection only
/// guards against degenerate draws.
pub fn random_instance(rng: &mut ChaCha12Rng) -> RandomInstance {
    for _ in 0..64 {
        if let Some(inst) = try_instance(rng) {
            return inst;
        }
    }
    panic!("64 consecutive draws rejected: the generator and the validator disagree");
}

/// Draw a two-family instance (state dimension 16–18 on the window) for
/// cross-family coverage: Gram weights, distinct eigenvalue rules and
/// isolation-shaped output/fault supports.
pub fn random_instance_wide(rng: &mut ChaCha12Rng) -> RandomInstance {
    for _ in 0..64 {
        if let Some(inst) = try_instance_wide(rng) {
            return inst;
        }
    }
    panic!("64 consecutive draws rejected: the generator and the validator disagree");
}

fn finish_instance(sys: RieszSpectralSystem) -> Option<RandomInstance> {
    sys.validate().ok()?;
    let cfg = sys.default_config();
    let region = sys.window_region(WIN);
    let a = sys.dense_a_on(&region);
    let c = sys.dense_outputs_on(&region);
    let l = sys
        .faults
        .iter()
        .map(|v| sys.dense_from_vector(v, &region).expect("finite support"))
        .collect();
    Some(RandomInstance {
        sys,
        cfg,
        region,
        a,
        c,
        l,
    })
}

fn try_instance(rng: &mut ChaCha12Rng) -> Option<RandomInstance> {
    let mut fam = ModeFamily::simple("alpha", random_rule(rng));
    if rng.gen_bool(0.25) {
        fam.jordan.insert(2, 2);
    }
    if rng.gen_bool(0.5) {
        fam.gram_scale = rng.gen_range(0.5..2.0);
    }
    let mut sys = RieszSpectralSystem {
        families: vec![fam],
        inputs: vec![],
        outputs: vec![],
        faults: vec![],
        output_orthogonality: std::collections::BTreeSet::new(),
        window: WIN,
    };
    let q = rng.gen_range(1..=3usize);
    for _ in 0..q {
        let mut c = SpectralVector::new();
        for k in 1..=WIN {
            if rng.gen_bool(0.7) {
                c.set_entry(0, k, random_block(rng, sys.families[0].block_dim(k)));
            }
        }
        sys.outputs.push(c);
    }
    sys.faults.push(random_fault(rng, &sys, &[0]));
    sys.faults.push(random_fault(rng, &sys, &[0]));
    finish_instance(sys)
}

fn try_instance_wide(rng: &mut ChaCha12Rng) -> Option<RandomInstance> {
    let mut fam1 = ModeFamily::simple(
        "alpha",
        EigenvalueRule::AffineKSq {
            offset: rng.gen_range(-2.0..0.4),
            scale: -1.0,
        },
    );
    if rng.gen_bool(0.25) {
        fam1.jordan.insert(2, 2);
    }
    let mut fam2 = ModeFamily::simple("beta", random_rule(rng));
    if rng.gen_bool(0.5) {
        fam2.gram_scale = rng.gen_range(0.5..2.0);
    }

    let mut sys = RieszSpectralSystem {
        families: vec![fam1, fam2],
        inputs: vec![],
        outputs: vec![],
        faults: vec![],
        output_orthogonality: std::collections::BTreeSet::new(),
        window: WIN,
    };

    if rng.gen_bool(0.6) {
        // Isolation-shaped draw: one output and one fault per family, so the
        // quotient and mixing stay informative.
        for f in 0..2usize {
            let mut c = SpectralVector::new();
            for k in 1..=WIN {
                if rng.gen_bool(0.8) {
                    c.set_entry(f, k, random_block(rng, sys.families[f].block_dim(k)));
                }
            }
            sys.outputs.push(c);
        }
        sys.faults.push(random_fault(rng, &sys, &[0]));
        sys.faults.push(random_fault(rng, &sys, &[1]));
    } else {
        // Fully random draw: arbitrary sparsity, shared families.
        let q = rng.gen_range(1..=3usize);
        for _ in 0..q {
            let mut c = SpectralVector::new();
            for f in 0..2usize {
                for k in 1..=WIN {
                    if rng.gen_bool(0.7) {
                        c.set_entry(f, k, random_block(rng, sys.families[f].block_dim(k)));
                    }
                }
            }
            sys.outputs.push(c);
        }
        sys.faults.push(random_fault(rng, &sys, &[0, 1]));
        sys.faults.push(random_fault(rng, &sys, &[0, 1]));
    }
    finish_instance(sys)
}

// ---------------------------------------------------------------------------
// Quadrature.
// ---------------------------------------------------------------------------

/// Adaptive Simpson quadrature with Richardson acceptance.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 40)
}
