//! Dense numeric kernels: rank-revealing decompositions, subspace algebra on
//! orthonormal bases, matrix exponentials, Lyapunov solves and pole placement.
//!
//! Everything here operates on small dense blocks ("interaction regions") cut
//! out of the infinite coefficient space by the structural layer. Rank
//! decisions use a relative singular-value cutoff throughout.

// `f64` float math lives in std; route through `num_traits::Float` (libm)
// so the crate stays `no_std`. Inherent methods shadow these under test builds.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::{format, vec, vec::Vec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Machine-epsilon based absolute floor used when a matrix is numerically
/// zero and a relative cutoff would degenerate.
const ABS_FLOOR: f64 = 1e-14;

/// One-sided (Hestenes) Jacobi SVD.
///
/// Rank decisions here must survive matrices whose spectrum mixes a crisp
/// leading cluster with a nearly degenerate zero cluster — exactly the shape
/// subspace recursions produce — and bidiagonalization-based solvers can
/// return factors with large residuals on that shape. Jacobi rotations
/// converge unconditionally and deliver high relative accuracy; the cost is
/// irrelevant at the block sizes this crate handles.
fn svd_of(m: &DMatrix<f64>) -> Result<nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(cols, cols);

    // Orthogonalize column pairs until every off-diagonal inner product is
    // negligible relative to the participating column norms. A column at
    // machine zero relative to the matrix scale is frozen: it is below the
    // resolution of any backward-stable factorization, and its underflowed
    // norm square would zero the rotation threshold and spin the sweep.
    let tol = 1e-15;
    let zero2 = (f64::EPSILON * a.norm()).powi(2);
    let mut converged = cols < 2;
    for _ in 0..64 {
        let mut rotated = false;
        for i in 0..cols {
            for j in (i + 1)..cols {
                let app = a.column(i).norm_squared();
                let aqq = a.column(j).norm_squared();
                let apq = a.column(i).dot(&a.column(j));
                if app <= zero2 || aqq <= zero2 || apq.abs() <= tol * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                // `hypot` keeps `√(1+ζ²)` finite when ζ² would overflow
                // (huge norm ratios make ζ ~ 1e157⁺).
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for r in 0..rows {
                    let x = a[(r, i)];
                    let y = a[(r, j)];
                    a[(r, i)] = cs * x - sn * y;
                    a[(r, j)] = sn * x + cs * y;
                }
                for r in 0..cols {
                    let x = v[(r, i)];
                    let y = v[(r, j)];
                    v[(r, i)] = cs * x - sn * y;
                    v[(r, j)] = sn * x + cs * y;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "Jacobi SVD of {rows}x{cols} matrix"
        )));
    }

    let sigma: Vec<f64> = (0..cols).map(|c| a.column(c).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&x, &y| sigma[y].partial_cmp(&sigma[x]).unwrap_or(core::cmp::Ordering::Equal));

    let singular_values = DVector::from_iterator(k, order.iter().take(k).map(|&c| sigma[c]));
    // Left vectors: normalized columns of the rotated matrix. Columns with a
    // vanishing singular value stay zero — every consumer filters on σ first.
    let mut u = DMatrix::<f64>::zeros(rows, k);
    let mut v_t = DMatrix::<f64>::zeros(k, cols);
    for (slot, &c) in order.iter().take(k).enumerate() {
        if sigma[c] > 0.0 {
            u.column_mut(slot).copy_from(&(a.column(c) / sigma[c]));
        }
        v_t.row_mut(slot).copy_from(&v.column(c).transpose());
    }
    Ok(nalgebra::SVD {
        u: Some(u),
        v_t: Some(v_t),
        singular_values,
    })
}

/// Singular-value cutoff for `m`: `rel_tol * σ_max`, floored near machine
/// epsilon so that exactly-zero matrices get rank zero.
fn sv_cutoff(sv: &DVector<f64>, rel_tol: f64) -> f64 {
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    (rel_tol * smax).max(ABS_FLOOR)
}

/// Numerical rank of `m` with relative cutoff `rel_tol`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0);
    }
    let svd = svd_of(m)?;
    let cut = sv_cutoff(&svd.singular_values, rel_tol);
    Ok(svd.singular_values.iter().filter(|s| **s > cut).count())
}

/// Orthonormal basis of the range of `m` (columns).
pub fn range_basis(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(DMatrix::zeros(m.nrows(), 0));
    }
    let svd = svd_of(m)?;
    let cut = sv_cutoff(&svd.singular_values, rel_tol);
    let u = svd.u.expect("u requested");
    let cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|i| svd.singular_values[*i] > cut)
        .collect();
    Ok(DMatrix::from_fn(m.nrows(), cols.len(), |r, c| u[(r, cols[c])]))
}

/// Orthonormal basis of the kernel of `m` (as columns of the result).
pub fn nullspace(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let n = m.ncols();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if m.nrows() == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    let svd = svd_of(m)?;
    let cut = sv_cutoff(&svd.singular_values, rel_tol);
    let vt = svd.v_t.expect("v_t requested");
    // Rows of V^T beyond the numerical rank, plus the kernel directions that
    // a wide matrix does not expose through singular values at all.
    let k = svd.singular_values.len();
    let mut cols: Vec<DVector<f64>> = (0..k)
        .filter(|i| svd.singular_values[*i] <= cut)
        .map(|i| vt.row(i).transpose())
        .collect();
    if k < n {
        // Complete the kernel basis for n > min(rows, cols).
        let mut basis: Vec<DVector<f64>> = (0..k).map(|i| vt.row(i).transpose()).collect();
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            for b in &basis {
                let d = b.dot(&e);
                e.axpy(-d, b, 1.0);
            }
            let nrm = e.norm();
            if nrm > 0.5 {
                e /= nrm;
                basis.push(e.clone());
                cols.push(e);
            }
            if basis.len() == n {
                break;
            }
        }
    }
    Ok(DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r]))
}

/// Least-squares solve `m x = rhs` through the pseudo-inverse.
pub fn pinv_apply(m: &DMatrix<f64>, rhs: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    if m.ncols() == 0 {
        return Ok(DMatrix::zeros(0, rhs.ncols()));
    }
    let svd = svd_of(m)?;
    let cut = sv_cutoff(&svd.singular_values, rel_tol);
    svd.clone()
        .pseudo_inverse(cut)
        .map(|p| &p * rhs)
        .map_err(|e| Error::NoConvergence(format!("pseudo-inverse: {e}")))
}

/// Orthonormal basis of `range(a) + range(b)`.
pub fn span_sum(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    debug_assert_eq!(a.nrows(), b.nrows());
    let mut joined = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    joined.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    joined
        .view_mut((0, a.ncols()), (b.nrows(), b.ncols()))
        .copy_from(b);
    range_basis(&joined, rel_tol)
}

/// Orthonormal basis of `range(a) ∩ range(b)`.
///
/// Computed from the kernel of `[a  -b]`: any kernel vector `(x, y)` gives
/// the common point `a x = b y`.
pub fn span_intersect(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    debug_assert_eq!(a.nrows(), b.nrows());
    if a.ncols() == 0 || b.ncols() == 0 {
        return Ok(DMatrix::zeros(a.nrows(), 0));
    }
    let mut joined = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    joined.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    joined
        .view_mut((0, a.ncols()), (b.nrows(), b.ncols()))
        .copy_from(&(-b));
    let ker = nullspace(&joined, rel_tol)?;
    let x_part = ker.rows(0, a.ncols()).into_owned();
    range_basis(&(a * x_part), rel_tol)
}

/// Orthonormal basis of the orthogonal complement of `range(basis)` in
/// `R^n` (where `n = basis.nrows()`).
pub fn complement(basis: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    nullspace(&basis.transpose(), rel_tol)
}

/// Orthogonal projector `Q Qᵀ` onto the span of the (orthonormal) columns.
pub fn projector(basis: &DMatrix<f64>) -> DMatrix<f64> {
    basis * basis.transpose()
}

/// Spectral norm of `m` (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0.0);
    }
    let svd = nalgebra::SVD::try_new(m.clone(), false, false, f64::EPSILON, 4096)
        .ok_or_else(|| Error::NoConvergence("spectral norm".into()))?;
    Ok(svd.singular_values.iter().cloned().fold(0.0, f64::max))
}

/// Distance `‖P_a − P_b‖₂` between the projectors onto two spans given by
/// orthonormal bases.
pub fn projector_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    spectral_norm(&(projector(a) - projector(b)))
}

/// All eigenvalues of a real square matrix as `(re, im)` pairs.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 8192)
        .ok_or_else(|| Error::NoConvergence("Schur decomposition".into()))?;
    let eig = schur.complex_eigenvalues();
    Ok(eig.iter().map(|z| (z.re, z.im)).collect())
}

// ---------------------------------------------------------------------------
// Matrix exponential (Higham's scaling-and-squaring Padé ladder).
// ---------------------------------------------------------------------------

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    // Odd/even Padé polynomials for orders 3, 5, 7, 9.
    let n = a.nrows();
    let id = DMatrix::identity(n, n);
    let a2 = a * a;
    let mut u = &id * b[1];
    let mut v = &id * b[0];
    let mut pow = id.clone();
    let mut idx = 2;
    while idx < b.len() {
        pow = &pow * &a2;
        v += &pow * b[idx];
        if idx + 1 < b.len() {
            u += &pow * b[idx + 1];
        }
        idx += 2;
    }
    (a * u, v)
}

/// Matrix exponential `e^m` by scaling-and-squaring with Padé approximants.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = one_norm(m);
    let theta = [
        (3usize, 1.495585217958292e-2),
        (5, 2.539_398_330_063_23e-1),
        (7, 9.504178996162932e-1),
        (9, 2.097847961257068e0),
    ];
    let coeffs3 = [120.0, 60.0, 12.0, 1.0];
    let coeffs5 = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
    let coeffs7 = [
        17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
    ];
    let coeffs9 = [
        17643225600.0,
        8821612800.0,
        2075673600.0,
        302702400.0,
        30270240.0,
        2162160.0,
        110880.0,
        3960.0,
        90.0,
        1.0,
    ];
    let (u, v) = if norm <= theta[0].1 {
        pade_low(m, &coeffs3)
    } else if norm <= theta[1].1 {
        pade_low(m, &coeffs5)
    } else if norm <= theta[2].1 {
        pade_low(m, &coeffs7)
    } else if norm <= theta[3].1 {
        pade_low(m, &coeffs9)
    } else {
        // Padé 13 with scaling.
        let theta13 = 5.371920351148152_f64;
        let s = if norm > theta13 {
            (norm / theta13).log2().ceil().max(0.0) as i32
        } else {
            0
        };
        let a = m / 2f64.powi(s);
        let id = DMatrix::identity(n, n);
        let a2 = &a * &a;
        let a4 = &a2 * &a2;
        let a6 = &a2 * &a4;
        let b = &PADE13;
        let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
            + &a6 * b[7]
            + &a4 * b[5]
            + &a2 * b[3]
            + &id * b[1];
        let u = &a * u_inner;
        let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
            + &a6 * b[6]
            + &a4 * b[4]
            + &a2 * b[2]
            + &id * b[0];
        let mut r = (&v - &u)
            .lu()
            .solve(&(&v + &u))
            .ok_or_else(|| Error::NoConvergence("Padé denominator singular".into()))?;
        for _ in 0..s {
            r = &r * &r;
        }
        return Ok(r);
    };
    (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .ok_or_else(|| Error::NoConvergence("Padé denominator singular".into()))
}

/// Exact zero-order-hold pair for `ẋ = F x + w`:
/// returns `(Φ, Ψ) = (e^{F dt}, ∫₀^{dt} e^{F s} ds)`.
///
/// Uses the augmented block trick `exp([[F, I], [0, 0]] dt) = [[Φ, Ψ], [0, I]]`,
/// which stays valid for singular `F`.
pub fn expm_with_integral(f: &DMatrix<f64>, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = f.nrows();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(f * dt));
    aug.view_mut((0, n), (n, n))
        .copy_from(&(DMatrix::identity(n, n) * dt));
    let e = expm(&aug)?;
    let phi = e.view((0, 0), (n, n)).into_owned();
    let psi = e.view((0, n), (n, n)).into_owned();
    Ok((phi, psi))
}

// ---------------------------------------------------------------------------
// Lyapunov certificates.
// ---------------------------------------------------------------------------

/// Solve the observer Lyapunov equation `Fᵀ P + P F = -Q` by Kronecker
/// vectorization (small blocks only).
pub fn lyapunov_solve(f: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    debug_assert_eq!(q.nrows(), n);
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let id = DMatrix::identity(n, n);
    let ft = f.transpose();
    // vec(Fᵀ P) = (I ⊗ Fᵀ) vec(P), vec(P F) = (Fᵀ ⊗ I) vec(P).
    let big = id.kronecker(&ft) + ft.kronecker(&id);
    let rhs = DVector::from_fn(n * n, |i, _| -q[(i % n, i / n)]);
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Synthesis("Lyapunov operator singular (imaginary-axis eigenvalue)".into()))?;
    let p = DMatrix::from_fn(n, n, |r, c| sol[c * n + r]);
    // Symmetrize to wash out round-off.
    Ok((&p + p.transpose()) * 0.5)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(p: &DMatrix<f64>) -> Result<f64> {
    if p.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    let sym = (p + p.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, 8192)
        .ok_or_else(|| Error::NoConvergence("symmetric eigensolver".into()))?;
    Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

// ---------------------------------------------------------------------------
// Largest invariant subspace inside a kernel.
// ---------------------------------------------------------------------------

/// Orthonormal basis of the largest `F`-invariant subspace contained in
/// `ker(M)`, i.e. the unobservable subspace of the finite pair `(M, F)`.
pub fn invariant_kernel(f: &DMatrix<f64>, m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    debug_assert_eq!(m.ncols(), n);
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    // Nested recursion `V ← V ∩ F⁻¹(V)` from `V = ker M`: the chain only
    // shrinks, so the first stationary dimension is the fixed point. Running
    // it on `F/‖F‖` keeps every rank decision on order-one data (invariant
    // subspaces are scale-invariant); stacking `M Fᵏ` powers instead would
    // let ‖F‖ᵏ swamp the cutoff.
    let scale = f.norm();
    let f_hat = if scale > 1.0 { f / scale } else { f.clone() };
    let id = DMatrix::<f64>::identity(n, n);
    let mut v = nullspace(m, rel_tol)?;
    loop {
        if v.ncols() == 0 {
            return Ok(v);
        }
        // x ∈ F⁻¹(span V) ⇔ (I − V Vᵀ) F x = 0; the intersection with
        // span V is the common kernel of the two residual projectors.
        let v_resid = &id - &v * v.transpose();
        let pre = nullspace(&(&v_resid * &f_hat), rel_tol)?;
        let mut stacked = DMatrix::zeros(2 * n, n);
        stacked.view_mut((0, 0), (n, n)).copy_from(&v_resid);
        stacked
            .view_mut((n, 0), (n, n))
            .copy_from(&(&id - &pre * pre.transpose()));
        let next = nullspace(&stacked, rel_tol)?;
        if next.ncols() >= v.ncols() {
            return Ok(next);
        }
        v = next;
    }
}

/// Orthonormal basis of the smallest `F`-invariant subspace containing
/// `range(V)`: the Krylov closure `range([V, FV, F²V, …])`, grown until the
/// rank is stationary.
pub fn krylov_closure(f: &DMatrix<f64>, v: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let mut basis = range_basis(v, rel_tol)?;
    loop {
        if basis.ncols() == 0 {
            return Ok(basis);
        }
        let grown = span_sum(&basis, &(f * &basis), rel_tol)?;
        if grown.ncols() == basis.ncols() {
            return Ok(basis);
        }
        basis = grown;
    }
}

// ---------------------------------------------------------------------------
// Pole placement (output injection) via the dual single-input reduction.
// ---------------------------------------------------------------------------

fn poly_from_roots(roots: &[f64]) -> Vec<f64> {
    // Monic coefficients, lowest order first.
    let mut c = vec![1.0];
    for r in roots {
        let mut next = vec![0.0; c.len() + 1];
        for (i, ci) in c.iter().enumerate() {
            next[i + 1] += ci;
            next[i] -= r * ci;
        }
        c = next;
    }
    c
}

fn eval_matrix_poly(coeffs: &[f64], m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut acc = DMatrix::<f64>::zeros(n, n);
    // Horner on matrices, highest order first.
    for c in coeffs.iter().rev() {
        acc = &acc * m + DMatrix::identity(n, n) * *c;
    }
    acc
}

/// Output-injection pole placement: find `D_o` (n×q) such that
/// `spec(F + D_o M) = targets` (real targets, repeated values allowed).
///
/// Works through the dual controllable pair `(Fᵀ, Mᵀ)` compressed to a single
/// input by a random combination of the output rows; retries with fresh
/// combinations until the placed spectrum verifies, which handles the measure
/// zero combinations that lose controllability.
pub fn place_poles<R: Rng + ?Sized>(
    f: &DMatrix<f64>,
    m: &DMatrix<f64>,
    targets: &[f64],
    tol: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let q = m.nrows();
    debug_assert_eq!(targets.len(), n);
    if n == 0 {
        return Ok(DMatrix::zeros(0, q));
    }
    if q == 0 {
        return Err(Error::Synthesis("pole placement with no outputs".into()));
    }
    let ft = f.transpose();
    let mt = m.transpose();
    let p = poly_from_roots(targets);
    let pf = eval_matrix_poly(&p, &ft);
    for attempt in 0..32 {
        // Deterministic first attempt (uniform combination), then random.
        let u = if attempt == 0 {
            DVector::from_element(q, 1.0)
        } else {
            DVector::from_fn(q, |_, _| rng.sample(rand_distr::StandardNormal))
        };
        let b = &mt * &u;
        // Controllability matrix of (Fᵀ, b).
        let mut ctrb = DMatrix::zeros(n, n);
        let mut col = b.clone();
        for j in 0..n {
            ctrb.set_column(j, &col);
            col = &ft * &col;
        }
        let lu = ctrb.transpose().lu();
        // Ackermann: k = e_nᵀ C⁻¹ p(Fᵀ)  ⇔  Cᵀ kᵀ = e_n, then k p(Fᵀ).
        let mut e_n = DVector::zeros(n);
        e_n[n - 1] = 1.0;
        let Some(w) = lu.solve(&e_n) else { continue };
        let k_row = w.transpose() * &pf;
        // Dual closed loop Fᵀ − b k transposes to F + D_o M with D_o = −kᵀuᵀ.
        let d_o = -(k_row.transpose() * u.transpose());
        let closed = f + &d_o * m;
        let eigs = eigenvalues(&closed)?;
        if spectra_match(&eigs, targets, tol) {
            return Ok(d_o);
        }
    }
    Err(Error::Synthesis(
        "pole placement failed to verify after 32 attempts".into(),
    ))
}

fn spectra_match(eigs: &[(f64, f64)], targets: &[f64], tol: f64) -> bool {
    if eigs.len() != targets.len() {
        return false;
    }
    let mut used = vec![false; targets.len()];
    for (re, im) in eigs {
        if im.abs() > tol.max(1e-7) {
            return false;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, t) in targets.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = (re - t).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, d)) if d <= tol.max(1e-6) * (1.0 + t_scale(targets)) => used[i] = true,
            _ => return false,
        }
    }
    true
}

fn t_scale(targets: &[f64]) -> f64 {
    targets.iter().map(|t| t.abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Hurwitz zeta for analytic tail sums.
// ---------------------------------------------------------------------------

/// Hurwitz zeta `ζ(s, a) = Σ_{n≥0} (a+n)^{-s}` for `s > 1`, `a > 0`,
/// via direct summation plus an Euler–Maclaurin correction.
///
/// Absolute accuracy is far below `1e-13` for the exponents that arise from
/// square-summable tails (`s > 1`).
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    debug_assert!(s > 1.0 && a > 0.0);
    const N: usize = 64;
    let mut sum = 0.0;
    for n in 0..N {
        sum += (a + n as f64).powf(-s);
    }
    let x = a + N as f64;
    // Tail: x^{1-s}/(s-1) + x^{-s}/2 + Σ B_{2j}/(2j)! (s)_{2j-1} x^{-s-2j+1}.
    sum += x.powf(1.0 - s) / (s - 1.0);
    sum += 0.5 * x.powf(-s);
    let bern = [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
    ];
    let mut poch = s; // (s)_1
    let mut fact = 2.0; // (2j)! for j = 1
    for (j, b) in bern.iter().enumerate() {
        let power = x.powf(-s - 2.0 * j as f64 - 1.0);
        sum += b / fact * poch * power;
        // Update (s)_{2j+1} -> (s)_{2j+3} and (2j)! -> (2j+2)!.
        poch *= (s + 2.0 * j as f64 + 1.0) * (s + 2.0 * j as f64 + 2.0);
        fact *= (2.0 * j as f64 + 3.0) * (2.0 * j as f64 + 4.0);
    }
    sum
}

/// Partial sum `Σ_{k=k0}^{k1} k^{-s}` evaluated directly (used to split
/// analytic sums at the inspection window).
pub fn power_partial_sum(s: f64, k0: u32, k1: u32) -> f64 {
    (k0..=k1).map(|k| (k as f64).powf(-s)).sum()
}
