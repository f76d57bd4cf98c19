//! Frequency-domain output-strict-passivity test.
//!
//! A stable square system `G` has OSP index at least `ρ` iff the Popov
//! function `Π(jω) = G(jω) + G(jω)ᴴ − 2ρ·G(jω)ᴴG(jω)` is positive
//! semidefinite for every ω. Two checks are combined:
//!
//! * a grid sweep of `λ_min(Π(jω))` with refinement, and
//! * an exact boundary test: `Π` can only lose definiteness by acquiring a
//!   zero on the imaginary axis, so the zeros of a realization of `Π` (the
//!   eigenvalues of its Hamiltonian, or of its zero dynamics when the
//!   feedthrough of `Π` vanishes) are checked for imaginary-axis members,
//!   together with the sign of the high-frequency asymptote.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use super::freq::{refined_max, GridSpec};
use super::CertifyError;
use crate::linalg::{eigenvalues, herm_eigenvalues, null_space, sym_eigenvalues, symmetrize, CMatrix};
use crate::lti::LtiSystem;

/// Eigenvalues closer than this (relative to their modulus) to the imaginary
/// axis count as boundary crossings.
const AXIS_TOL: f64 = 1e-7;

/// Realization `(A_Π, B_Π, C_Π, D_Π)` of the Popov function.
pub struct PopovRealization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

/// `Π = G + G~(I − 2ρG)` with `G~(s) = Gᵀ(−s)`.
pub fn popov_realization(sys: &LtiSystem, rho: f64) -> PopovRealization {
    let n = sys.states();
    let m = sys.inputs();
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let eye = DMatrix::<f64>::identity(m, m);
    let mut ap = DMatrix::zeros(2 * n, 2 * n);
    ap.view_mut((0, 0), (n, n)).copy_from(a);
    ap.view_mut((n, 0), (n, n)).copy_from(&(c.transpose() * c * (2.0 * rho)));
    ap.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let mut bp = DMatrix::zeros(2 * n, m);
    bp.view_mut((0, 0), (n, m)).copy_from(b);
    bp.view_mut((n, 0), (n, m)).copy_from(&(-c.transpose() * (&eye - d * (2.0 * rho))));
    let mut cp = DMatrix::zeros(m, 2 * n);
    cp.view_mut((0, 0), (m, n)).copy_from(&(c - d.transpose() * c * (2.0 * rho)));
    cp.view_mut((0, n), (m, n)).copy_from(&b.transpose());
    let dp = d + d.transpose() - d.transpose() * d * (2.0 * rho);
    PopovRealization { a: ap, b: bp, c: cp, d: dp }
}

/// Finite zeros of the Popov function together with the verdict on its
/// behaviour at infinity.
#[derive(Debug, Clone)]
pub struct PopovZeros {
    pub zeros: Vec<Complex<f64>>,
    /// The high-frequency asymptote of `Π` is positive definite.
    pub asymptote_ok: bool,
    /// Relative degree of `Π` used for the deflation (0 = invertible feedthrough).
    pub relative_degree: usize,
}

fn is_zero(m: &DMatrix<f64>, scale: f64) -> bool {
    m.norm() <= 1e-10 * scale.max(f64::MIN_POSITIVE)
}

pub fn popov_zeros(sys: &LtiSystem, rho: f64) -> PopovZeros {
    let real = popov_realization(sys, rho);
    let n2 = real.a.nrows();
    let d_scale = sys.d.norm().powi(2).max(sys.d.norm()) * (1.0 + 2.0 * rho);

    if n2 == 0 || !is_zero(&real.d, d_scale.max(1e-300)) || sys.states() == 0 {
        let ev = sym_eigenvalues(&real.d);
        let dmax = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let ok = ev.first().map_or(true, |&v| v > 1e-12 * dmax.max(f64::MIN_POSITIVE));
        if !ok || n2 == 0 {
            return PopovZeros { zeros: Vec::new(), asymptote_ok: ok, relative_degree: 0 };
        }
        let dinv = real.d.clone().try_inverse();
        let Some(dinv) = dinv else {
            return PopovZeros { zeros: Vec::new(), asymptote_ok: false, relative_degree: 0 };
        };
        let ham = &real.a - &real.b * dinv * &real.c;
        return PopovZeros { zeros: eigenvalues(&ham), asymptote_ok: true, relative_degree: 0 };
    }

    // Feedthrough vanishes: find the first nonzero Markov parameter C_Π A_Π^k B_Π.
    let mut rows = vec![real.c.clone()];
    let mut markov = &real.c * &real.b;
    let mut k = 0;
    loop {
        let scale = rows[k].norm() * real.b.norm();
        if !is_zero(&markov, scale) {
            break;
        }
        if k + 1 >= n2 {
            // Π ≡ 0 (e.g. a lossless system at its exact index); never strictly positive.
            return PopovZeros { zeros: Vec::new(), asymptote_ok: false, relative_degree: k + 1 };
        }
        let next = &rows[k] * &real.a;
        markov = &next * &real.b;
        rows.push(next);
        k += 1;
    }
    // Π(jω) ≈ M_k / (jω)^{k+1}: Hermitian PSD asymptote only for odd k with
    // (−1)^{(k+1)/2}·M_k ≻ 0. Only k = 1 occurs for physical strictly proper loops.
    if k != 1 {
        return PopovZeros { zeros: Vec::new(), asymptote_ok: false, relative_degree: k + 1 };
    }
    let lead = -&markov;
    let ev = sym_eigenvalues(&lead);
    let lmax = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let skew = (&lead - lead.transpose()).norm();
    if ev[0] <= 1e-12 * lmax || skew > 1e-8 * lead.norm() {
        return PopovZeros { zeros: Vec::new(), asymptote_ok: false, relative_degree: k + 1 };
    }
    let Some(minv) = markov.clone().try_inverse() else {
        return PopovZeros { zeros: Vec::new(), asymptote_ok: false, relative_degree: k + 1 };
    };
    let last = rows.last().expect("at least C_Π");
    // u = −M_k⁻¹ C_Π A_Π^{k+1} ξ keeps the output identically zero.
    let closed = &real.a - &real.b * minv * last * &real.a;
    // Zero dynamics live on ker [C_Π; C_Π A_Π; …; C_Π A_Π^k]; normalize rows first.
    let mut stacked = DMatrix::zeros(rows.len() * real.c.nrows(), n2);
    for (i, r) in rows.iter().enumerate() {
        for row in 0..r.nrows() {
            let v = r.row(row);
            let nrm = v.norm();
            if nrm > 0.0 {
                stacked.row_mut(i * r.nrows() + row).copy_from(&(v / nrm));
            }
        }
    }
    let basis = null_space(&stacked, 1e-10);
    let reduced = basis.transpose() * closed * &basis;
    PopovZeros { zeros: eigenvalues(&reduced), asymptote_ok: true, relative_degree: k + 1 }
}

/// `λ_min(Π(jω))` divided by the size of the terms that form `Π`.
pub fn popov_margin_at(sys: &LtiSystem, rho: f64, omega: f64) -> f64 {
    let Some(g) = sys.freq_response(omega) else {
        return f64::NEG_INFINITY;
    };
    let gh = g.adjoint();
    let sum: CMatrix = &g + &gh;
    let quad: CMatrix = &gh * &g;
    let pi = &sum - quad.scale(2.0 * rho);
    let lmin = herm_eigenvalues(&pi)[0];
    let scale = sum.norm() + 2.0 * rho * quad.norm();
    if scale == 0.0 {
        0.0
    } else {
        lmin / scale
    }
}

/// Detailed result of the frequency-domain OSP test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OspFreqReport {
    pub rho: f64,
    pub passes: bool,
    /// Smallest normalized eigenvalue of `Π(jω)` found on the refined grid.
    pub grid_margin: f64,
    pub grid_worst_omega: f64,
    pub grid_ok: bool,
    pub asymptote_ok: bool,
    /// Imaginary-axis zeros of `Π` (as frequencies, rad/s).
    pub crossings: Vec<f64>,
}

pub fn osp_freq_analysis(sys: &LtiSystem, rho: f64, grid: &GridSpec) -> Result<OspFreqReport, CertifyError> {
    if !sys.is_square_io() {
        return Err(CertifyError::NotSquare);
    }
    super::require_hurwitz(sys)?;
    let (grid_worst_omega, neg_margin) = refined_max(grid, |w| -popov_margin_at(sys, rho, w));
    let grid_margin = -neg_margin;
    let grid_ok = grid_margin >= -1e-10;

    let pz = popov_zeros(sys, rho);
    let scale = crate::linalg::spectral_radius(&sys.a).max(1e-300);
    let crossings: Vec<f64> = pz
        .zeros
        .iter()
        .filter(|z| z.re.abs() <= AXIS_TOL * z.norm() || z.norm() <= 1e-12 * scale)
        .map(|z| z.im.abs())
        .collect();
    let passes = grid_ok && pz.asymptote_ok && crossings.is_empty();
    Ok(OspFreqReport {
        rho,
        passes,
        grid_margin,
        grid_worst_omega,
        grid_ok,
        asymptote_ok: pz.asymptote_ok,
        crossings,
    })
}

/// True iff the loop is output strictly passive with index at least `rho`.
pub fn osp_freq_test(sys: &LtiSystem, rho: f64, grid: &GridSpec) -> Result<bool, CertifyError> {
    Ok(osp_freq_analysis(sys, rho, grid)?.passes)
}

/// Largest `ρ` the static pencil `D + Dᵀ − 2ρDᵀD ⪰ 0` allows.
fn static_index(d: &DMatrix<f64>) -> Result<f64, CertifyError> {
    let h = d + d.transpose();
    if sym_eigenvalues(&h).first().copied().unwrap_or(0.0) < 0.0 {
        return Err(CertifyError::NotPassive);
    }
    let q = d.transpose() * d * 2.0;
    // ρ* = min over v of vᵀHv / vᵀQv, via the Cholesky factor of H.
    let Some(chol) = h.clone().cholesky() else {
        return Err(CertifyError::NotPassive);
    };
    let linv = chol.l().try_inverse().ok_or(CertifyError::NotPassive)?;
    let eig = symmetrize(&(&linv * &q * linv.transpose())).symmetric_eigen();
    let (k, lmax) = eig.eigenvalues.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    if lmax <= 0.0 {
        return Err(CertifyError::IndexUnbounded);
    }
    // Rayleigh quotient at the extremal vector, scaled so its largest entry is
    // exactly 1; this recovers exact values such as ρ* = 1 for D = I.
    let mut v = linv.transpose() * eig.eigenvectors.column(k);
    let big = v.iter().copied().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
    v /= big;
    let num = v.dot(&(&h * &v));
    let den = v.dot(&(&q * &v));
    Ok(if den > 0.0 { num / den } else { 1.0 / lmax })
}

/// Grid estimate of the OSP index, `min_ω max{ρ : Π_ρ(jω) ⪰ 0}`.
fn grid_index_estimate(sys: &LtiSystem, grid: &GridSpec) -> f64 {
    let mut best = f64::INFINITY;
    for w in grid.omegas() {
        let Some(g) = sys.freq_response(w) else { continue };
        let gh = g.adjoint();
        let sum: CMatrix = &g + &gh;
        let quad: CMatrix = (&gh * &g).scale(2.0);
        let Some(chol) = sum.clone().cholesky() else {
            return 0.0;
        };
        let Some(linv) = chol.l().try_inverse() else { return 0.0 };
        let s = &linv * quad * linv.adjoint();
        let lmax = herm_eigenvalues(&s).last().copied().unwrap_or(0.0);
        if lmax > 0.0 {
            best = best.min(1.0 / lmax);
        }
    }
    best
}

/// Largest OSP index (to within `tol`, never above the true value by more
/// than `tol`), found by bisection on [`osp_freq_test`].
pub fn max_osp_index(sys: &LtiSystem, tol: f64, grid: &GridSpec) -> Result<f64, CertifyError> {
    if !sys.is_square_io() {
        return Err(CertifyError::NotSquare);
    }
    if sys.states() == 0 {
        return static_index(&sys.d);
    }
    super::require_hurwitz(sys)?;
    if !osp_freq_test(sys, 0.0, grid)? {
        return Err(CertifyError::NotPassive);
    }
    let est = grid_index_estimate(sys, grid);
    let mut lo = 0.0;
    let mut hi = if est.is_finite() { est + tol } else { 1.0 };
    let mut expansions = 0;
    while osp_freq_test(sys, hi, grid)? {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 60 {
            return Err(CertifyError::IndexUnbounded);
        }
    }
    if lo == 0.0 && est.is_finite() {
        let guess = (est - 0.25 * tol).max(0.0);
        if guess > 0.0 && osp_freq_test(sys, guess, grid)? {
            lo = guess;
        }
    }
    while hi - lo > 0.5 * tol {
        let mid = 0.5 * (lo + hi);
        if osp_freq_test(sys, mid, grid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scalar_lag() -> LtiSystem {
        LtiSystem::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
    }

    #[test]
    fn memoryless_identity() {
        let s = LtiSystem::static_gain(DMatrix::identity(2, 2));
        let g = GridSpec::default();
        assert!(osp_freq_test(&s, 0.999, &g).unwrap());
        assert!(!osp_freq_test(&s, 1.001, &g).unwrap());
        let rho = max_osp_index(&s, 1e-4, &g).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_lag_threshold() {
        let g = GridSpec::default();
        assert!(osp_freq_test(&scalar_lag(), 0.99, &g).unwrap());
        assert!(!osp_freq_test(&scalar_lag(), 1.01, &g).unwrap());
        let rho = max_osp_index(&scalar_lag(), 1e-4, &g).unwrap();
        assert!((rho - 1.0).abs() <= 1e-4, "{rho}");
    }

    #[test]
    fn skew_cb_is_not_passive() {
        let s = LtiSystem::new(
            -DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
        );
        assert!(!osp_freq_test(&s, 0.0, &GridSpec::default()).unwrap());
        assert!(matches!(max_osp_index(&s, 1e-4, &GridSpec::default()), Err(CertifyError::NotPassive)));
    }

    #[test]
    fn crossing_detected_off_grid() {
        // Lightly damped mode whose passivity violation lives between grid samples.
        let s = scalar_lag();
        let pz = popov_zeros(&s, 1.5);
        assert!(!pz.asymptote_ok);
        let pz = popov_zeros(&s, 0.5);
        assert!(pz.asymptote_ok && pz.zeros.is_empty());
    }
}
