//! Search for a storage matrix `P` certifying output strict passivity.
//!
//! The block inequality
//!
//! ```text
//! F(P) = [ AᵀP + PA + 2ρCᵀC    PB − Cᵀ + 2ρCᵀD ]  ⪯ 0,   P ≻ 0
//!        [ (·)ᵀ                 2ρDᵀD − D − Dᵀ  ]
//! ```
//!
//! has a constant lower-right block `S`. Directions in the kernel of `S`
//! force the corresponding columns of the off-diagonal block to vanish,
//! which is an affine equality in `P`; it is eliminated first. On the
//! remaining free parameters the search runs a Lyapunov warm start,
//! alternating projections onto the negative semidefinite cone and, if
//! those stall, a log-barrier Newton method minimizing `λ_max`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{lstsq, null_space, solve_lyapunov, sym_eigenvalues, symmetrize};
use crate::lti::LtiSystem;

/// Allowed positive eigenvalue of `F(P)`, relative to `‖F(P)‖_F`.
pub const LMI_REL_TOL: f64 = 1e-8;
/// Required smallest eigenvalue of `P`, relative to its largest.
pub const P_REL_FLOOR: f64 = 1e-9;

/// A storage matrix and the margins that make it a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CertRepr", into = "CertRepr")]
pub struct PassivityCertificate {
    pub p: DMatrix<f64>,
    pub rho: f64,
    /// Largest eigenvalue of `F(P)`.
    pub lmi_max_eig: f64,
    /// Frobenius norm of `F(P)`, the scale for `lmi_max_eig`.
    pub lmi_norm: f64,
    pub p_min_eig: f64,
}

#[derive(Serialize, Deserialize)]
struct CertRepr {
    /// Row-major.
    p: Vec<Vec<f64>>,
    rho: f64,
    lmi_max_eig: f64,
    lmi_norm: f64,
    p_min_eig: f64,
}

impl TryFrom<CertRepr> for PassivityCertificate {
    type Error = String;
    fn try_from(r: CertRepr) -> Result<Self, String> {
        let n = r.p.len();
        if r.p.iter().any(|row| row.len() != n) {
            return Err(format!("P must be square, got {n} rows of unequal length"));
        }
        let flat: Vec<f64> = r.p.into_iter().flatten().collect();
        Ok(Self {
            p: DMatrix::from_row_slice(n, n, &flat),
            rho: r.rho,
            lmi_max_eig: r.lmi_max_eig,
            lmi_norm: r.lmi_norm,
            p_min_eig: r.p_min_eig,
        })
    }
}

impl From<PassivityCertificate> for CertRepr {
    fn from(c: PassivityCertificate) -> Self {
        CertRepr {
            p: c.p.row_iter().map(|r| r.iter().copied().collect()).collect(),
            rho: c.rho,
            lmi_max_eig: c.lmi_max_eig,
            lmi_norm: c.lmi_norm,
            p_min_eig: c.p_min_eig,
        }
    }
}

impl PassivityCertificate {
    /// Both margins hold.
    pub fn is_valid(&self) -> bool {
        let pmax = sym_eigenvalues(&self.p).last().copied().unwrap_or(0.0);
        self.lmi_max_eig <= LMI_REL_TOL * self.lmi_norm
            && (self.p.nrows() == 0 || self.p_min_eig > P_REL_FLOOR * pmax)
            && (&self.p - self.p.transpose()).norm() <= 1e-10 * self.p.norm().max(1.0)
    }
}

/// Outcome of the LMI search.
#[derive(Debug, Clone)]
pub enum LmiOutcome {
    Feasible(PassivityCertificate),
    /// The barrier lower bound on `min λ_max` is positive, or the equality
    /// part has no solution.
    Infeasible { best_residual: f64 },
    /// Neither a certificate nor a proof within the iteration budget.
    Indeterminate { best_residual: f64 },
}

impl LmiOutcome {
    pub fn certificate(self) -> Option<PassivityCertificate> {
        match self {
            LmiOutcome::Feasible(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, LmiOutcome::Feasible(_))
    }
}

/// `F(P)` for the given system and ρ.
pub fn lmi_matrix(sys: &LtiSystem, p: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let n = sys.states();
    let m = sys.inputs();
    let top = a.transpose() * p + p * a + c.transpose() * c * (2.0 * rho);
    let off = p * b - c.transpose() + c.transpose() * d * (2.0 * rho);
    let s = d.transpose() * d * (2.0 * rho) - d - d.transpose();
    let mut f = DMatrix::zeros(n + m, n + m);
    f.view_mut((0, 0), (n, n)).copy_from(&top);
    f.view_mut((0, n), (n, m)).copy_from(&off);
    f.view_mut((n, 0), (m, n)).copy_from(&off.transpose());
    f.view_mut((n, n), (m, m)).copy_from(&s);
    symmetrize(&f)
}

/// Recomputes the margins of a candidate `P` from scratch.
pub fn verify_certificate(sys: &LtiSystem, p: &DMatrix<f64>, rho: f64) -> PassivityCertificate {
    let f = lmi_matrix(sys, p, rho);
    let lmi_max_eig = sym_eigenvalues(&f).last().copied().unwrap_or(f64::NEG_INFINITY);
    let p_min_eig = sym_eigenvalues(p).first().copied().unwrap_or(f64::INFINITY);
    PassivityCertificate { p: p.clone(), rho, lmi_max_eig, lmi_norm: f.norm(), p_min_eig }
}

fn sym_basis(n: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            out.push(e);
        }
    }
    out
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut m = DMatrix::zeros(ra + rb, ca + cb);
    m.view_mut((0, 0), (ra, ca)).copy_from(a);
    m.view_mut((ra, ca), (rb, cb)).copy_from(b);
    m
}

fn max_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

fn logdet_pd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    Some(chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum())
}

/// The reduced problem `G(y) = G₀ + Σ yₖGₖ ⪯ 0` in the free parameters.
struct Reduced {
    g0: DMatrix<f64>,
    gk: Vec<DMatrix<f64>>,
    /// `P(y) = P₀ + Σ yₖPₖ`.
    p0: DMatrix<f64>,
    pk: Vec<DMatrix<f64>>,
}

impl Reduced {
    fn g(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut g = self.g0.clone();
        for (yk, gk) in y.iter().zip(&self.gk) {
            g += gk * *yk;
        }
        g
    }

    fn p(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut p = self.p0.clone();
        for (yk, pk) in y.iter().zip(&self.pk) {
            p += pk * *yk;
        }
        p
    }

    fn dim(&self) -> usize {
        self.g0.nrows()
    }
}

enum Setup {
    Ready(Reduced, DVector<f64>),
    Infeasible(f64),
}

fn setup(sys: &LtiSystem, rho: f64, eps_rel: f64) -> Setup {
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let n = sys.states();
    let s = symmetrize(&(d.transpose() * d * (2.0 * rho) - d - d.transpose()));
    let eig = s.clone().symmetric_eigen();
    let s_scale = eig.eigenvalues.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let kern_tol = 1e-12 * s_scale;
    let max_s = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max_s > kern_tol {
        return Setup::Infeasible(max_s);
    }
    let kern: Vec<usize> = (0..s.nrows()).filter(|&i| eig.eigenvalues[i].abs() <= kern_tol).collect();
    let range: Vec<usize> = (0..s.nrows()).filter(|&i| eig.eigenvalues[i].abs() > kern_tol).collect();
    let nk = DMatrix::from_fn(s.nrows(), kern.len(), |r, k| eig.eigenvectors[(r, kern[k])]);
    let rr = DMatrix::from_fn(s.nrows(), range.len(), |r, k| eig.eigenvectors[(r, range[k])]);

    let basis = sym_basis(n);
    let t = c.transpose() - c.transpose() * d * (2.0 * rho);
    // Equality (P·B − T)·N = 0, as a linear map on the basis coefficients.
    let (coef0, free) = if kern.is_empty() {
        (DVector::zeros(basis.len()), DMatrix::identity(basis.len(), basis.len()))
    } else {
        let rows = n * kern.len();
        let lmap = DMatrix::from_fn(rows, basis.len(), |r, k| (&basis[k] * b * &nk).as_slice()[r]);
        let rhs = DVector::from_column_slice((&t * &nk).as_slice());
        let coef0 = lstsq(&lmap, &rhs, 1e-12);
        let resid = (&lmap * &coef0 - &rhs).norm();
        if resid > 1e-9 * rhs.norm().max(1.0) {
            return Setup::Infeasible(resid);
        }
        (coef0, null_space(&lmap, 1e-12))
    };
    let combine = |coef: &[f64]| -> DMatrix<f64> {
        let mut p = DMatrix::zeros(n, n);
        for (v, e) in coef.iter().zip(&basis) {
            p += e * *v;
        }
        p
    };
    let p0 = combine(coef0.as_slice());
    let pk: Vec<DMatrix<f64>> = (0..free.ncols()).map(|k| combine(free.column(k).as_slice())).collect();

    // Warm start from a Lyapunov solution, projected onto the affine set.
    let ctc = c.transpose() * c;
    let shift = (ctc.norm() / n.max(1) as f64).max(1e-12);
    let q0 = &ctc + DMatrix::identity(n, n) * shift * 1e-3;
    let y_warm = match solve_lyapunov(a, &q0) {
        Some(pw) => {
            let target = DVector::from_column_slice((pw - &p0).as_slice());
            let cols = DMatrix::from_fn(n * n, pk.len(), |r, k| pk[k].as_slice()[r]);
            lstsq(&cols, &target, 1e-12)
        }
        None => DVector::zeros(pk.len()),
    };

    let w = block_diag(&DMatrix::identity(n, n), &rr);
    let f_of = |p: &DMatrix<f64>, constant: bool| -> DMatrix<f64> {
        let m = b.ncols();
        let mut top = a.transpose() * p + p * a;
        let mut off = p * b;
        let mut corner = DMatrix::zeros(m, m);
        if constant {
            top += &ctc * (2.0 * rho);
            off -= &t;
            corner = s.clone();
        }
        let mut f = DMatrix::zeros(n + m, n + m);
        f.view_mut((0, 0), (n, n)).copy_from(&top);
        f.view_mut((0, n), (n, m)).copy_from(&off);
        f.view_mut((n, 0), (m, n)).copy_from(&off.transpose());
        f.view_mut((n, n), (m, m)).copy_from(&corner);
        w.transpose() * f * &w
    };
    let mut red = Reduced {
        g0: DMatrix::zeros(0, 0),
        gk: Vec::new(),
        p0: p0.clone(),
        pk: pk.clone(),
    };
    let p_warm = red.p(&y_warm);
    let trace = p_warm.trace().abs().max(p0.trace().abs()).max(f64::MIN_POSITIVE);
    let eps = eps_rel * trace / n.max(1) as f64;
    red.g0 = symmetrize(&block_diag(&f_of(&p0, true), &(DMatrix::identity(n, n) * eps - &p0)));
    red.gk = pk.iter().map(|p| symmetrize(&block_diag(&f_of(p, false), &(-p)))).collect();
    Setup::Ready(red, y_warm)
}

/// Alternating projections: clip `G(y)` to the negative semidefinite cone,
/// then return to the affine family by least squares.
fn alternating_projections(red: &Reduced, mut y: DVector<f64>, delta: f64, iters: usize) -> (DVector<f64>, f64) {
    let dim = red.dim();
    if red.gk.is_empty() {
        return (y.clone(), max_eig(&red.g(&y)));
    }
    let cols = DMatrix::from_fn(dim * dim, red.gk.len(), |r, k| red.gk[k].as_slice()[r]);
    let svd = cols.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let pinv = svd.pseudo_inverse(1e-12 * smax.max(f64::MIN_POSITIVE));
    let Ok(pinv) = pinv else {
        return (y.clone(), max_eig(&red.g(&y)));
    };
    let mut best = (y.clone(), max_eig(&red.g(&y)));
    for _ in 0..iters {
        let g = red.g(&y);
        let eig = g.symmetric_eigen();
        let lmax = eig.eigenvalues.max();
        if lmax < best.1 {
            best = (y.clone(), lmax);
        }
        if lmax < -delta {
            break;
        }
        let clipped = eig.eigenvalues.map(|v| v.min(-2.0 * delta));
        let target = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        let rhs = DVector::from_column_slice((target - &red.g0).as_slice());
        let y_next = &pinv * rhs;
        if (&y_next - &y).norm() <= 1e-14 * y.norm().max(1.0) {
            break;
        }
        y = y_next;
    }
    best
}

enum BarrierEnd {
    Feasible(DVector<f64>),
    Infeasible(f64),
    Stalled(f64),
}

/// Minimizes `s` subject to `sI − G(y) ≻ 0` with a log barrier.
fn barrier(red: &Reduced, y0: DVector<f64>, delta: f64, scale: f64) -> BarrierEnd {
    let dim = red.dim();
    let nv = red.gk.len() + 1;
    let eye = DMatrix::<f64>::identity(dim, dim);
    let mut y = y0;
    let mut s = max_eig(&red.g(&y)) + 0.1 * scale;
    let mut tau = 1.0 / scale;
    // dS/dz for z = (y, s).
    let mut ds: Vec<DMatrix<f64>> = red.gk.iter().map(|g| -g).collect();
    ds.push(eye.clone());
    let objective = |y: &DVector<f64>, s: f64, tau: f64| -> Option<f64> {
        let sm = &eye * s - red.g(y);
        logdet_pd(&sm).map(|ld| tau * s - ld)
    };
    for _outer in 0..40 {
        for _ in 0..60 {
            let sm = &eye * s - red.g(&y);
            let Some(si) = sm.clone().cholesky().map(|c| c.inverse()) else { break };
            let sd: Vec<DMatrix<f64>> = ds.iter().map(|d| &si * d).collect();
            let mut grad = DVector::from_iterator(nv, sd.iter().map(|m| -m.trace()));
            grad[nv - 1] += tau;
            let mut hess = DMatrix::zeros(nv, nv);
            for i in 0..nv {
                for j in i..nv {
                    let v = sd[i].component_mul(&sd[j].transpose()).sum();
                    hess[(i, j)] = v;
                    hess[(j, i)] = v;
                }
            }
            let Some(dz) = hess.clone().cholesky().map(|c| c.solve(&(-&grad))).or_else(|| {
                let r = hess.lu().solve(&(-&grad));
                r
            }) else {
                break;
            };
            let decrement = -grad.dot(&dz);
            if !(decrement > 0.0) {
                break;
            }
            let f_old = tau * s - logdet_pd(&sm).unwrap_or(f64::INFINITY);
            let mut step = 1.0;
            let mut accepted = None;
            while step > 1e-12 {
                let yn = &y + dz.rows(0, nv - 1) * step;
                let sn = s + dz[nv - 1] * step;
                if let Some(f_new) = objective(&yn, sn, tau) {
                    if f_new <= f_old - 0.25 * step * decrement {
                        accepted = Some((yn, sn));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((yn, sn)) = accepted else { break };
            y = yn;
            s = sn;
            if decrement / 2.0 < 1e-10 {
                break;
            }
        }
        let lmax = max_eig(&red.g(&y));
        if lmax < -delta {
            return BarrierEnd::Feasible(y);
        }
        let gap = dim as f64 / tau;
        if s - gap > delta {
            return BarrierEnd::Infeasible(lmax);
        }
        if gap < 1e-13 * scale {
            return BarrierEnd::Stalled(lmax);
        }
        tau *= 10.0;
    }
    let lmax = max_eig(&red.g(&y));
    BarrierEnd::Stalled(lmax)
}

/// Full LMI search at the given ρ.
pub fn lmi_search(sys: &LtiSystem, rho: f64) -> LmiOutcome {
    let n = sys.states();
    if n == 0 {
        let cert = verify_certificate(sys, &DMatrix::zeros(0, 0), rho);
        return if cert.lmi_max_eig <= LMI_REL_TOL * cert.lmi_norm.max(f64::MIN_POSITIVE) {
            LmiOutcome::Feasible(cert)
        } else {
            LmiOutcome::Infeasible { best_residual: cert.lmi_max_eig }
        };
    }
    let mut eps_rel = P_REL_FLOOR;
    let mut best_residual = f64::INFINITY;
    for _attempt in 0..3 {
        let (red, y_warm) = match setup(sys, rho, eps_rel) {
            Setup::Ready(r, y) => (r, y),
            Setup::Infeasible(res) => return LmiOutcome::Infeasible { best_residual: res },
        };
        let scale = red.g(&y_warm).norm().max(red.g0.norm()).max(f64::MIN_POSITIVE);
        let delta = 1e-9 * scale;
        let (y_ap, lmax_ap) = alternating_projections(&red, y_warm, delta, 200);
        log::debug!("lmi rho={rho}: projections reached lambda_max/scale = {:.3e}", lmax_ap / scale);
        let y = if lmax_ap < -delta {
            y_ap
        } else {
            match barrier(&red, y_ap, delta, scale) {
                BarrierEnd::Feasible(y) => y,
                BarrierEnd::Infeasible(res) => return LmiOutcome::Infeasible { best_residual: res },
                BarrierEnd::Stalled(res) => return LmiOutcome::Indeterminate { best_residual: res },
            }
        };
        let p = symmetrize(&red.p(&y));
        let cert = verify_certificate(sys, &p, rho);
        best_residual = best_residual.min(cert.lmi_max_eig);
        if cert.is_valid() {
            return LmiOutcome::Feasible(cert);
        }
        // P came out too close to singular for the relative floor: raise ε and retry.
        let pmax = sym_eigenvalues(&p).last().copied().unwrap_or(1.0).abs().max(f64::MIN_POSITIVE);
        let trace = p.trace().abs().max(f64::MIN_POSITIVE);
        eps_rel = (4.0 * P_REL_FLOOR * pmax * n as f64 / trace).max(eps_rel * 10.0);
    }
    LmiOutcome::Indeterminate { best_residual }
}

/// Certificate at ρ if the search finds one.
pub fn lmi_feasibility(sys: &LtiSystem, rho: f64) -> Option<PassivityCertificate> {
    lmi_search(sys, rho).certificate()
}
