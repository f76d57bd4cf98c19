//! Dense linear-algebra helpers for the small matrices that show up in
//! certification and synthesis (n ≤ ~30).

use nalgebra::{Complex, DMatrix, DVector};

pub type CMatrix = DMatrix<Complex<f64>>;

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
            }
        }
    }
    out
}

pub fn to_complex(a: &DMatrix<f64>) -> CMatrix {
    a.map(|x| Complex::new(x, 0.0))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues of a real symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = symmetrize(a).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn sym_max_eig(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn sym_min_eig(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).first().copied().unwrap_or(f64::INFINITY)
}

/// Eigenvalues of a Hermitian matrix, ascending. Uses the real symmetric
/// embedding `[[Re, -Im], [Im, Re]]`, whose spectrum is the Hermitian one
/// with every eigenvalue doubled.
pub fn herm_eigenvalues(h: &CMatrix) -> Vec<f64> {
    let n = h.nrows();
    let mut emb = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = (h[(i, j)] + h[(j, i)].conj()) * 0.5;
            emb[(i, j)] = z.re;
            emb[(i + n, j + n)] = z.re;
            emb[(i, j + n)] = -z.im;
            emb[(i + n, j)] = z.im;
        }
    }
    let all = sym_eigenvalues(&emb);
    all.into_iter().step_by(2).collect()
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.complex_eigenvalues().iter().copied().collect()
}

/// Largest real part over the spectrum (`-inf` for an empty matrix).
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest modulus over the spectrum.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Orthonormal basis (columns) of the null space of `x`. Singular values
/// below `rel_tol·σ_max` count as zero.
pub fn null_space(x: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let cols = x.ncols();
    if x.nrows() == 0 || x.norm() == 0.0 {
        return DMatrix::identity(cols, cols);
    }
    let rows = row_space(x, rel_tol);
    let proj = DMatrix::identity(cols, cols) - &rows * rows.transpose();
    let eig = symmetrize(&proj).symmetric_eigen();
    let keep: Vec<usize> = (0..cols).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
    let mut out = DMatrix::zeros(cols, keep.len());
    for (j, &k) in keep.iter().enumerate() {
        out.set_column(j, &eig.eigenvectors.column(k));
    }
    out
}

/// Orthonormal basis of the row space of `x` (as columns).
pub fn row_space(x: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = x.ncols();
    let svd = x.transpose().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > rel_tol * smax)
        .collect();
    let mut out = DMatrix::zeros(n, keep.len());
    for (j, &k) in keep.iter().enumerate() {
        out.set_column(j, &u.column(k));
    }
    out
}

/// Least-squares / minimum-norm solution of `a·x = b` via SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let eps = rel_tol * svd.singular_values.max();
    svd.solve(b, eps.max(f64::MIN_POSITIVE))
        .expect("U and V were computed")
}

/// Solves `Aᵀ·P + P·A = −Q` by vectorization. Returns `None` when the
/// operator is singular (A has eigenvalues `λᵢ + λⱼ = 0`).
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::identity(n, n);
    let at = a.transpose();
    // vec(AᵀP) = (I ⊗ Aᵀ) vec(P), vec(PA) = (Aᵀ ⊗ I) vec(P) in column-major order.
    let op = kron(&eye, &at) + kron(&at, &eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = op.lu().solve(&rhs)?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Some(symmetrize(&p))
}

/// Stabilizing solution of `AᵀX + XA − XBR⁻¹BᵀX + Q = 0` through the matrix
/// sign function of the Hamiltonian.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let rinv = r.clone().try_inverse()?;
    let g = b * rinv * b.transpose();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut z = h;
    let dim = (2 * n) as f64;
    for _ in 0..100 {
        let zi = z.clone().try_inverse()?;
        let det = z.determinant().abs();
        let c = if det > 0.0 && det.is_finite() {
            det.powf(1.0 / dim)
        } else {
            1.0
        };
        let next = (&z / c + zi * c) * 0.5;
        let diff = (&next - &z).norm();
        let scale = next.norm();
        z = next;
        if diff <= 1e-13 * scale {
            break;
        }
    }
    // [W12; W22 + I] X = −[W11 + I; W21]
    let eye = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&z.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(z.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(z.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-z.view((n, 0), (n, n))));
    let svd = lhs.svd(true, true);
    let x = svd.solve(&rhs, 1e-12).ok()?;
    let x = symmetrize(&x);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_shape_and_values() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = DMatrix::identity(2, 2);
        let k = kron(&a, &b);
        assert_eq!(k, DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 2.0]));
    }

    #[test]
    fn lyapunov_residual() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, -3.0, -1.0, 1.0, 0.5, 0.0, -4.0]);
        let q = DMatrix::identity(3, 3);
        let p = solve_lyapunov(&a, &q).unwrap();
        let res = a.transpose() * &p + &p * &a + &q;
        assert!(res.norm() < 1e-12);
        assert!(sym_min_eig(&p) > 0.0);
    }

    #[test]
    fn care_scalar_closed_form() {
        // a = 1, b = 1, q = 1, r = 1: x = 1 + sqrt(2)
        let one = DMatrix::from_element(1, 1, 1.0);
        let x = solve_care(&one, &one, &one, &one).unwrap();
        assert!((x[(0, 0)] - (1.0 + 2f64.sqrt())).abs() < 1e-10);
    }

    #[test]
    fn care_residual_and_stability() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, -2.0, 0.5]);
        let b = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]);
        let q = DMatrix::identity(3, 3);
        let r = DMatrix::from_element(1, 1, 0.1);
        let x = solve_care(&a, &b, &q, &r).unwrap();
        let k = r.clone().try_inverse().unwrap() * b.transpose() * &x;
        let res = a.transpose() * &x + &x * &a - &x * &b * &k + &q;
        assert!(res.norm() < 1e-8 * x.norm(), "{}", res.norm());
        assert!(spectral_abscissa(&(&a - &b * &k)) < 0.0);
    }

    #[test]
    fn null_space_is_orthogonal_complement() {
        let x = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let n = null_space(&x, 1e-12);
        assert_eq!(n.ncols(), 2);
        assert!((&x * &n).norm() < 1e-12);
        assert!((n.transpose() * &n - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn hermitian_embedding_recovers_spectrum() {
        let h = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex::new(2.0, 0.0),
                Complex::new(0.0, 1.0),
                Complex::new(0.0, -1.0),
                Complex::new(2.0, 0.0),
            ],
        );
        let ev = herm_eigenvalues(&h);
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
    }
}
