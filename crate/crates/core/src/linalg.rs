//! Dense linear-algebra helpers: Kronecker lifts and a Bartels–Stewart
//! Sylvester/Lyapunov solver on top of nalgebra's real Schur form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `m ⊗ I_d`.
pub fn kron_identity(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    if d == 1 {
        return m.clone();
    }
    DMatrix::from_fn(m.nrows() * d, m.ncols() * d, |r, c| {
        if r % d == c % d {
            m[(r / d, c / d)]
        } else {
            0.0
        }
    })
}

/// Splits a quasi-upper-triangular matrix into its 1×1 and 2×2 diagonal blocks.
fn diagonal_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let tol = 1e-13 * t.amax().max(1.0);
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > tol {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Real Schur decomposition `m = q t qᵀ` with subdiagonal noise below 2×2
/// blocks zeroed.
fn real_schur(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (q, mut t) = m.clone().schur().unpack();
    let n = t.nrows();
    for c in 0..n {
        for r in (c + 2)..n {
            t[(r, c)] = 0.0;
        }
    }
    (q, t)
}

/// Solves `A X + X B = C` for square `A` (n×n), `B` (k×k), `C` (n×k).
///
/// Both coefficient matrices are reduced to real Schur form, then the
/// quasi-triangular system is solved block by block (at most 4×4 per block).
pub fn solve_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let k = b.nrows();
    if !a.is_square() || !b.is_square() || c.shape() != (n, k) {
        return Err(Error::Dimension(format!(
            "sylvester: A {:?}, B {:?}, C {:?}",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    let (u, s) = real_schur(a);
    let (v, t) = real_schur(b);
    let d = u.transpose() * c * &v;
    let row_blocks = diagonal_blocks(&s);
    let col_blocks = diagonal_blocks(&t);
    let mut y = DMatrix::<f64>::zeros(n, k);

    for &(c0, q) in &col_blocks {
        for &(r0, p) in row_blocks.iter().rev() {
            let mut rhs = d.view((r0, c0), (p, q)).into_owned();
            let r_end = r0 + p;
            if r_end < n {
                rhs -= s.view((r0, r_end), (p, n - r_end)) * y.view((r_end, c0), (n - r_end, q));
            }
            if c0 > 0 {
                rhs -= y.view((r0, 0), (p, c0)) * t.view((0, c0), (c0, q));
            }
            let s_ii = s.view((r0, r0), (p, p));
            let t_kk = t.view((c0, c0), (q, q));
            // vec(S Y + Y T) = (I_q ⊗ S + Tᵀ ⊗ I_p) vec(Y), column-major vec.
            let dim = p * q;
            let mut sys = DMatrix::<f64>::zeros(dim, dim);
            for jc in 0..q {
                for ir in 0..p {
                    let row = jc * p + ir;
                    for kr in 0..p {
                        sys[(row, jc * p + kr)] += s_ii[(ir, kr)];
                    }
                    for lc in 0..q {
                        sys[(row, lc * p + ir)] += t_kk[(lc, jc)];
                    }
                }
            }
            let vec_rhs = DVector::from_column_slice(rhs.as_slice());
            let sol = sys.lu().solve(&vec_rhs).ok_or_else(|| {
                Error::Singular(format!(
                    "sylvester block ({r0}, {c0}): A and -B share an eigenvalue"
                ))
            })?;
            y.view_mut((r0, c0), (p, q))
                .copy_from_slice(sol.as_slice());
        }
    }
    Ok(u * y * v.transpose())
}

/// Solves `Aᵀ P + P A = Q` and symmetrizes the result.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = solve_sylvester(&a.transpose(), a, q)?;
    Ok((&p + p.transpose()) * 0.5)
}

/// Smallest real part over the eigenvalues of `m`.
pub fn min_real_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::INFINITY, f64::min)
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn symmetric_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigenvalues();
    (eig.min(), eig.max())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent route: vectorize `A X + X B = C` as a dense Kronecker system.
    fn sylvester_kron(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let k = b.nrows();
        let mut sys = DMatrix::zeros(n * k, n * k);
        for j in 0..k {
            for i in 0..n {
                for r in 0..n {
                    sys[(j * n + i, j * n + r)] += a[(i, r)];
                }
                for l in 0..k {
                    sys[(j * n + i, l * n + i)] += b[(l, j)];
                }
            }
        }
        let x = sys.lu().solve(&DVector::from_column_slice(c.as_slice())).unwrap();
        DMatrix::from_column_slice(n, k, x.as_slice())
    }

    fn pseudo_random(n: usize, m: usize, seed: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |i, j| ((i * 31 + j * 17) as f64 * 0.37 + seed).sin())
    }

    #[test]
    fn kron_identity_layout() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = kron_identity(&m, 2);
        assert_eq!(k[(0, 2)], 2.0);
        assert_eq!(k[(1, 3)], 2.0);
        assert_eq!(k[(0, 3)], 0.0);
        assert_eq!(k[(3, 1)], 3.0);
    }

    #[test]
    fn sylvester_matches_kronecker_route() {
        // Shifted so A and -B have disjoint spectra; non-symmetric so complex pairs appear.
        let a = pseudo_random(5, 5, 0.1) + DMatrix::identity(5, 5) * 4.0;
        let mut b = pseudo_random(3, 3, 1.3) + DMatrix::identity(3, 3) * 3.0;
        b[(0, 1)] += 2.0;
        b[(1, 0)] -= 2.0;
        let c = pseudo_random(5, 3, 2.2);
        let x = solve_sylvester(&a, &b, &c).unwrap();
        let residual = &a * &x + &x * &b - &c;
        assert!(residual.amax() < 1e-11, "residual {}", residual.amax());
        assert!((x - sylvester_kron(&a, &b, &c)).amax() < 1e-10);
    }

    #[test]
    fn lyapunov_of_rotation_plus_damping() {
        // eigenvalues 1 ± 3i: exercises a 2×2 Schur block
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, -3.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let p = solve_lyapunov(&a, &q).unwrap();
        assert!((a.transpose() * &p + &p * &a - &q).amax() < 1e-13);
        assert!((p - DMatrix::identity(2, 2) * 0.5).amax() < 1e-13);
    }

    #[test]
    fn singular_sylvester_is_reported() {
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        let b = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let c = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(matches!(solve_sylvester(&a, &b, &c), Err(Error::Singular(_))));
    }
}
