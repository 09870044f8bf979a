//! Continuous Lyapunov equation `A^T P + P A = -Q` by the Bartels-Stewart
//! method on the real Schur form of `A`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{balance, real_schur, symmetrize, DenseLu};

/// Diagonal block partition `(start, size)` of a quasi-triangular matrix.
fn blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut out = Vec::new();
    let mut k = 0;
    while k < n {
        if k + 1 < n && t[(k + 1, k)] != 0.0 {
            out.push((k, 2));
            k += 2;
        } else {
            out.push((k, 1));
            k += 1;
        }
    }
    out
}

fn block_eigen_max_real(t: &DMatrix<f64>, (s, size): (usize, usize)) -> f64 {
    if size == 1 {
        t[(s, s)]
    } else {
        let (a, b, c, d) = (t[(s, s)], t[(s, s + 1)], t[(s + 1, s)], t[(s + 1, s + 1)]);
        let tr = 0.5 * (a + d);
        let disc = tr * tr - (a * d - b * c);
        if disc > 0.0 {
            tr + disc.sqrt()
        } else {
            tr
        }
    }
}

/// Solves `a X + X b = c` for blocks of size at most 2 through the Kronecker form.
fn small_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, s) = (a.nrows(), b.nrows());
    let mut k = DMatrix::zeros(p * s, p * s);
    for col in 0..s {
        for r in 0..p {
            for r2 in 0..p {
                k[(col * p + r, col * p + r2)] += a[(r, r2)];
            }
            for col2 in 0..s {
                k[(col * p + r, col2 * p + r)] += b[(col2, col)];
            }
        }
    }
    let rhs = nalgebra::DVector::from_column_slice(c.as_slice());
    let x = DenseLu::new(k).solve(&rhs);
    DMatrix::from_column_slice(p, s, x.as_slice())
}

/// Solves `T^T Y + Y T = C` for upper quasi-triangular `T`.
fn solve_quasi_triangular(t: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let parts = blocks(t);
    let n = t.nrows();
    let mut y = DMatrix::zeros(n, n);
    for &(ks, kn) in &parts {
        for &(is, in_) in &parts {
            let mut rhs = c.view((is, ks), (in_, kn)).into_owned();
            // - sum_{j < i} T_ji^T Y_jk
            if is > 0 {
                rhs -= t.view((0, is), (is, in_)).transpose() * y.view((0, ks), (is, kn));
            }
            // - sum_{l < k} Y_il T_lk
            if ks > 0 {
                rhs -= y.view((is, 0), (in_, ks)) * t.view((0, ks), (ks, kn));
            }
            let a = t.view((is, is), (in_, in_)).transpose();
            let b = t.view((ks, ks), (kn, kn)).into_owned();
            let blk = small_sylvester(&a, &b, &rhs);
            y.view_mut((is, ks), (in_, kn)).copy_from(&blk);
        }
    }
    y
}

/// Solves `A^T P + P A = -Q` for Hurwitz `A` and symmetric positive definite `Q`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension {
            what: "Lyapunov equation",
            expected: format!("{n}x{n}"),
            got: format!("A {}x{}, Q {}x{}", a.nrows(), a.ncols(), q.nrows(), q.ncols()),
        });
    }
    if (q - q.transpose()).amax() > 1e-10 * q.amax().max(1.0) || q.clone().cholesky().is_none() {
        return Err(Error::validation("Q", "must be symmetric positive definite"));
    }
    // D^-1 A D = B: solve B^T P' + P' B = -D Q D, then P = D^-1 P' D^-1
    let (b, d) = balance(a);
    let (u, t) = real_schur(&b).ok_or(Error::NoConvergence { what: "Schur decomposition" })?;
    let max_real = blocks(&t)
        .into_iter()
        .map(|b| block_eigen_max_real(&t, b))
        .fold(f64::NEG_INFINITY, f64::max);
    if !(max_real < 0.0) {
        return Err(Error::NotHurwitz { max_real });
    }
    let dq = DMatrix::from_fn(n, n, |i, j| d[i] * q[(i, j)] * d[j]);
    let c = -(u.transpose() * dq * &u);
    let y = solve_quasi_triangular(&t, &c);
    let scaled = &u * y * u.transpose();
    let p = symmetrize(&DMatrix::from_fn(n, n, |i, j| scaled[(i, j)] / (d[i] * d[j])));
    Ok(p)
}

/// `|A^T P + P A + Q|_F / |Q|_F`.
pub fn lyapunov_residual(a: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (a.transpose() * p + p * a + q).norm() / q.norm()
}

/// Vectorized Kronecker solve, only practical for small dimensions.
pub fn solve_lyapunov_kronecker(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let at = a.transpose();
    let mut k = DMatrix::zeros(n * n, n * n);
    // vec(A^T P) = (I kron A^T) vec P ; vec(P A) = (A^T kron I) vec P
    for col in 0..n {
        for r in 0..n {
            for r2 in 0..n {
                k[(col * n + r, col * n + r2)] += at[(r, r2)];
                k[(col * n + r, r2 * n + r)] += a[(r2, col)];
            }
        }
    }
    let rhs = -nalgebra::DVector::from_column_slice(q.as_slice());
    let lu = DenseLu::new(k);
    if lu.is_singular() {
        return Err(Error::NotHurwitz { max_real: 0.0 });
    }
    let x = lu.solve(&rhs);
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, x.as_slice())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_stable(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shift = crate::linalg::max_real_eigenvalue(&m) + 0.3;
        m - DMatrix::identity(n, n) * shift
    }

    #[test]
    fn half_identity() {
        let a = DMatrix::identity(5, 5) * -0.5;
        let p = solve_lyapunov(&a, &DMatrix::identity(5, 5)).unwrap();
        assert!((p - DMatrix::identity(5, 5)).amax() < 1e-14);
    }

    #[test]
    fn random_stable_residual() {
        for (n, seed) in [(7, 1), (40, 2), (100, 3)] {
            let a = random_stable(n, seed);
            let q = DMatrix::identity(n, n);
            let p = solve_lyapunov(&a, &q).unwrap();
            assert!(lyapunov_residual(&a, &p, &q) < 1e-8);
            assert!(p.clone().cholesky().is_some());
        }
    }

    #[test]
    fn matches_kronecker_oracle() {
        let a = random_stable(9, 5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let l = DMatrix::from_fn(9, 9, |_, _| rng.random_range(-1.0..1.0));
        let q = &l * l.transpose() + DMatrix::identity(9, 9);
        let p1 = solve_lyapunov(&a, &q).unwrap();
        let p2 = solve_lyapunov_kronecker(&a, &q).unwrap();
        assert!((&p1 - &p2).amax() < 1e-10 * p2.amax());
    }

    #[test]
    fn unstable_rejected() {
        let mut a = DMatrix::identity(4, 4) * -1.0;
        a[(2, 2)] = 0.1;
        assert!(matches!(
            solve_lyapunov(&a, &DMatrix::identity(4, 4)),
            Err(Error::NotHurwitz { .. })
        ));
    }
}
