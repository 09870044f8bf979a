//! Small dense linear-algebra kernels not covered directly by nalgebra:
//! an LU factorization that can also solve with the transpose (needed by the
//! 1-norm condition estimator), spectral helpers and a rank-revealing
//! reachable-subspace computation.

use nalgebra::{DMatrix, DVector};

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct DenseLu {
    lu: DMatrix<f64>,
    perm: Vec<usize>,
    singular: bool,
}

impl DenseLu {
    pub fn new(mut a: DMatrix<f64>) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        let mut perm: Vec<usize> = (0..n).collect();
        let mut singular = false;
        for k in 0..n {
            let (mut p, mut best) = (k, a[(k, k)].abs());
            for r in k + 1..n {
                let v = a[(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                singular = true;
                continue;
            }
            if p != k {
                a.swap_rows(p, k);
                perm.swap(p, k);
            }
            let pivot = a[(k, k)];
            for r in k + 1..n {
                let f = a[(r, k)] / pivot;
                a[(r, k)] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        a[(r, c)] -= f * a[(k, c)];
                    }
                }
            }
        }
        DenseLu {
            lu: a,
            perm,
            singular,
        }
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut x = DVector::from_fn(n, |i, _| b[self.perm[i]]);
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    /// Solves `A^T x = b`.
    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lu[(k, i)] * y[k];
            }
            y[i] = s / self.lu[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.lu[(k, i)] * y[k];
            }
            y[i] = s;
        }
        let mut x = DVector::zeros(n);
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            out.set_column(c, &self.solve(&b.column(c).into_owned()));
        }
        out
    }

    /// Hager/Higham estimate of `|A^{-1}|_1`.
    pub fn inverse_norm1_estimate(&self) -> f64 {
        if self.singular {
            return f64::INFINITY;
        }
        let n = self.dim();
        let mut x = DVector::from_element(n, 1.0 / n as f64);
        let mut estimate = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            estimate = y.lp_norm(1);
            let sign = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
            let z = self.solve_transpose(&sign);
            let (j, zmax) = z
                .iter()
                .enumerate()
                .map(|(j, v)| (j, v.abs()))
                .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
            if zmax <= z.dot(&x) {
                break;
            }
            x = DVector::zeros(n);
            x[j] = 1.0;
        }
        // Higham's alternating-sign test vector guards against bad cases.
        let alt = DVector::from_fn(n, |i, _| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            s * (1.0 + i as f64 / (n.max(2) - 1) as f64)
        });
        let alt_est = 2.0 * self.solve(&alt).lp_norm(1) / (3.0 * n as f64);
        if estimate.is_finite() {
            estimate.max(alt_est)
        } else {
            f64::INFINITY
        }
    }
}

pub fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.lp_norm(1))
        .fold(0.0, f64::max)
}

/// 1-norm condition number estimate of `a`.
pub fn condition_estimate(a: &DMatrix<f64>, lu: &DenseLu) -> f64 {
    norm1(a) * lu.inverse_norm1_estimate()
}

/// Spectral norm.
pub fn norm2(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

/// Diagonal balancing `b = D^-1 a D` with power-of-two scalings that equalize
/// row and column norms. Returns `b` and the diagonal of `D`.
pub fn balance(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    let mut b = a.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let total = c + r;
            let mut f = 1.0;
            let (mut c2, mut r2) = (c, r);
            while c2 < r2 / 2.0 {
                c2 *= 2.0;
                r2 /= 2.0;
                f *= 2.0;
            }
            while c2 >= r2 * 2.0 {
                c2 /= 2.0;
                r2 *= 2.0;
                f /= 2.0;
            }
            if (c2 + r2) < 0.95 * total {
                converged = false;
                d[i] *= f;
                for j in 0..n {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
    }
    (b, d)
}

/// Real Schur decomposition `a = u t u^T`: Hessenberg reduction followed by
/// the Francis double-shift QR iteration with exceptional shifts. Real
/// eigenvalue pairs are split into triangular form; complex pairs remain as
/// 2x2 blocks. `None` if the iteration does not converge.
pub fn real_schur(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let nn = a.nrows();
    if nn == 0 {
        return Some((DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)));
    }
    let (mut v, mut h) = nalgebra::linalg::Hessenberg::new(a.clone()).unpack();
    for j in 0..nn {
        for i in j + 2..nn {
            h[(i, j)] = 0.0;
        }
    }
    let eps = f64::EPSILON;
    let mut exshift = 0.0;
    let norm: f64 = (0..nn)
        .map(|i| (i.saturating_sub(1)..nn).map(|j| h[(i, j)].abs()).sum::<f64>())
        .sum();
    let mut n = nn as isize - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    let (mut p, mut q, mut r, mut s, mut z);
    let (mut x, mut y, mut w);
    while n >= 0 {
        let nu = n as usize;
        let mut l = nu;
        while l > 0 {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].abs() < eps * s {
                h[(l, l - 1)] = 0.0;
                break;
            }
            l -= 1;
        }
        if l == nu {
            h[(nu, nu)] += exshift;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            p = (h[(nu - 1, nu - 1)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[(nu, nu)] += exshift;
            h[(nu - 1, nu - 1)] += exshift;
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                x = h[(nu, nu - 1)];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;
                for j in nu - 1..nn {
                    z = h[(nu - 1, j)];
                    h[(nu - 1, j)] = q * z + p * h[(nu, j)];
                    h[(nu, j)] = q * h[(nu, j)] - p * z;
                }
                for i in 0..=nu {
                    z = h[(i, nu - 1)];
                    h[(i, nu - 1)] = q * z + p * h[(i, nu)];
                    h[(i, nu)] = q * h[(i, nu)] - p * z;
                }
                for i in 0..nn {
                    z = v[(i, nu - 1)];
                    v[(i, nu - 1)] = q * z + p * v[(i, nu)];
                    v[(i, nu)] = q * v[(i, nu)] - p * z;
                }
                h[(nu, nu - 1)] = 0.0;
            }
            n -= 2;
            iter = 0;
        } else {
            x = h[(nu, nu)];
            y = h[(nu - 1, nu - 1)];
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            if iter == 10 {
                exshift += x;
                for i in 0..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;
            total += 1;
            if total > 100 * nn.max(10) {
                return None;
            }

            let mut m = nu - 2;
            loop {
                z = h[(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - r - s;
                r = h[(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[(m, m - 1)].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs()))
                {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nu {
                h[(i, i - 2)] = 0.0;
                if i > m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }
            for k in m..nu {
                let notlast = k + 1 != nu;
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[(k, k - 1)] = -s * x;
                    } else if l != m {
                        h[(k, k - 1)] = -h[(k, k - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..nn {
                        p = h[(k, j)] + q * h[(k + 1, j)];
                        if notlast {
                            p += r * h[(k + 2, j)];
                            h[(k + 2, j)] -= p * z;
                        }
                        h[(k, j)] -= p * x;
                        h[(k + 1, j)] -= p * y;
                    }
                    for i in 0..=nu.min(k + 3) {
                        p = x * h[(i, k)] + y * h[(i, k + 1)];
                        if notlast {
                            p += z * h[(i, k + 2)];
                            h[(i, k + 2)] -= p * r;
                        }
                        h[(i, k)] -= p;
                        h[(i, k + 1)] -= p * q;
                    }
                    for i in 0..nn {
                        p = x * v[(i, k)] + y * v[(i, k + 1)];
                        if notlast {
                            p += z * v[(i, k + 2)];
                            v[(i, k + 2)] -= p * r;
                        }
                        v[(i, k)] -= p;
                        v[(i, k + 1)] -= p * q;
                    }
                }
            }
        }
    }
    for j in 0..nn {
        for i in j + 2..nn {
            h[(i, j)] = 0.0;
        }
    }
    Some((v, h))
}

/// Eigenvalues of a general real matrix as `(re, im)` pairs, read from the
/// real Schur form. All entries are NaN if the Schur iteration fails.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let n = a.nrows();
    let Some((_, t)) = real_schur(&balance(a).0) else {
        return vec![(f64::NAN, f64::NAN); n];
    };
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    while k < n {
        if k + 1 < n && t[(k + 1, k)].abs() > 0.0 {
            let (a11, a12, a21, a22) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
            let tr = 0.5 * (a11 + a22);
            let det = a11 * a22 - a12 * a21;
            let disc = tr * tr - det;
            if disc >= 0.0 {
                out.push((tr + disc.sqrt(), 0.0));
                out.push((tr - disc.sqrt(), 0.0));
            } else {
                out.push((tr, (-disc).sqrt()));
                out.push((tr, -(-disc).sqrt()));
            }
            k += 2;
        } else {
            out.push((t[(k, k)], 0.0));
            k += 1;
        }
    }
    out
}

/// NaN if the eigenvalues could not be computed.
pub fn max_real_eigenvalue(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a)
        .into_iter()
        .map(|(re, _)| re)
        .fold(f64::NEG_INFINITY, |m, re| if re.is_nan() || m.is_nan() { f64::NAN } else { m.max(re) })
}

/// Orthonormal basis for the column space of `m` after removing the
/// components in `basis`, using an SVD with relative threshold `tol`.
fn new_directions(m: &DMatrix<f64>, basis: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let mut r = m.clone();
    if basis.ncols() > 0 {
        // two passes of classical Gram-Schmidt
        for _ in 0..2 {
            let proj = basis * (basis.transpose() * &r);
            r -= proj;
        }
    }
    if r.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = r.svd(true, false);
    let u = svd.u.expect("requested U");
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tol)
        .map(|(i, _)| i)
        .collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |i, j| u[(i, keep[j])])
}

/// Dimension of the reachable subspace of `(a, b)` by block Arnoldi with
/// re-orthogonalization. Directions below `rel_tol` times the scale of the
/// generating block are discarded.
pub fn reachable_dimension(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> usize {
    let n = a.nrows();
    let scale = norm2(b).max(f64::MIN_POSITIVE);
    let mut basis = new_directions(b, &DMatrix::zeros(n, 0), rel_tol * scale);
    let mut frontier = basis.clone();
    let a_scale = norm2(a).max(f64::MIN_POSITIVE);
    while frontier.ncols() > 0 && basis.ncols() < n {
        let next = a * &frontier / a_scale;
        let fresh = new_directions(&next, &basis, rel_tol);
        if fresh.ncols() == 0 {
            break;
        }
        basis = DMatrix::from_fn(n, basis.ncols() + fresh.ncols(), |i, j| {
            if j < basis.ncols() {
                basis[(i, j)]
            } else {
                fresh[(i, j - basis.ncols())]
            }
        });
        frontier = fresh;
    }
    basis.ncols()
}

/// Symmetric part `(a + a^T)/2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn lu_solves_and_transposed_solves() {
        let a = random(12, 1);
        let b = DVector::from_fn(12, |i, _| i as f64 - 3.0);
        let lu = DenseLu::new(a.clone());
        assert!((&a * lu.solve(&b) - &b).amax() < 1e-12);
        assert!((a.transpose() * lu.solve_transpose(&b) - &b).amax() < 1e-12);
    }

    #[test]
    fn condition_estimate_close_to_exact() {
        let a = random(20, 4);
        let lu = DenseLu::new(a.clone());
        let exact = norm1(&a) * norm1(&a.clone().try_inverse().unwrap());
        let est = condition_estimate(&a, &lu);
        assert!(est <= exact * (1.0 + 1e-10));
        assert!(est >= exact / 10.0);
    }

    #[test]
    fn singular_matrix_flagged() {
        let mut a = random(6, 2);
        for c in 0..6 {
            a[(3, c)] = 0.0;
        }
        let lu = DenseLu::new(a.clone());
        assert!(lu.is_singular() || condition_estimate(&a, &lu) > 1e12);
    }

    #[test]
    fn eigenvalues_of_rotation_block() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, -2.0, -1.0, 0.0, 0.0, 0.0, 0.5]);
        let mut ev = eigenvalues(&a);
        ev.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
        assert_relative_eq!(ev[0].0, -1.0, epsilon = 1e-12);
        assert_relative_eq!(ev[0].1.abs(), 2.0, epsilon = 1e-12);
        assert_relative_eq!(ev[2].0, 0.5, epsilon = 1e-12);
        assert_relative_eq!(max_real_eigenvalue(&a), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn schur_reconstructs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 3, 7, 30, 90] {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let (u, t) = real_schur(&a).unwrap();
            assert!((&u * &t * u.transpose() - &a).amax() < 1e-11 * n as f64);
            assert!((u.transpose() * &u - DMatrix::identity(n, n)).amax() < 1e-12 * n as f64);
            for j in 0..n {
                for i in j + 2..n {
                    assert_eq!(t[(i, j)], 0.0);
                }
                if j + 2 < n {
                    assert!(t[(j + 1, j)] == 0.0 || t[(j + 2, j + 1)] == 0.0);
                }
            }
        }
    }

    #[test]
    fn balancing_is_a_similarity() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1e6, 0.0, 1e-6, 2.0, 1e4, 0.0, 1e-4, 3.0]);
        let (b, d) = balance(&a);
        let back = DMatrix::from_diagonal(&d) * &b * DMatrix::from_diagonal(&d.map(|x| 1.0 / x));
        assert!((back - &a).amax() < 1e-9);
        assert!(b.amax() < a.amax());
    }

    #[test]
    fn reachable_dimension_chain() {
        // double integrator chain is fully reachable from its last state
        let n = 6;
        let a = DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
        let mut b = DMatrix::zeros(n, 1);
        b[(n - 1, 0)] = 1.0;
        assert_eq!(reachable_dimension(&a, &b, 1e-10), n);
        let zero_b = DMatrix::zeros(n, 1);
        assert_eq!(reachable_dimension(&a, &zero_b, 1e-10), 0);
    }
}
