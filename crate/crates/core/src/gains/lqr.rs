//! Continuous-time LQR through the matrix sign function of the Hamiltonian,
//! refined by Newton-Kleinman steps.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gains::lyapunov::solve_lyapunov;
use crate::linalg::{max_real_eigenvalue, symmetrize, DenseLu};
use crate::linearization::{controllability_rank, LinearModel};

/// Diagonal LQR weights on the first-order state `[x, xdot]` and on the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqrWeights {
    pub payload_position: f64,
    pub payload_attitude: f64,
    pub link_direction: f64,
    pub payload_velocity: f64,
    pub payload_angular_velocity: f64,
    pub link_rate: f64,
    pub control: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        LqrWeights {
            payload_position: 4.0,
            payload_attitude: 2.0,
            link_direction: 0.5,
            payload_velocity: 2.0,
            payload_angular_velocity: 0.5,
            link_rate: 0.05,
            control: 1.0,
        }
    }
}

impl LqrWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("payload_position", self.payload_position),
            ("payload_attitude", self.payload_attitude),
            ("link_direction", self.link_direction),
            ("payload_velocity", self.payload_velocity),
            ("payload_angular_velocity", self.payload_angular_velocity),
            ("link_rate", self.link_rate),
            ("control", self.control),
        ];
        for (name, w) in all {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::validation(format!("weights.{name}"), "must be positive and finite"));
            }
        }
        Ok(())
    }

    /// State weight on `[x, xdot]` for a model of dimension `n`.
    pub fn state_matrix(&self, n: usize) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(2 * n, 2 * n);
        for k in 0..n {
            let (pos, vel) = match k {
                0..=2 => (self.payload_position, self.payload_velocity),
                3..=5 => (self.payload_attitude, self.payload_angular_velocity),
                _ => (self.link_direction, self.link_rate),
            };
            q[(k, k)] = pos;
            q[(n + k, n + k)] = vel;
        }
        q
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub x: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
}

const SIGN_TOL: f64 = 1e-13;
const SIGN_MAX_ITER: usize = 100;
const NEWTON_STEPS: usize = 4;
const RESIDUAL_TOL: f64 = 1e-8;

fn riccati_residual(a: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let r = a.transpose() * x + x * a - x * s * x + q;
    r.norm() / q.norm().max(x.norm()).max(1e-300)
}

/// Solves `A^T X + X A - X B R^-1 B^T X + Q = 0` for the stabilizing `X`.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<RiccatiSolution> {
    let n = a.nrows();
    let r_lu = DenseLu::new(r.clone());
    if r_lu.is_singular() {
        return Err(Error::validation("R", "must be nonsingular"));
    }
    let rinv_bt = r_lu.solve_matrix(&b.transpose());
    let s = symmetrize(&(b * &rinv_bt));

    // H = [A, -S; -Q, -A^T]
    let mut z = DMatrix::zeros(2 * n, 2 * n);
    z.view_mut((0, 0), (n, n)).copy_from(a);
    z.view_mut((0, n), (n, n)).copy_from(&(-&s));
    z.view_mut((n, 0), (n, n)).copy_from(&(-q));
    z.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let dim = (2 * n) as f64;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let lu = z.clone().lu();
        // determinant scaling
        let log_det: f64 = lu.u().diagonal().iter().map(|d| d.abs().ln()).sum();
        let Some(zinv) = lu.try_inverse().filter(|_| log_det.is_finite()) else {
            return Err(Error::RiccatiDiverged {
                iterations,
                residual: f64::INFINITY,
            });
        };
        let c = (-log_det / dim).exp();
        let next = (&z * c + zinv / c) * 0.5;
        let change = (&next - &z).norm() / next.norm();
        z = next;
        if change < SIGN_TOL || (iterations > 5 && change < 1e-10) {
            break;
        }
        if iterations >= SIGN_MAX_ITER || !change.is_finite() {
            return Err(Error::RiccatiDiverged {
                iterations,
                residual: change,
            });
        }
    }

    // [W12; W22 + I] X = -[W11 + I; W21] in the least-squares sense
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&z.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(z.view((n, n), (n, n)) + DMatrix::identity(n, n)));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(z.view((0, 0), (n, n)) + DMatrix::identity(n, n))));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-z.view((n, 0), (n, n))));
    let normal = lhs.transpose() * &lhs;
    let lu = DenseLu::new(normal);
    if lu.is_singular() {
        return Err(Error::RiccatiDiverged {
            iterations,
            residual: f64::INFINITY,
        });
    }
    let mut x = symmetrize(&lu.solve_matrix(&(lhs.transpose() * rhs)));

    // Newton-Kleinman refinement from the sign-function estimate
    for _ in 0..NEWTON_STEPS {
        let k = &rinv_bt * &x;
        let acl = a - b * &k;
        if max_real_eigenvalue(&acl) >= 0.0 {
            break;
        }
        let qk = symmetrize(&(q + k.transpose() * r * &k));
        match solve_lyapunov(&acl, &qk) {
            Ok(next) => {
                let delta = (&next - &x).norm() / next.norm();
                x = next;
                if delta < 1e-14 {
                    break;
                }
            }
            Err(_) => break,
        }
    }

    let residual = riccati_residual(a, &s, q, &x);
    if !(residual < RESIDUAL_TOL) {
        return Err(Error::RiccatiDiverged { iterations, residual });
    }
    let k = &rinv_bt * &x;
    Ok(RiccatiSolution {
        x,
        k,
        residual,
        iterations,
    })
}

/// LQR gains `(Kx, Kxdot)` on the first-order form of the linear model.
pub fn synthesize_gains(lm: &LinearModel, weights: &LqrWeights) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    weights.validate()?;
    let n = lm.dim();
    let rank = controllability_rank(lm)?;
    if rank < 2 * n {
        return Err(Error::Uncontrollable {
            rank,
            expected: 2 * n,
        });
    }
    let (a, b) = lm.first_order()?;
    let q = weights.state_matrix(n);
    let r = DMatrix::identity(lm.inputs(), lm.inputs()) * weights.control;
    let sol = solve_care(&a, &b, &q, &r)?;
    let acl = &a - &b * &sol.k;
    let max_real = max_real_eigenvalue(&acl);
    if !(max_real < 0.0) {
        return Err(Error::NotHurwitz { max_real });
    }
    let kx = sol.k.columns(0, n).into_owned();
    let kxdot = sol.k.columns(n, n).into_owned();
    Ok((kx, kxdot))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_integrator() -> LinearModel {
        LinearModel {
            m: DMatrix::identity(1, 1),
            g: DMatrix::zeros(1, 1),
            b: DMatrix::identity(1, 1),
            load_share: vec![],
        }
    }

    #[test]
    fn double_integrator_closed_form() {
        let (a, b) = double_integrator().first_order().unwrap();
        for (q1, q2, r) in [(1.0, 1.0, 1.0), (4.0, 0.5, 0.2), (0.01, 3.0, 7.0)] {
            let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![q1, q2]));
            let rm = DMatrix::from_element(1, 1, r);
            let sol = solve_care(&a, &b, &q, &rm).unwrap();
            let k1 = (q1 / r).sqrt();
            let k2 = (q2 / r + 2.0 * k1).sqrt();
            assert!((sol.k[(0, 0)] - k1).abs() < 1e-10 * k1.max(1.0));
            assert!((sol.k[(0, 1)] - k2).abs() < 1e-10 * k2.max(1.0));
        }
    }

    #[test]
    fn random_riccati_residual() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 12;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let q = DMatrix::identity(n, n);
        let r = DMatrix::identity(3, 3);
        let sol = solve_care(&a, &b, &q, &r).unwrap();
        assert!(sol.residual < 1e-10);
        assert!(max_real_eigenvalue(&(&a - &b * &sol.k)) < 0.0);
        assert!(sol.x.clone().cholesky().is_some());
    }

    #[test]
    fn large_penalty_small_gain() {
        let mut w = LqrWeights {
            control: 1e8,
            ..LqrWeights::default()
        };
        w.payload_position = 0.1;
        w.payload_velocity = 0.1;
        let (kx, kxdot) = synthesize_gains(&double_integrator(), &w).unwrap();
        assert!(kx.norm() < 1e-2 && kxdot.norm() < 1e-2);
    }

    #[test]
    fn uncontrollable_rejected() {
        let lm = LinearModel {
            m: DMatrix::identity(2, 2),
            g: DMatrix::identity(2, 2),
            b: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            load_share: vec![],
        };
        assert!(matches!(
            synthesize_gains(&lm, &LqrWeights::default()),
            Err(Error::Uncontrollable { .. })
        ));
    }
}
