//! Numeric check of the closed-loop stability inequalities and evaluation of
//! the composite Lyapunov function.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::controller::saturate;
use crate::error::{Error, Result};
use crate::gains::GainSet;
use crate::linalg::norm2;
use crate::linearization::LinearModel;
use crate::manifold::Vec3;
use crate::model::{DerivedMasses, DisturbanceSpec, SystemParams};
use crate::par::{map_range, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertificateConfig {
    /// Bound on the desired quadrotor angular velocity used for `B_2i`.
    pub omega_d_bound: f64,
    /// Attitude domain sizes `psi_1 < 1` and `psi_2 < 2`.
    pub psi1: f64,
    pub psi2: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        CertificateConfig {
            omega_d_bound: 1.0,
            psi1: 0.01,
            psi2: 0.5,
        }
    }
}

impl CertificateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_d_bound.is_finite() && self.omega_d_bound >= 0.0) {
            return Err(Error::validation("certificate.omega_d_bound", "must be non-negative"));
        }
        if !(self.psi1 > 0.0 && self.psi1 < 1.0) {
            return Err(Error::validation("certificate.psi1", "must lie in (0, 1)"));
        }
        if !(self.psi2 > 0.0 && self.psi2 < 2.0) {
            return Err(Error::validation("certificate.psi2", "must lie in (0, 2)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadCertificate {
    pub b1: f64,
    pub b2: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub alpha: f64,
    pub lambda_min_j: f64,
    pub lambda_max_j: f64,
    pub c2: f64,
    pub c2_bound: f64,
    pub c2_bound_exact: f64,
    pub c2_margin: f64,
    pub c2_ok: bool,
    pub w2: [[f64; 2]; 2],
    pub w2_min_eig: f64,
    pub w2_ok: bool,
    pub m21: [[f64; 2]; 2],
    pub m22: [[f64; 2]; 2],
    pub w: [[f64; 2]; 2],
    pub w_min_eig: f64,
    pub w_ok: bool,
    /// Right side of the `lambda_m(W_2i)` requirement and its margin.
    pub coupling_bound: f64,
    pub coupling_margin: f64,
    pub coupling_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub quads: Vec<QuadCertificate>,
    pub c3: f64,
    pub k_max: f64,
    pub k_zm: f64,
    pub alpha: f64,
    pub lambda_min_q: f64,
    pub p_norm: f64,
    /// `lambda_min(Q) - 2 c3 K_max alpha`.
    pub z1_coefficient: f64,
    pub z1_ok: bool,
    /// Admissible small-gain constant, `n min_i lambda_min(W_i) / (2 |P|)`.
    pub gamma_bound: f64,
    pub disturbance_bound: f64,
    pub integral_capacity: f64,
    pub disturbance_ok: bool,
    pub passed: bool,
}

fn sym_min_eig(a: f64, b: f64, c: f64) -> f64 {
    0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt()
}

/// Largest `c_2` allowed by the attitude inequality in its published form.
pub fn c2_bound(k_r: f64, k_omega: f64, b2: f64, lambda_min: f64, lambda_max: f64) -> f64 {
    let first = (k_r * lambda_min).sqrt() / lambda_max;
    let second = 4.0 * k_omega / (8.0 * k_r * lambda_max + (k_omega + b2).powi(2));
    first.min(second)
}

/// Bound that is equivalent to `W_2 > 0` together with `M_21 > 0`. It differs
/// from [`c2_bound`] by a factor `k_R` in the second numerator, so the two
/// agree for `k_R = 1` and the published one is sufficient only for `k_R >= 1`.
pub fn c2_bound_exact(k_r: f64, k_omega: f64, b2: f64, lambda_min: f64, lambda_max: f64) -> f64 {
    let first = (k_r * lambda_min).sqrt() / lambda_max;
    let second = 4.0 * k_r * k_omega / (8.0 * k_r * lambda_max + (k_omega + b2).powi(2));
    first.min(second)
}

/// `W_2i` as a symmetric 2x2 matrix.
pub fn w2_matrix(k_r: f64, k_omega: f64, c2: f64, b2: f64, lambda_max: f64) -> [[f64; 2]; 2] {
    let off = -0.5 * c2 * (k_omega + b2);
    [[c2 * k_r, off], [off, k_omega - 2.0 * c2 * lambda_max]]
}

/// Evaluates every inequality of the stability argument. Failures are data.
pub fn check_certificate(
    gains: &GainSet,
    params: &SystemParams,
    masses: &DerivedMasses,
    lm: &LinearModel,
    disturbance_bound: f64,
    config: &CertificateConfig,
) -> Certificate {
    let n = params.n_quads();
    let pbb = &gains.pb * &lm.b;
    let c3 = 2.0 * norm2(&pbb);
    let k_max = norm2(&gains.kx).max(norm2(&gains.kxdot));
    let k_zm = norm2(&gains.kz_matrix(params));
    let alpha_i = (config.psi1 * (2.0 - config.psi1)).sqrt();
    let alpha = alpha_i * n as f64;
    let lambda_min_q = SymmetricEigen::new(gains.q.clone()).eigenvalues.min();
    let p_norm = norm2(&gains.p);
    let z1_coefficient = lambda_min_q - 2.0 * c3 * k_max * alpha;

    let quads = map_range(Execution::default(), n, |i| {
        let quad = &params.quadrotors[i];
        let att = gains.attitude[i];
        let eig = SymmetricEigen::new(quad.inertia).eigenvalues;
        let (lm_j, lmax_j) = (eig.min(), eig.max());
        let share = lm.load_share.get(i).copied().unwrap_or(0.0);
        let b1 = (masses.quad_total[i] + share) * params.gravity;
        let asym = 2.0 * quad.inertia - nalgebra::Matrix3::identity() * quad.inertia.trace();
        let b2 = SymmetricEigen::new(asym).eigenvalues.amax() * config.omega_d_bound;

        let bound = c2_bound(att.k_r, att.k_omega, b2, lm_j, lmax_j);
        let w2 = w2_matrix(att.k_r, att.k_omega, att.c2, b2, lmax_j);
        let w2_min = sym_min_eig(w2[0][0], w2[0][1], w2[1][1]);
        let m21 = [
            [0.5 * att.k_r, -0.5 * att.c2 * lmax_j],
            [-0.5 * att.c2 * lmax_j, 0.5 * lm_j],
        ];
        let m22 = [
            [0.5 * 2.0 * att.k_r / (2.0 - config.psi2), 0.5 * att.c2 * lmax_j],
            [0.5 * att.c2 * lmax_j, 0.5 * lmax_j],
        ];
        let coupling = c3 * (b1 + gains.sigma * k_zm) / 2.0;
        let w11 = z1_coefficient / n as f64;
        let w = [[w11, -coupling], [-coupling, w2_min]];
        let w_min = sym_min_eig(w11, -coupling, w2_min);
        let coupling_bound = if z1_coefficient > 0.0 {
            n as f64 * coupling * coupling / z1_coefficient
        } else {
            f64::INFINITY
        };
        QuadCertificate {
            b1,
            b2,
            psi1: config.psi1,
            psi2: config.psi2,
            alpha: alpha_i,
            lambda_min_j: lm_j,
            lambda_max_j: lmax_j,
            c2: att.c2,
            c2_bound: bound,
            c2_bound_exact: c2_bound_exact(att.k_r, att.k_omega, b2, lm_j, lmax_j),
            c2_margin: bound - att.c2,
            c2_ok: att.c2 < bound,
            w2,
            w2_min_eig: w2_min,
            w2_ok: w2_min > 0.0,
            m21,
            m22,
            w,
            w_min_eig: w_min,
            w_ok: w_min > 0.0,
            coupling_bound,
            coupling_margin: w2_min - coupling_bound,
            coupling_ok: w2_min > coupling_bound,
        }
    });

    let min_w = quads.iter().map(|q| q.w_min_eig).fold(f64::INFINITY, f64::min);
    let gamma_bound = (n as f64 * min_w / (2.0 * p_norm)).max(0.0);
    let integral_capacity = gains.k_z * gains.sigma;
    let disturbance_ok = disturbance_bound < integral_capacity;
    let z1_ok = z1_coefficient > 0.0;
    let passed = z1_ok
        && disturbance_ok
        && quads
            .iter()
            .all(|q| q.c2_ok && q.w2_ok && q.w_ok && q.coupling_ok);
    Certificate {
        quads,
        c3,
        k_max,
        k_zm,
        alpha,
        lambda_min_q,
        p_norm,
        z1_coefficient,
        z1_ok,
        gamma_bound,
        disturbance_bound,
        integral_capacity,
        disturbance_ok,
        passed,
    }
}

/// Attitude error quantities of one quadrotor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeErrors {
    pub psi: f64,
    pub e_r: Vec3,
    pub e_omega: Vec3,
    pub e_i: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovValue {
    pub v1: f64,
    pub v2: f64,
    pub v: f64,
    pub v2_quads: Vec<f64>,
}

/// `B [K_z; ...; K_z]`, the map from the saturated integral to generalized forces.
pub fn integral_coupling(gains: &GainSet, params: &SystemParams, lm: &LinearModel) -> DMatrix<f64> {
    let kz = gains.kz_matrix(params);
    let mut bsum = DMatrix::zeros(lm.dim(), 3);
    for i in 0..params.n_quads() {
        bsum += lm.b.columns(3 * i, 3);
    }
    bsum * kz
}

/// Generalized disturbance force `B Delta_x`.
pub fn disturbance_force(lm: &LinearModel, disturbance: &DisturbanceSpec) -> DVector<f64> {
    let mut stacked = DVector::zeros(lm.inputs());
    for (i, f) in disturbance.force.iter().enumerate() {
        stacked.fixed_rows_mut::<3>(3 * i).copy_from(f);
    }
    &lm.b * stacked
}

/// Integral setpoint for the mean disturbance force.
pub fn integral_setpoint(gains: &GainSet, disturbance: &DisturbanceSpec) -> DVector<f64> {
    let n = disturbance.force.len().max(1) as f64;
    let mean = disturbance.force.iter().fold(Vec3::zeros(), |a, f| a + f) / n;
    gains.integral_equilibrium(&mean)
}

fn sat_antiderivative(y: f64, sigma: f64) -> f64 {
    if y.abs() <= sigma {
        0.5 * y * y
    } else {
        sigma * y.abs() - 0.5 * sigma * sigma
    }
}

/// `int_0^1 sat(p + t d) dt`, exact for the piecewise-linear saturation.
fn mean_saturation(p: f64, d: f64, sigma: f64) -> f64 {
    if d.abs() <= 1e-12 * (1.0 + p.abs()) {
        return saturate(&DVector::from_element(1, p + 0.5 * d), sigma)[0];
    }
    (sat_antiderivative(p + d, sigma) - sat_antiderivative(p, sigma)) / d
}

/// `2 int (S sat(mu) - b) . dmu` along the segment from `from` to `to`.
pub fn integral_energy(
    coupling: &DMatrix<f64>,
    force: &DVector<f64>,
    from: &DVector<f64>,
    to: &DVector<f64>,
    sigma: f64,
) -> f64 {
    let d = to - from;
    let mean = DVector::from_fn(d.len(), |k, _| mean_saturation(from[k], d[k], sigma));
    2.0 * d.dot(&(coupling * mean - force))
}

/// `V1`, `V2` and their sum. The `e_x` term is taken along the straight segment
/// from the integral setpoint.
#[allow(clippy::too_many_arguments)]
pub fn lyapunov_value(
    z1: &DVector<f64>,
    attitude: &[AttitudeErrors],
    e_x: &DVector<f64>,
    gains: &GainSet,
    params: &SystemParams,
    lm: &LinearModel,
    disturbance: &DisturbanceSpec,
) -> LyapunovValue {
    let coupling = integral_coupling(gains, params, lm);
    let force = disturbance_force(lm, disturbance);
    let p_eq = integral_setpoint(gains, disturbance);
    let v1 = z1.dot(&(&gains.p * z1)) + integral_energy(&coupling, &force, &p_eq, e_x, gains.sigma);
    let v2_quads: Vec<f64> = attitude
        .iter()
        .enumerate()
        .map(|(i, a)| attitude_lyapunov(a, &gains.attitude[i], &params.quadrotors[i].inertia, &disturbance.moment(i)))
        .collect();
    let v2 = v2_quads.iter().sum();
    LyapunovValue {
        v1,
        v2,
        v: v1 + v2,
        v2_quads,
    }
}

/// `1/2 eW.J eW + kR Psi + c2 eR.J eW + kI/2 |eI - Delta_R/kI|^2`.
pub fn attitude_lyapunov(
    a: &AttitudeErrors,
    g: &crate::gains::AttitudeGains,
    inertia: &nalgebra::Matrix3<f64>,
    moment_disturbance: &Vec3,
) -> f64 {
    let jw = inertia * a.e_omega;
    let shift = a.e_i - moment_disturbance / g.k_i;
    0.5 * a.e_omega.dot(&jw) + g.k_r * a.psi + g.c2 * a.e_r.dot(&jw) + 0.5 * g.k_i * shift.norm_squared()
}
