//! Geometric controller for the full model: fictitious thrust vectors from
//! the linear feedback plus a saturated integral, desired quadrotor attitudes
//! extracted from them, and attitude tracking moments with an integral term.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::QuadInput;
use crate::error::{Error, Result};
use crate::gains::{AttitudeGains, GainSet};
use crate::linearization::linear_coordinates;
use crate::manifold::{
    angular_velocity_error, attitude_error, e1, e3, hat, log_so3, Mat3, Rotation, Vec3,
};
use crate::model::{FullState, QuadState, SystemParams};

const MIN_THRUST_NORM: f64 = 1e-9;
const MIN_HEADING_ANGLE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// Use the `Omega_c`, `dOmega_c` feedforward terms in the moment.
    pub feedforward: bool,
    /// Controller runs once every `decimation` integrator steps.
    pub decimation: usize,
    /// Low-pass time constant of the command derivatives, in controller periods.
    pub filter_periods: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            feedforward: true,
            decimation: 1,
            filter_periods: 1.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.decimation == 0 {
            return Err(Error::validation("controller.decimation", "must be at least 1"));
        }
        if !(self.filter_periods >= 0.0 && self.filter_periods.is_finite()) {
            return Err(Error::validation("controller.filter_periods", "must be non-negative"));
        }
        Ok(())
    }
}

/// Integral accumulators and the command history used for differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub e_x: DVector<f64>,
    pub e_i: Vec<Vec3>,
    pub prev_rc: Vec<Option<Rotation>>,
    pub omega_c: Vec<Vec3>,
    pub omega_c_dot: Vec<Vec3>,
    /// Integrand values at the previous update, for the trapezoidal rule.
    pub ex_rate: Option<DVector<f64>>,
    pub ei_rate: Vec<Option<Vec3>>,
    pub time: f64,
}

impl ControllerState {
    pub fn new(params: &SystemParams) -> Self {
        let n = params.n_quads();
        ControllerState {
            e_x: DVector::zeros(params.linear_dim()),
            e_i: vec![Vec3::zeros(); n],
            prev_rc: vec![None; n],
            omega_c: vec![Vec3::zeros(); n],
            omega_c_dot: vec![Vec3::zeros(); n],
            ex_rate: None,
            ei_rate: vec![None; n],
            time: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadControl {
    pub thrust: f64,
    pub moment: Vec3,
    pub a: Vec3,
    pub r_c: Rotation,
    pub omega_c: Vec3,
    pub omega_c_dot: Vec3,
    pub psi: f64,
    pub e_r: Vec3,
    pub e_omega: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub quads: Vec<QuadControl>,
    pub z1: DVector<f64>,
}

impl ControlOutput {
    pub fn inputs(&self) -> Vec<QuadInput> {
        self.quads
            .iter()
            .map(|q| QuadInput {
                thrust: q.thrust,
                moment: q.moment,
            })
            .collect()
    }
}

/// Elementwise clamp to `[-sigma, sigma]`.
pub fn saturate(y: &DVector<f64>, sigma: f64) -> DVector<f64> {
    y.map(|v| v.clamp(-sigma, sigma))
}

/// `A_i = -Kx_i x - Kxdot_i xdot - K_z sat(e_x) + u_id`.
pub fn fictitious_force(
    z1: &DVector<f64>,
    e_x: &DVector<f64>,
    gains: &GainSet,
    params: &SystemParams,
    i: usize,
    u_id: &Vec3,
) -> Result<Vec3> {
    params.check_quad(i)?;
    let dx = gains.kx.ncols();
    let x = z1.rows(0, dx);
    let xd = z1.rows(dx, dx);
    let fb = gains.kx.rows(3 * i, 3) * x + gains.kxdot.rows(3 * i, 3) * xd;
    let integral = gains.kz_matrix(params) * saturate(e_x, gains.sigma);
    let a = u_id - Vec3::new(fb[0], fb[1], fb[2]) - Vec3::new(integral[0], integral[1], integral[2]);
    if !(a.norm() >= MIN_THRUST_NORM) {
        return Err(Error::DegenerateThrust {
            quad: i,
            norm: a.norm(),
        });
    }
    Ok(a)
}

/// `R_c = [-b3^2 b1/|.|, b3 x b1/|.|, b3]` with `b3 = -A/|A|`.
pub fn command_attitude(a: &Vec3, b1: &Vec3, quad: usize) -> Result<Rotation> {
    let norm = a.norm();
    if !(norm >= MIN_THRUST_NORM) {
        return Err(Error::DegenerateThrust { quad, norm });
    }
    let b3 = -a / norm;
    let b1n = b1.normalize();
    let cross = b3.cross(&b1n);
    if cross.norm() < MIN_HEADING_ANGLE.sin() {
        return Err(Error::ParallelHeading { quad });
    }
    let b3h = hat(&b3);
    let c1 = -(b3h * b3h * b1n);
    let c1 = c1 / c1.norm();
    let c2 = cross / cross.norm();
    Ok(Rotation::project_to_so3(&Mat3::from_columns(&[c1, c2, b3])))
}

/// Desired attitude and its filtered finite-difference rates. The first call
/// (no previous command) returns zero rates.
pub fn desired_attitude(
    a: &Vec3,
    b1: &Vec3,
    quad: usize,
    prev: Option<(&Rotation, &Vec3, &Vec3)>,
    dt: f64,
    filter_periods: f64,
) -> Result<(Rotation, Vec3, Vec3)> {
    let rc = command_attitude(a, b1, quad)?;
    let Some((prev_rc, prev_w, prev_wd)) = prev else {
        return Ok((rc, Vec3::zeros(), Vec3::zeros()));
    };
    if !(dt > 0.0) {
        return Ok((rc, *prev_w, *prev_wd));
    }
    let gain = 1.0 / (1.0 + filter_periods);
    let raw = log_so3(&(prev_rc.transpose() * rc)) / dt;
    let w = prev_w + (raw - prev_w) * gain;
    let raw_dot = (w - prev_w) / dt;
    let wd = prev_wd + (raw_dot - prev_wd) * gain;
    Ok((rc, w, wd))
}

/// Attitude error terms and the tracking moment.
pub fn attitude_control(
    quad: &QuadState,
    inertia: &Mat3,
    rc: &Rotation,
    omega_c: &Vec3,
    omega_c_dot: &Vec3,
    e_i: &Vec3,
    gains: &AttitudeGains,
) -> (Vec3, f64, Vec3, Vec3) {
    let (psi, e_r) = attitude_error(&quad.r, rc);
    let e_omega = angular_velocity_error(&quad.r, rc, &quad.omega, omega_c);
    let rel = quad.r.matrix().transpose() * rc.matrix();
    let w_d = rel * omega_c;
    let moment = -gains.k_r * e_r - gains.k_omega * e_omega - gains.k_i * e_i
        + w_d.cross(&(inertia * w_d))
        + inertia * (rel * omega_c_dot);
    (moment, psi, e_r, e_omega)
}

/// Trapezoidal update of `e_x` with integrand `(P Bm)^T z1`.
pub fn update_ex(ctrl: &mut ControllerState, z1: &DVector<f64>, gains: &GainSet, dt: f64) {
    let rate = gains.pb.tr_mul(z1);
    if let Some(prev) = &ctrl.ex_rate {
        ctrl.e_x += (prev + &rate) * (0.5 * dt);
    }
    ctrl.ex_rate = Some(rate);
}

/// Trapezoidal update of `e_Ii` with integrand `e_Omega + c2 e_R`.
pub fn update_ei(ctrl: &mut ControllerState, i: usize, e_r: &Vec3, e_omega: &Vec3, c2: f64, dt: f64) {
    let rate = e_omega + e_r * c2;
    if let Some(prev) = ctrl.ei_rate[i] {
        ctrl.e_i[i] += (prev + rate) * (0.5 * dt);
    }
    ctrl.ei_rate[i] = Some(rate);
}

/// Bundles everything the control law needs besides the state.
#[derive(Debug, Clone)]
pub struct Controller {
    pub gains: GainSet,
    pub load_share: Vec<f64>,
    pub x0d: Vec3,
    pub b1: Vec3,
    pub config: ControllerConfig,
}

impl Controller {
    pub fn new(gains: GainSet, load_share: Vec<f64>, x0d: Vec3, config: ControllerConfig) -> Self {
        Controller {
            gains,
            load_share,
            x0d,
            b1: e1(),
            config,
        }
    }

    /// Nominal thrust vector `u_id = -(M_iT + share_i) g e3`.
    pub fn nominal_force(&self, params: &SystemParams, quad_total: f64, i: usize) -> Vec3 {
        -(quad_total + self.load_share[i]) * params.gravity * e3()
    }

    /// One controller update `dt` after the previous one (ignored on the first call).
    pub fn compute(
        &self,
        state: &FullState,
        ctrl: &ControllerState,
        params: &SystemParams,
        quad_total: &[f64],
        dt: f64,
    ) -> Result<(ControlOutput, ControllerState)> {
        let mut next = ctrl.clone();
        let first = ctrl.ex_rate.is_none();
        let (x, xd) = linear_coordinates(state, params, &self.x0d);
        let mut z1 = DVector::zeros(2 * x.len());
        z1.rows_mut(0, x.len()).copy_from(&x);
        z1.rows_mut(x.len(), x.len()).copy_from(&xd);
        update_ex(&mut next, &z1, &self.gains, dt);

        let mut quads = Vec::with_capacity(params.n_quads());
        for (i, quad) in params.quadrotors.iter().enumerate() {
            let u_id = self.nominal_force(params, quad_total[i], i);
            let a = fictitious_force(&z1, &next.e_x, &self.gains, params, i, &u_id)?;
            let prev = if first {
                None
            } else {
                ctrl.prev_rc[i]
                    .as_ref()
                    .map(|r| (r, &ctrl.omega_c[i], &ctrl.omega_c_dot[i]))
            };
            let (rc, w, wd) = desired_attitude(&a, &self.b1, i, prev, dt, self.config.filter_periods)?;
            next.prev_rc[i] = Some(rc);
            next.omega_c[i] = w;
            next.omega_c_dot[i] = wd;
            let (w_ff, wd_ff) = if self.config.feedforward {
                (w, wd)
            } else {
                (Vec3::zeros(), Vec3::zeros())
            };
            let g = &self.gains.attitude[i];
            let (psi, e_r) = attitude_error(&state.quads[i].r, &rc);
            let e_omega = angular_velocity_error(&state.quads[i].r, &rc, &state.quads[i].omega, &w_ff);
            update_ei(&mut next, i, &e_r, &e_omega, g.c2, dt);
            let (moment, ..) = attitude_control(&state.quads[i], &quad.inertia, &rc, &w_ff, &wd_ff, &next.e_i[i], g);
            let thrust = -a.dot(&(state.quads[i].r.matrix() * e3()));
            quads.push(QuadControl {
                thrust,
                moment,
                a,
                r_c: rc,
                omega_c: w,
                omega_c_dot: wd,
                psi,
                e_r,
                e_omega,
            });
        }
        if !first {
            next.time += dt;
        }
        Ok((ControlOutput { quads, z1 }, next))
    }
}

/// Functional form of [`Controller::compute`].
pub fn compute_control(
    state: &FullState,
    ctrl: &ControllerState,
    params: &SystemParams,
    quad_total: &[f64],
    controller: &Controller,
    dt: f64,
) -> Result<(ControlOutput, ControllerState)> {
    controller.compute(state, ctrl, params, quad_total, dt)
}
