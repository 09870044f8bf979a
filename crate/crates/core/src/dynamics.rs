//! Equations of motion `N Xdot = P` for the payload, the cable links and the
//! quadrotor translational coupling, plus the quadrotor attitude dynamics.
//!
//! The unknown vector is ordered `[v0_dot; Omega0_dot; q_ddot_{1,:}; ...; q_ddot_{n,:}]`
//! with link accelerations in the order of [`crate::model::Quadrotor::links`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{condition_estimate, DenseLu};
use crate::manifold::{e3, hat, Mat3, Vec3};
use crate::model::{DerivedMasses, DisturbanceSpec, FullState, SystemParams};

/// Condition number above which `N` is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// Thrust magnitude and body moment of one quadrotor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadInput {
    pub thrust: f64,
    pub moment: Vec3,
}

/// Hover thrusts `f_i = (M_iT + m0/n) g` with zero moments.
pub fn equilibrium_inputs(params: &SystemParams, masses: &DerivedMasses) -> Vec<QuadInput> {
    let share = params.payload.mass / params.n_quads() as f64;
    masses
        .quad_total
        .iter()
        .map(|m| QuadInput {
            thrust: (m + share) * params.gravity,
            moment: Vec3::zeros(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EomSystem {
    pub n: DMatrix<f64>,
    pub p: DVector<f64>,
}

impl EomSystem {
    pub fn dim(&self) -> usize {
        self.p.len()
    }
}

/// Index of link `(i, j)` in the acceleration vector.
pub fn link_index(params: &SystemParams, i: usize, j: usize) -> usize {
    6 + 3 * (params.link_offset(i) + j)
}

/// Assembles `N` and `P` for thrusts `-f_i R_i e3` plus the disturbance forces.
pub fn assemble_eom(
    state: &FullState,
    params: &SystemParams,
    masses: &DerivedMasses,
    inputs: &[QuadInput],
    disturbances: &DisturbanceSpec,
) -> EomSystem {
    let forces: Vec<Vec3> = (0..params.n_quads())
        .map(|i| {
            let u = -inputs[i].thrust * state.quads[i].r.column(2);
            u + disturbances.force(i)
        })
        .collect();
    assemble_with_forces(state, params, masses, &forces)
}

/// Assembles `N` and `P` given the total external force acting on each
/// quadrotor (excluding gravity).
pub fn assemble_with_forces(
    state: &FullState,
    params: &SystemParams,
    masses: &DerivedMasses,
    forces: &[Vec3],
) -> EomSystem {
    let dim = params.full_dim();
    let g = params.gravity;
    let r0 = *state.r0.matrix();
    let r0t = r0.transpose();
    let w0 = state.omega0;
    let w0_hat = hat(&w0);
    let mut n = DMatrix::<f64>::zeros(dim, dim);
    let mut p = DVector::<f64>::zeros(dim);

    let put = |n: &mut DMatrix<f64>, r: usize, c: usize, m: &Mat3| {
        n.fixed_view_mut::<3, 3>(r, c).copy_from(m);
    };

    put(&mut n, 0, 0, &(masses.total * Mat3::identity()));
    put(&mut n, 3, 3, &masses.jbar0);
    let mut n_x0_w0 = Mat3::zeros();
    let mut n_w0_x0 = Mat3::zeros();
    let mut p_x0 = masses.total * g * e3();
    let mut p_w0 = -w0_hat * (masses.jbar0 * w0);

    for (i, quad) in params.quadrotors.iter().enumerate() {
        let m_it = masses.quad_total[i];
        let rho = quad.attachment;
        let rho_hat = hat(&rho);
        let centripetal = r0 * (w0_hat * (w0_hat * rho));
        let f_i = forces[i];

        n_x0_w0 -= m_it * r0 * rho_hat;
        n_w0_x0 += m_it * rho_hat * r0t;
        p_x0 += f_i - m_it * centripetal;
        p_w0 += rho_hat * (r0t * (m_it * g * e3() + f_i));

        for (j, link) in quad.links.iter().enumerate() {
            let row = link_index(params, i, j);
            let chain = masses.chain[i][j];
            let lj = link.length;
            let s = &state.links[i][j];
            let q = *s.q.vec();
            let q_hat = hat(&q);
            let q_hat2 = q_hat * q_hat;
            let q_dot = s.omega.cross(&q);

            put(&mut n, 0, row, &(-chain * lj * Mat3::identity()));
            put(&mut n, 3, row, &(-chain * lj * rho_hat * r0t));

            put(&mut n, row, 0, &(-chain * q_hat2));
            put(&mut n, row, 3, &(chain * q_hat2 * r0 * rho_hat));
            for (k, other) in quad.links.iter().enumerate() {
                let col = link_index(params, i, k);
                let block = if k == j {
                    -chain * lj * Mat3::identity()
                } else {
                    masses.pair(i, j, k) * other.length * q_hat2
                };
                put(&mut n, row, col, &block);
            }

            let p_ij = -q_hat2 * (f_i + chain * g * e3())
                + chain * q_hat2 * centripetal
                + chain * lj * q_dot.norm_squared() * q;
            p.fixed_rows_mut::<3>(row).copy_from(&p_ij);
        }
    }
    put(&mut n, 0, 3, &n_x0_w0);
    put(&mut n, 3, 0, &n_w0_x0);
    p.fixed_rows_mut::<3>(0).copy_from(&p_x0);
    p.fixed_rows_mut::<3>(3).copy_from(&p_w0);
    EomSystem { n, p }
}

/// Solves `N Xdot = P` by LU with partial pivoting.
pub fn solve_accelerations(eom: &EomSystem) -> Result<DVector<f64>> {
    solve_with_context(eom, "equations of motion")
}

fn solve_with_context(eom: &EomSystem, context: &str) -> Result<DVector<f64>> {
    let dim = eom.dim();
    if eom.n.nrows() != dim || eom.n.ncols() != dim {
        return Err(Error::Dimension {
            what: "N",
            expected: format!("{dim}x{dim}"),
            got: format!("{}x{}", eom.n.nrows(), eom.n.ncols()),
        });
    }
    if !eom.n.iter().chain(eom.p.iter()).all(|v| v.is_finite()) {
        return Err(Error::SingularConfiguration {
            condition: f64::INFINITY,
            context: format!("{context}: non-finite entries"),
        });
    }
    let lu = DenseLu::new(eom.n.clone());
    let condition = condition_estimate(&eom.n, &lu);
    if !(condition <= SINGULAR_CONDITION) {
        return Err(Error::SingularConfiguration {
            condition,
            context: context.to_string(),
        });
    }
    Ok(lu.solve(&eom.p))
}

/// Accelerations unpacked from the solution vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Accelerations {
    pub v0_dot: Vec3,
    pub omega0_dot: Vec3,
    pub q_ddot: Vec<Vec<Vec3>>,
}

impl Accelerations {
    pub fn unpack(params: &SystemParams, x: &DVector<f64>) -> Self {
        Accelerations {
            v0_dot: x.fixed_rows::<3>(0).into_owned(),
            omega0_dot: x.fixed_rows::<3>(3).into_owned(),
            q_ddot: params
                .quadrotors
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    (0..q.links.len())
                        .map(|j| x.fixed_rows::<3>(link_index(params, i, j)).into_owned())
                        .collect()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDerivative {
    pub q_dot: Vec3,
    pub omega_dot: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadDerivative {
    /// Body angular velocity, i.e. `R_i^T R_i_dot` as a vector.
    pub omega: Vec3,
    pub omega_dot: Vec3,
}

/// Time derivative of a [`FullState`]. Rotations are represented by their
/// body angular velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub x0_dot: Vec3,
    pub v0_dot: Vec3,
    pub omega0: Vec3,
    pub omega0_dot: Vec3,
    pub links: Vec<Vec<LinkDerivative>>,
    pub quads: Vec<QuadDerivative>,
}

impl StateDerivative {
    /// Largest absolute entry over all rate components except the kinematic
    /// copies (`x0_dot`, `omega0`, quad `omega`).
    pub fn max_acceleration(&self) -> f64 {
        let mut m = self.v0_dot.amax().max(self.omega0_dot.amax());
        for l in self.links.iter().flatten() {
            m = m.max(l.q_dot.amax()).max(l.omega_dot.amax());
        }
        for q in &self.quads {
            m = m.max(q.omega_dot.amax());
        }
        m
    }
}

/// Full right-hand side with thrust/moment inputs and disturbances.
pub fn full_rhs(
    state: &FullState,
    params: &SystemParams,
    masses: &DerivedMasses,
    inputs: &[QuadInput],
    disturbances: &DisturbanceSpec,
) -> Result<StateDerivative> {
    let eom = assemble_eom(state, params, masses, inputs, disturbances);
    let moments: Vec<Vec3> = (0..params.n_quads())
        .map(|i| inputs[i].moment + disturbances.moment(i))
        .collect();
    rhs_from_eom(state, params, &eom, &moments)
}

/// Right-hand side when the per-quadrotor forces are given directly, e.g.
/// the fictitious inputs of the simplified model.
pub fn rhs_with_forces(
    state: &FullState,
    params: &SystemParams,
    masses: &DerivedMasses,
    forces: &[Vec3],
    moments: &[Vec3],
) -> Result<StateDerivative> {
    let eom = assemble_with_forces(state, params, masses, forces);
    rhs_from_eom(state, params, &eom, moments)
}

fn rhs_from_eom(
    state: &FullState,
    params: &SystemParams,
    eom: &EomSystem,
    moments: &[Vec3],
) -> Result<StateDerivative> {
    let x = solve_with_context(
        eom,
        &format!(
            "equations of motion at x0 = [{:.4}, {:.4}, {:.4}]",
            state.x0[0], state.x0[1], state.x0[2]
        ),
    )?;
    let acc = Accelerations::unpack(params, &x);
    let links = state
        .links
        .iter()
        .zip(&acc.q_ddot)
        .map(|(cable, qdd)| {
            cable
                .iter()
                .zip(qdd)
                .map(|(s, a)| LinkDerivative {
                    q_dot: s.omega.cross(s.q.vec()),
                    omega_dot: s.q.vec().cross(a),
                })
                .collect()
        })
        .collect();
    let quads = params
        .quadrotors
        .iter()
        .zip(&state.quads)
        .zip(moments)
        .map(|((quad, s), m)| {
            let j = quad.inertia;
            let rhs = m - s.omega.cross(&(j * s.omega));
            QuadDerivative {
                omega: s.omega,
                omega_dot: j.lu().solve(&rhs).unwrap_or_else(Vec3::zeros),
            }
        })
        .collect();
    Ok(StateDerivative {
        x0_dot: state.v0,
        v0_dot: acc.v0_dot,
        omega0: state.omega0,
        omega0_dot: acc.omega0_dot,
        links,
        quads,
    })
}
