//! Physical parameters, derived mass constants, the full system state and
//! the kinematic/energy functions built on top of them.
//!
//! Link indices are zero based. Link `0` of a cable is attached to the
//! quadrotor, link `n_i - 1` to the payload. A link's point mass sits at its
//! payload-side end, so the last link's mass moves with the attachment point.
//! `q_ij` points from the quadrotor side toward the payload and `e3` points
//! down, so the hanging equilibrium has every `q_ij = e3`.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{e3, hat, Mat3, Rotation, UnitVector, Vec3, MANIFOLD_TOL};

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub mass: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quadrotor {
    pub mass: f64,
    pub inertia: Mat3,
    /// Cable attachment point in the payload body frame.
    pub attachment: Vec3,
    /// Ordered from the quadrotor toward the payload.
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Payload {
    pub mass: f64,
    pub inertia: Mat3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    pub payload: Payload,
    pub quadrotors: Vec<Quadrotor>,
    pub gravity: f64,
}

fn check_spd(field: &str, m: &Mat3) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::validation(field, "inertia is not symmetric"));
    }
    let min = SymmetricEigen::new(*m).eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::validation(
            field,
            format!("inertia is not positive definite (min eigenvalue {min:.3e})"),
        ));
    }
    Ok(())
}

fn check_positive(field: String, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::validation(field, format!("must be positive, got {v}")));
    }
    Ok(())
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if self.quadrotors.is_empty() {
            return Err(Error::validation("quadrotors", "at least one quadrotor is required"));
        }
        check_positive("payload.mass".into(), self.payload.mass)?;
        check_spd("payload.inertia", &self.payload.inertia)?;
        check_positive("gravity".into(), self.gravity)?;
        for (i, quad) in self.quadrotors.iter().enumerate() {
            check_positive(format!("quadrotors[{i}].mass"), quad.mass)?;
            check_spd(&format!("quadrotors[{i}].inertia"), &quad.inertia)?;
            if !quad.attachment.iter().all(|v| v.is_finite()) {
                return Err(Error::validation(
                    format!("quadrotors[{i}].attachment"),
                    "must be finite",
                ));
            }
            if quad.links.is_empty() {
                return Err(Error::validation(
                    format!("quadrotors[{i}].links"),
                    "each cable needs at least one link",
                ));
            }
            for (j, link) in quad.links.iter().enumerate() {
                check_positive(format!("quadrotors[{i}].links[{j}].length"), link.length)?;
                if !(link.mass >= 0.0) || !link.mass.is_finite() {
                    return Err(Error::validation(
                        format!("quadrotors[{i}].links[{j}].mass"),
                        format!("must be non-negative, got {}", link.mass),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_quads(&self) -> usize {
        self.quadrotors.len()
    }

    pub fn total_links(&self) -> usize {
        self.quadrotors.iter().map(|q| q.links.len()).sum()
    }

    /// Velocity dimension of the full model, `6 + 3 sum n_i`.
    pub fn full_dim(&self) -> usize {
        6 + 3 * self.total_links()
    }

    /// Configuration dimension of the linearized model, `6 + 2 sum n_i`.
    pub fn linear_dim(&self) -> usize {
        6 + 2 * self.total_links()
    }

    /// Offset of the first link of cable `i` in a per-link flat ordering.
    pub fn link_offset(&self, i: usize) -> usize {
        self.quadrotors[..i].iter().map(|q| q.links.len()).sum()
    }

    pub(crate) fn check_quad(&self, i: usize) -> Result<()> {
        if i >= self.n_quads() {
            return Err(Error::IndexOutOfRange {
                what: "quadrotor",
                index: i,
                limit: self.n_quads(),
            });
        }
        Ok(())
    }
}

/// Mass constants that appear throughout the equations of motion.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedMasses {
    /// Payload plus all quadrotors and links.
    pub total: f64,
    /// Quadrotor `i` together with its cable.
    pub quad_total: Vec<f64>,
    /// `chain[i][j]`: the quadrotor mass plus all links between it and link `j`
    /// (exclusive), i.e. everything moved by a change of `q_ij` on the quadrotor side.
    pub chain: Vec<Vec<f64>>,
    /// Payload inertia augmented by the point masses carried at the attachments.
    pub jbar0: Mat3,
}

impl DerivedMasses {
    /// Chain coefficient coupling links `j` and `k` of cable `i`.
    pub fn pair(&self, i: usize, j: usize, k: usize) -> f64 {
        self.chain[i][j.min(k)]
    }
}

pub fn derive_masses(params: &SystemParams) -> DerivedMasses {
    let mut quad_total = Vec::with_capacity(params.n_quads());
    let mut chain = Vec::with_capacity(params.n_quads());
    let mut jbar0 = params.payload.inertia;
    for quad in &params.quadrotors {
        let mut acc = quad.mass;
        let mut row = Vec::with_capacity(quad.links.len());
        for link in &quad.links {
            row.push(acc);
            acc += link.mass;
        }
        let rho = hat(&quad.attachment);
        jbar0 -= acc * rho * rho;
        quad_total.push(acc);
        chain.push(row);
    }
    DerivedMasses {
        total: params.payload.mass + quad_total.iter().sum::<f64>(),
        quad_total,
        chain,
        jbar0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub q: UnitVector,
    pub omega: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadState {
    pub r: Rotation,
    pub omega: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub x0: Vec3,
    pub v0: Vec3,
    pub r0: Rotation,
    pub omega0: Vec3,
    /// `links[i][j]`, ordered like [`Quadrotor::links`].
    pub links: Vec<Vec<LinkState>>,
    pub quads: Vec<QuadState>,
}

impl FullState {
    /// All links vertical, everything at rest, payload level at `x0`.
    pub fn hanging(params: &SystemParams, x0: Vec3) -> Self {
        FullState {
            x0,
            v0: Vec3::zeros(),
            r0: Rotation::identity(),
            omega0: Vec3::zeros(),
            links: params
                .quadrotors
                .iter()
                .map(|q| {
                    vec![
                        LinkState {
                            q: UnitVector::e3(),
                            omega: Vec3::zeros(),
                        };
                        q.links.len()
                    ]
                })
                .collect(),
            quads: vec![
                QuadState {
                    r: Rotation::identity(),
                    omega: Vec3::zeros(),
                };
                params.n_quads()
            ],
        }
    }

    pub fn check_shape(&self, params: &SystemParams) -> Result<()> {
        let expected: Vec<usize> = params.quadrotors.iter().map(|q| q.links.len()).collect();
        let got: Vec<usize> = self.links.iter().map(Vec::len).collect();
        if expected != got || self.quads.len() != params.n_quads() {
            return Err(Error::Dimension {
                what: "state",
                expected: format!("{expected:?} links, {} quadrotors", params.n_quads()),
                got: format!("{got:?} links, {} quadrotors", self.quads.len()),
            });
        }
        Ok(())
    }

    /// Shape plus all manifold and tangency invariants.
    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        self.check_shape(params)?;
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        if !finite(&self.x0) || !finite(&self.v0) || !finite(&self.omega0) {
            return Err(Error::validation("state", "payload state is not finite"));
        }
        Rotation::new(*self.r0.matrix())?;
        for (i, cable) in self.links.iter().enumerate() {
            for (j, link) in cable.iter().enumerate() {
                UnitVector::new(*link.q.vec())
                    .map_err(|e| Error::validation(format!("links[{i}][{j}].q"), e.to_string()))?;
                let d = link.q.vec().dot(&link.omega);
                if d.abs() > MANIFOLD_TOL || !finite(&link.omega) {
                    return Err(Error::validation(
                        format!("links[{i}][{j}].omega"),
                        format!("must be orthogonal to q (q . omega = {d:.3e})"),
                    ));
                }
            }
        }
        for (i, quad) in self.quads.iter().enumerate() {
            Rotation::new(*quad.r.matrix())
                .map_err(|e| Error::validation(format!("quads[{i}].r"), e.to_string()))?;
        }
        Ok(())
    }

    /// Largest constraint violation: unit norms, orthogonality and `q . omega`.
    pub fn constraint_defect(&self) -> f64 {
        let mut worst = self.r0.orthogonality_defect();
        for link in self.links.iter().flatten() {
            worst = worst
                .max((link.q.vec().norm() - 1.0).abs())
                .max(link.q.vec().dot(&link.omega).abs());
        }
        for quad in &self.quads {
            worst = worst.max(quad.r.orthogonality_defect());
        }
        worst
    }
}

/// Constant disturbance forces and moments on each quadrotor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DisturbanceSpec {
    pub force: Vec<Vec3>,
    pub moment: Vec<Vec3>,
    /// Known bound on the infinity norm of the stacked forces.
    pub bound: f64,
}

impl DisturbanceSpec {
    pub fn none(n: usize) -> Self {
        DisturbanceSpec {
            force: vec![Vec3::zeros(); n],
            moment: vec![Vec3::zeros(); n],
            bound: 0.0,
        }
    }

    pub fn force_inf_norm(&self) -> f64 {
        self.force.iter().map(|f| f.amax()).fold(0.0, f64::max)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.force.len() != n || self.moment.len() != n {
            return Err(Error::Dimension {
                what: "disturbances",
                expected: format!("{n} quadrotors"),
                got: format!("{} forces, {} moments", self.force.len(), self.moment.len()),
            });
        }
        if self.force_inf_norm() > self.bound {
            return Err(Error::validation(
                "disturbances.bound",
                format!(
                    "|force|_inf = {} exceeds the declared bound {}",
                    self.force_inf_norm(),
                    self.bound
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn force(&self, i: usize) -> Vec3 {
        self.force.get(i).copied().unwrap_or_else(Vec3::zeros)
    }

    pub(crate) fn moment(&self, i: usize) -> Vec3 {
        self.moment.get(i).copied().unwrap_or_else(Vec3::zeros)
    }
}

fn attachment_world(state: &FullState, params: &SystemParams, i: usize) -> Vec3 {
    state.x0 + &state.r0 * &params.quadrotors[i].attachment
}

fn attachment_velocity(state: &FullState, params: &SystemParams, i: usize) -> Vec3 {
    state.v0 + state.r0.matrix() * state.omega0.cross(&params.quadrotors[i].attachment)
}

fn link_rate(link: &LinkState) -> Vec3 {
    link.omega.cross(link.q.vec())
}

/// `x_i = x0 + R0 rho_i - sum_a l_ia q_ia`.
pub fn quadrotor_position(state: &FullState, params: &SystemParams, i: usize) -> Result<Vec3> {
    params.check_quad(i)?;
    let quad = &params.quadrotors[i];
    Ok(state.links[i]
        .iter()
        .zip(&quad.links)
        .fold(attachment_world(state, params, i), |acc, (s, l)| {
            acc - l.length * s.q.vec()
        }))
}

/// Position of the point mass of link `j` (zero based):
/// `x_ij = x0 + R0 rho_i - sum_{a > j} l_ia q_ia`.
pub fn link_position(state: &FullState, params: &SystemParams, i: usize, j: usize) -> Result<Vec3> {
    params.check_quad(i)?;
    let quad = &params.quadrotors[i];
    if j >= quad.links.len() {
        return Err(Error::IndexOutOfRange {
            what: "link",
            index: j,
            limit: quad.links.len(),
        });
    }
    Ok(state.links[i][j + 1..]
        .iter()
        .zip(&quad.links[j + 1..])
        .fold(attachment_world(state, params, i), |acc, (s, l)| {
            acc - l.length * s.q.vec()
        }))
}

pub fn quadrotor_velocity(state: &FullState, params: &SystemParams, i: usize) -> Vec3 {
    let quad = &params.quadrotors[i];
    state.links[i]
        .iter()
        .zip(&quad.links)
        .fold(attachment_velocity(state, params, i), |acc, (s, l)| {
            acc - l.length * link_rate(s)
        })
}

pub fn link_velocity(state: &FullState, params: &SystemParams, i: usize, j: usize) -> Vec3 {
    let quad = &params.quadrotors[i];
    state.links[i][j + 1..]
        .iter()
        .zip(&quad.links[j + 1..])
        .fold(attachment_velocity(state, params, i), |acc, (s, l)| {
            acc - l.length * link_rate(s)
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub kinetic: f64,
    pub potential: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential
    }
}

/// Kinetic and potential energy in grouped form, using the derived mass
/// constants rather than a sum over bodies.
pub fn total_energy(state: &FullState, params: &SystemParams, masses: &DerivedMasses) -> Energy {
    let g = params.gravity;
    let r0 = state.r0.matrix();
    let mut kinetic = 0.5 * masses.total * state.v0.norm_squared()
        + 0.5 * state.omega0.dot(&(params.payload.inertia * state.omega0));
    let mut potential = -masses.total * g * e3().dot(&state.x0);
    for (i, quad) in params.quadrotors.iter().enumerate() {
        let m_it = masses.quad_total[i];
        let rho_dot = r0 * state.omega0.cross(&quad.attachment);
        let rates: Vec<Vec3> = state.links[i].iter().map(link_rate).collect();
        kinetic += 0.5 * m_it * rho_dot.norm_squared() + m_it * state.v0.dot(&rho_dot);
        let mut weighted = Vec3::zeros();
        for (j, rate_j) in rates.iter().enumerate() {
            let lj = quad.links[j].length;
            for (k, rate_k) in rates.iter().enumerate() {
                let lk = quad.links[k].length;
                kinetic += 0.5 * masses.pair(i, j, k) * lj * lk * rate_j.dot(rate_k);
            }
            weighted += masses.chain[i][j] * lj * rate_j;
            potential += masses.chain[i][j] * lj * g * state.links[i][j].q.vec().dot(&e3());
        }
        kinetic -= (state.v0 + rho_dot).dot(&weighted);
        kinetic += 0.5 * state.quads[i].omega.dot(&(quad.inertia * state.quads[i].omega));
        potential -= m_it * g * e3().dot(&(r0 * quad.attachment));
    }
    Energy { kinetic, potential }
}

/// Energy summed body by body from positions and velocities.
pub fn body_energy(state: &FullState, params: &SystemParams) -> Energy {
    let g = params.gravity;
    let mut kinetic = 0.5 * params.payload.mass * state.v0.norm_squared()
        + 0.5 * state.omega0.dot(&(params.payload.inertia * state.omega0));
    let mut potential = -params.payload.mass * g * e3().dot(&state.x0);
    for (i, quad) in params.quadrotors.iter().enumerate() {
        for (j, link) in quad.links.iter().enumerate() {
            let v = link_velocity(state, params, i, j);
            let x = link_position(state, params, i, j).expect("index in range");
            kinetic += 0.5 * link.mass * v.norm_squared();
            potential -= link.mass * g * e3().dot(&x);
        }
        let v = quadrotor_velocity(state, params, i);
        let x = quadrotor_position(state, params, i).expect("index in range");
        kinetic += 0.5 * quad.mass * v.norm_squared()
            + 0.5 * state.quads[i].omega.dot(&(quad.inertia * state.quads[i].omega));
        potential -= quad.mass * g * e3().dot(&x);
    }
    Energy { kinetic, potential }
}

/// Total linear momentum, summed body by body.
pub fn linear_momentum(state: &FullState, params: &SystemParams) -> Vec3 {
    let mut p = params.payload.mass * state.v0;
    for (i, quad) in params.quadrotors.iter().enumerate() {
        for (j, link) in quad.links.iter().enumerate() {
            p += link.mass * link_velocity(state, params, i, j);
        }
        p += quad.mass * quadrotor_velocity(state, params, i);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{paper_params, random_state};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    #[test]
    fn paper_masses() {
        let p = paper_params();
        let m = derive_masses(&p);
        for i in 0..4 {
            assert_relative_eq!(m.quad_total[i], 0.805, epsilon = 1e-12);
            assert_eq!(m.chain[i][0], 0.755);
            assert!(m.chain[i].windows(2).all(|w| w[0] <= w[1]));
        }
        assert_relative_eq!(m.total, 3.72, epsilon = 1e-12);
        assert_relative_eq!(m.jbar0, m.jbar0.transpose(), epsilon = 1e-15);
    }

    #[test]
    fn massless_links_single_quad() {
        let mut p = paper_params();
        p.quadrotors.truncate(1);
        for l in &mut p.quadrotors[0].links {
            l.mass = 0.0;
        }
        let m = derive_masses(&p);
        assert_relative_eq!(m.total, 0.5 + 0.755, epsilon = 1e-15);
        assert!(m.chain[0].iter().all(|&c| c == 0.755));
    }

    #[test]
    fn positions_from_chain() {
        let mut p = paper_params();
        let s = FullState::hanging(&p, Vec3::zeros());
        assert_relative_eq!(
            quadrotor_position(&s, &p, 0).unwrap(),
            Vec3::new(0.3, -0.4, -0.85),
            epsilon = 1e-15
        );
        p.quadrotors[0].attachment = Vec3::zeros();
        assert_relative_eq!(
            quadrotor_position(&s, &p, 0).unwrap(),
            Vec3::new(0.0, 0.0, -0.75),
            epsilon = 1e-15
        );
        let last = p.quadrotors[0].links.len() - 1;
        assert_eq!(link_position(&s, &p, 0, last).unwrap(), s.x0);
        for l in &mut p.quadrotors[0].links {
            l.length = 0.0;
        }
        assert_eq!(quadrotor_position(&s, &p, 0).unwrap(), s.x0);
        assert!(quadrotor_position(&s, &p, 9).is_err());
        assert!(link_position(&s, &p, 0, 5).is_err());
    }

    #[test]
    fn two_unit_links() {
        let mut p = paper_params();
        p.quadrotors.truncate(1);
        p.quadrotors[0].attachment = Vec3::zeros();
        p.quadrotors[0].links = vec![Link { mass: 0.1, length: 1.0 }; 2];
        let s = FullState::hanging(&p, Vec3::zeros());
        assert_eq!(link_position(&s, &p, 0, 0).unwrap(), Vec3::new(0.0, 0.0, -1.0));
    }

    #[test]
    fn chain_consistency_random() {
        let p = paper_params();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = random_state(&p, &mut rng, 1.0);
            for i in 0..p.n_quads() {
                let x_i = quadrotor_position(&s, &p, i).unwrap();
                let x_i1 = link_position(&s, &p, i, 0).unwrap();
                let l = p.quadrotors[i].links[0].length;
                let d = x_i - (x_i1 - l * s.links[i][0].q.vec());
                assert!(d.amax() < 1e-14);
            }
        }
    }

    #[test]
    fn energy_at_rest() {
        let p = paper_params();
        let m = derive_masses(&p);
        let s = FullState::hanging(&p, Vec3::zeros());
        let e = total_energy(&s, &p, &m);
        assert_eq!(e.kinetic, 0.0);
        // rho_z = -0.1 for every cable; links contribute M_0ij * l * g each.
        let expected = -4.0 * 0.805 * 9.81 * -0.1
            + 4.0 * 9.81 * 0.15 * (0.755 + 0.765 + 0.775 + 0.785 + 0.795);
        assert_relative_eq!(e.potential, expected, epsilon = 1e-12);
        assert_relative_eq!(body_energy(&s, &p).potential, expected, epsilon = 1e-12);
    }

    #[test]
    fn grouped_energy_matches_bodies() {
        let p = paper_params();
        let m = derive_masses(&p);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let s = random_state(&p, &mut rng, 2.0);
            let a = total_energy(&s, &p, &m);
            let b = body_energy(&s, &p);
            assert!((a.kinetic - b.kinetic).abs() <= 1e-10 * b.kinetic.abs());
            assert!((a.potential - b.potential).abs() <= 1e-10 * (1.0 + b.potential.abs()));
        }
    }

    #[test]
    fn validation_rejects_bad_params() {
        let mut p = paper_params();
        p.quadrotors[1].mass = -1.0;
        assert!(matches!(p.validate(), Err(Error::Validation { .. })));
        let mut p = paper_params();
        p.quadrotors[0].links[2].length = 0.0;
        assert!(p.validate().is_err());
        let mut p = paper_params();
        p.payload.inertia[(0, 1)] = 0.3;
        assert!(p.validate().is_err());
        assert!(paper_params().validate().is_ok());
    }
}
