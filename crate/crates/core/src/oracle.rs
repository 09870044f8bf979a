//! Independent reference computations used to validate the assembled
//! dynamics: a numerical Euler-Lagrange solver that only uses body positions
//! and energies, and a hand-coded quadrotor with a point load on a single
//! massless-free link.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::dynamics::{rhs_with_forces, Accelerations};
use crate::error::{Error, Result};
use crate::manifold::{e3, exp_so3, right_jacobian, Rotation, UnitVector, Vec3};
use crate::model::{
    body_energy, derive_masses, quadrotor_position, FullState, LinkState, QuadState, SystemParams,
};
use crate::par::{map_range, Execution};

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_vec<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

/// A random valid state: arbitrary attitudes and link directions, velocities
/// of magnitude up to `scale`, with every `omega_ij` orthogonal to `q_ij`.
pub fn random_state<R: Rng + ?Sized>(params: &SystemParams, rng: &mut R, scale: f64) -> FullState {
    let rot = |rng: &mut R| exp_so3(&(random_unit(rng) * rng.random_range(0.0..3.0)));
    let r0 = rot(rng);
    let links = params
        .quadrotors
        .iter()
        .map(|q| {
            (0..q.links.len())
                .map(|_| {
                    let q = random_unit(rng);
                    let w = random_vec(rng, scale);
                    LinkState {
                        q: UnitVector::from_vec_unchecked(q),
                        omega: w - q * q.dot(&w),
                    }
                })
                .collect()
        })
        .collect();
    let quads = (0..params.n_quads())
        .map(|_| QuadState {
            r: rot(rng),
            omega: random_vec(rng, scale),
        })
        .collect();
    FullState {
        x0: random_vec(rng, 3.0),
        v0: random_vec(rng, scale),
        r0,
        omega0: random_vec(rng, scale),
        links,
        quads,
    }
}

/// Local chart around a base state: payload position offset, payload
/// rotation vector `R0 = R0* exp(eta)`, and two tangent coordinates per link.
struct Chart<'a> {
    params: &'a SystemParams,
    base: &'a FullState,
    tangents: Vec<(Vec3, Vec3)>,
}

impl<'a> Chart<'a> {
    fn new(params: &'a SystemParams, base: &'a FullState) -> Self {
        let tangents = base
            .links
            .iter()
            .flatten()
            .map(|l| {
                let q = l.q.vec();
                let pick = if q.x.abs() < 0.6 { Vec3::x() } else { Vec3::y() };
                let a = (pick - q * q.dot(&pick)).normalize();
                (a, q.cross(&a))
            })
            .collect();
        Chart {
            params,
            base,
            tangents,
        }
    }

    fn dim(&self) -> usize {
        self.params.linear_dim()
    }

    /// State at chart coordinates `th` with coordinate rates `th_dot`.
    fn state(&self, th: &DVector<f64>, th_dot: &DVector<f64>) -> FullState {
        let eta = Vec3::new(th[3], th[4], th[5]);
        let eta_dot = Vec3::new(th_dot[3], th_dot[4], th_dot[5]);
        let mut s = self.base.clone();
        s.x0 = self.base.x0 + Vec3::new(th[0], th[1], th[2]);
        s.v0 = Vec3::new(th_dot[0], th_dot[1], th_dot[2]);
        s.r0 = self.base.r0 * exp_so3(&eta);
        s.omega0 = right_jacobian(&eta) * eta_dot;
        let mut k = 0;
        for cable in s.links.iter_mut() {
            for (j, link) in cable.iter_mut().enumerate() {
                let _ = j;
                let (a, b) = self.tangents[k];
                let q0 = self.base.links.iter().flatten().nth(k).unwrap().q;
                let (t1, t2) = (th[6 + 2 * k], th[7 + 2 * k]);
                let (r1, r2) = (th_dot[6 + 2 * k], th_dot[7 + 2 * k]);
                let raw = q0.vec() + t1 * a + t2 * b;
                let n = raw.norm();
                let q = raw / n;
                let raw_dot = r1 * a + r2 * b;
                let q_dot = raw_dot / n - q * (q.dot(&raw_dot) / n);
                link.q = UnitVector::from_vec_unchecked(q);
                link.omega = q.cross(&q_dot);
                k += 1;
            }
        }
        for quad in s.quads.iter_mut() {
            quad.omega = Vec3::zeros();
        }
        s
    }

    fn kinetic(&self, th: &DVector<f64>, th_dot: &DVector<f64>) -> f64 {
        body_energy(&self.state(th, th_dot), self.params).kinetic
    }

    fn lagrangian(&self, th: &DVector<f64>, th_dot: &DVector<f64>) -> f64 {
        let e = body_energy(&self.state(th, th_dot), self.params);
        e.kinetic - e.potential
    }

    /// Chart rates corresponding to the base state's velocities.
    fn base_rates(&self) -> DVector<f64> {
        let mut r = DVector::zeros(self.dim());
        r.fixed_rows_mut::<3>(0).copy_from(&self.base.v0);
        r.fixed_rows_mut::<3>(3).copy_from(&self.base.omega0);
        for (k, l) in self.base.links.iter().flatten().enumerate() {
            let q_dot = l.omega.cross(l.q.vec());
            let (a, b) = self.tangents[k];
            r[6 + 2 * k] = a.dot(&q_dot);
            r[7 + 2 * k] = b.dot(&q_dot);
        }
        r
    }
}

/// Richardson-extrapolated central difference of a scalar function of one
/// variable at zero.
fn derivative<F: Fn(f64) -> f64>(f: F, h: f64) -> f64 {
    let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    let (d1, d2) = (d(h), d(h / 2.0));
    (4.0 * d2 - d1) / 3.0
}

fn unit(n: usize, k: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[k] = 1.0;
    e
}

/// Mass matrix of the chart at `th` by polarization of the kinetic energy
/// (exact for a quadratic form).
fn chart_mass(chart: &Chart, th: &DVector<f64>) -> DMatrix<f64> {
    let n = chart.dim();
    let single: Vec<f64> = (0..n).map(|a| chart.kinetic(th, &unit(n, a))).collect();
    let mut m = DMatrix::zeros(n, n);
    for a in 0..n {
        m[(a, a)] = 2.0 * single[a];
        for b in a + 1..n {
            let v = chart.kinetic(th, &(unit(n, a) + unit(n, b))) - single[a] - single[b];
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

/// Momentum `dT/d th_dot` by polarization.
fn chart_momentum(chart: &Chart, th: &DVector<f64>, th_dot: &DVector<f64>) -> DVector<f64> {
    let n = chart.dim();
    let t = chart.kinetic(th, th_dot);
    DVector::from_fn(n, |a, _| {
        let e = unit(n, a);
        chart.kinetic(th, &(th_dot + &e)) - t - chart.kinetic(th, &e)
    })
}

/// Reference accelerations from the Euler-Lagrange equations of the body
/// energies, with external world-frame forces `forces[i]` on each quadrotor.
pub fn euler_lagrange_accelerations(
    state: &FullState,
    params: &SystemParams,
    forces: &[Vec3],
) -> Result<Accelerations> {
    state.check_shape(params)?;
    let chart = Chart::new(params, state);
    let n = chart.dim();
    let zero = DVector::zeros(n);
    let rates = chart.base_rates();
    let h = 1e-4;

    let mass = chart_mass(&chart, &zero);
    let dl_dth = DVector::from_fn(n, |a, _| {
        derivative(|s| chart.lagrangian(&(s * unit(n, a)), &rates), h)
    });
    // d/dt of the momentum along the motion, holding rates fixed.
    let dp = DVector::from_fn(n, |a, _| {
        derivative(|s| chart_momentum(&chart, &(s * &rates), &rates)[a], h)
    });
    let mut generalized = DVector::zeros(n);
    for (i, f) in forces.iter().enumerate() {
        for a in 0..n {
            generalized[a] += derivative(
                |s| {
                    let st = chart.state(&(s * unit(n, a)), &zero);
                    f.dot(&quadrotor_position(&st, params, i).expect("valid index"))
                },
                h,
            );
        }
    }
    let rhs = generalized + dl_dth - dp;
    let th_ddot = mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularConfiguration {
            condition: f64::INFINITY,
            context: "oracle mass matrix".into(),
        })?
        .solve(&rhs);

    let mut q_ddot = Vec::with_capacity(params.n_quads());
    let mut k = 0;
    for cable in &state.links {
        let mut out = Vec::with_capacity(cable.len());
        for l in cable {
            let (a, b) = chart.tangents[k];
            let w = rates[6 + 2 * k] * a + rates[7 + 2 * k] * b;
            out.push(th_ddot[6 + 2 * k] * a + th_ddot[7 + 2 * k] * b - w.norm_squared() * l.q.vec());
            k += 1;
        }
        q_ddot.push(out);
    }
    Ok(Accelerations {
        v0_dot: Vec3::new(th_ddot[0], th_ddot[1], th_ddot[2]),
        omega0_dot: Vec3::new(th_ddot[3], th_ddot[4], th_ddot[5]),
        q_ddot,
    })
}

fn stack(a: &Accelerations) -> DVector<f64> {
    let mut v: Vec<f64> = a.v0_dot.iter().chain(a.omega0_dot.iter()).copied().collect();
    for q in a.q_ddot.iter().flatten() {
        v.extend(q.iter());
    }
    DVector::from_vec(v)
}

/// Relative difference `|a - b| / |b|` of two stacked acceleration sets.
pub fn relative_difference(a: &Accelerations, reference: &Accelerations) -> f64 {
    let (x, y) = (stack(a), stack(reference));
    (x - &y).norm() / y.norm().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleComparison {
    pub samples: usize,
    pub max_relative_error: f64,
    pub mean_relative_error: f64,
}

/// Compares the assembled dynamics against the Euler-Lagrange oracle on
/// `samples` random states (seeded) with random quadrotor forces of magnitude
/// up to `force_scale`.
pub fn compare_dynamics(
    params: &SystemParams,
    samples: usize,
    seed: u64,
    force_scale: f64,
    exec: Execution,
) -> Result<OracleComparison> {
    use rand::SeedableRng;
    let masses = derive_masses(params);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<(FullState, Vec<Vec3>)> = (0..samples)
        .map(|_| {
            let s = random_state(params, &mut rng, 1.0);
            let f = (0..params.n_quads())
                .map(|_| random_vec(&mut rng, force_scale))
                .collect();
            (s, f)
        })
        .collect();
    let errors = map_range(exec, samples, |k| -> Result<f64> {
        let (s, f) = &cases[k];
        let zero = vec![Vec3::zeros(); params.n_quads()];
        let d = rhs_with_forces(s, params, &masses, f, &zero)?;
        let ours = Accelerations {
            v0_dot: d.v0_dot,
            omega0_dot: d.omega0_dot,
            q_ddot: s
                .links
                .iter()
                .zip(&d.links)
                .map(|(c, dc)| {
                    // q_ddot = omega_dot x q + omega x q_dot
                    c.iter()
                        .zip(dc)
                        .map(|(l, dl)| dl.omega_dot.cross(l.q.vec()) + l.omega.cross(&dl.q_dot))
                        .collect()
                })
                .collect(),
        };
        let reference = euler_lagrange_accelerations(s, params, f)?;
        Ok(relative_difference(&ours, &reference))
    });
    let errors: Vec<f64> = errors.into_iter().collect::<Result<_>>()?;
    Ok(OracleComparison {
        samples,
        max_relative_error: errors.iter().copied().fold(0.0, f64::max),
        mean_relative_error: errors.iter().sum::<f64>() / samples.max(1) as f64,
    })
}

/// A quadrotor (point mass) carrying a point load on one rigid massless link,
/// written directly in terms of the cable tension.
#[derive(Debug, Clone, Copy)]
pub struct PointLoadModel {
    pub quad_mass: f64,
    pub load_mass: f64,
    pub length: f64,
    pub gravity: f64,
}

/// Load position/velocity and the link direction/angular velocity. `q`
/// points from the quadrotor to the load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLoadState {
    pub x_load: Vec3,
    pub v_load: Vec3,
    pub q: Vec3,
    pub omega: Vec3,
}

impl PointLoadModel {
    /// Returns `(load acceleration, q_ddot)` for a world force `u` on the quadrotor.
    pub fn accelerations(&self, s: &PointLoadState, u: &Vec3) -> (Vec3, Vec3) {
        let (mq, ml, l, g) = (self.quad_mass, self.load_mass, self.length, self.gravity);
        let q_dot = s.omega.cross(&s.q);
        let mu = ml * mq / (ml + mq);
        let tension = mu * (l * q_dot.norm_squared() - s.q.dot(u) / mq);
        let a_load = g * e3() - tension / ml * s.q;
        let a_quad = g * e3() + (u + tension * s.q) / mq;
        (a_load, (a_load - a_quad) / l)
    }

    fn derivative(&self, s: &PointLoadState, u: &Vec3) -> [Vec3; 4] {
        let (a_load, q_ddot) = self.accelerations(s, u);
        let q_dot = s.omega.cross(&s.q);
        [s.v_load, a_load, q_dot, s.q.cross(&q_ddot)]
    }

    /// Classical RK4 on the twelve components, `u` evaluated at stage times.
    pub fn step<F: Fn(f64) -> Vec3>(&self, s: &PointLoadState, t: f64, dt: f64, u: &F) -> PointLoadState {
        let add = |s: &PointLoadState, k: &[Vec3; 4], h: f64| PointLoadState {
            x_load: s.x_load + h * k[0],
            v_load: s.v_load + h * k[1],
            q: s.q + h * k[2],
            omega: s.omega + h * k[3],
        };
        let k1 = self.derivative(s, &u(t));
        let k2 = self.derivative(&add(s, &k1, dt / 2.0), &u(t + dt / 2.0));
        let k3 = self.derivative(&add(s, &k2, dt / 2.0), &u(t + dt / 2.0));
        let k4 = self.derivative(&add(s, &k3, dt), &u(t + dt));
        let mut k = [Vec3::zeros(); 4];
        for c in 0..4 {
            k[c] = (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]) / 6.0;
        }
        add(s, &k, dt)
    }

    pub fn quad_position(&self, s: &PointLoadState) -> Vec3 {
        s.x_load - self.length * s.q
    }
}

/// Converts a full state of a single-quadrotor, single-link system with zero
/// attachment offset into the point-load representation.
pub fn to_point_load(state: &FullState) -> PointLoadState {
    let l = state.links[0][0];
    PointLoadState {
        x_load: state.x0,
        v_load: state.v0,
        q: *l.q.vec(),
        omega: l.omega,
    }
}

/// Builds the matching full state for a point-load state.
pub fn from_point_load(params: &SystemParams, s: &PointLoadState) -> Result<FullState> {
    let mut full = FullState::hanging(params, s.x_load);
    full.v0 = s.v_load;
    full.links[0][0] = LinkState {
        q: UnitVector::normalize(s.q)?,
        omega: s.omega,
    };
    full.r0 = Rotation::identity();
    Ok(full)
}
