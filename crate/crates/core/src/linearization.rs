//! Linearized model `M x_ddot + G x = B du` about the hanging equilibrium and
//! the closed-loop first-order form.
//!
//! Coordinates are `x = [dx0; eta0; C^T xi_{1,:}; ...]` with `R0 = exp(eta0)`
//! and `q_ij = exp(xi_ij) e3`, velocities `[v0; Omega0; C^T omega_{1,:}; ...]`.
//! The link rows are those of the Lagrangian in these coordinates, which
//! makes `M` symmetric; `M^-1 G` and `M^-1 B` do not depend on that scaling.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix3x2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{rhs_with_forces, StateDerivative};
use crate::error::{Error, Result};
use crate::linalg::{reachable_dimension, DenseLu};
use crate::manifold::{e1, e2, e3, exp_so3, hat, log_so3, Mat3, UnitVector, Vec3};
use crate::model::{
    body_energy, quadrotor_position, DerivedMasses, FullState, LinkState, SystemParams,
};
use crate::par::{map_range, Execution};

/// How the payload weight is split between the quadrotors at equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadShare {
    /// `m0 / n` per quadrotor.
    #[default]
    Symmetric,
    /// Minimum-norm correction of the symmetric split that also balances the
    /// payload torque about its center of mass.
    StaticBalance,
}

/// Payload mass carried by each quadrotor.
pub fn load_shares(params: &SystemParams, mode: LoadShare) -> Vec<f64> {
    let n = params.n_quads();
    let m0 = params.payload.mass;
    let symmetric = DVector::from_element(n, m0 / n as f64);
    if mode == LoadShare::Symmetric {
        return symmetric.iter().copied().collect();
    }
    // rows: total weight, torque about e1 and e2
    let a = DMatrix::from_fn(3, n, |r, i| {
        let arm = params.quadrotors[i].attachment.cross(&e3());
        match r {
            0 => 1.0,
            1 => arm.x,
            _ => arm.y,
        }
    });
    let b = DVector::from_vec(vec![m0, 0.0, 0.0]);
    let residual = &b - &a * &symmetric;
    let correction = a
        .svd(true, true)
        .solve(&residual, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(n));
    (symmetric + correction).iter().copied().collect()
}

/// Equilibrium thrust of each quadrotor, `(M_iT + share_i) g`.
pub fn equilibrium_thrusts(params: &SystemParams, masses: &DerivedMasses, mode: LoadShare) -> Vec<f64> {
    load_shares(params, mode)
        .iter()
        .zip(&masses.quad_total)
        .map(|(s, m)| (m + s) * params.gravity)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub m: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub load_share: Vec<f64>,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    /// First-order open-loop pair `([0 I; -M^-1 G 0], [0; M^-1 B])`.
    pub fn first_order(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.dim();
        let lu = mass_lu(&self.m)?;
        let mg = lu.solve_matrix(&self.g);
        let mb = lu.solve_matrix(&self.b);
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, n), (n, n)).fill_with_identity();
        a.view_mut((n, 0), (n, n)).copy_from(&(-mg));
        let mut bt = DMatrix::zeros(2 * n, self.inputs());
        bt.view_mut((n, 0), (n, self.inputs())).copy_from(&mb);
        Ok((a, bt))
    }
}

fn mass_lu(m: &DMatrix<f64>) -> Result<DenseLu> {
    let lu = DenseLu::new(m.clone());
    if lu.is_singular() {
        return Err(Error::SingularConfiguration {
            condition: f64::INFINITY,
            context: "linearized mass matrix".into(),
        });
    }
    Ok(lu)
}

/// Projection `C = [e1, e2]`.
pub fn projection() -> Matrix3x2<f64> {
    Matrix3x2::from_columns(&[e1(), e2()])
}

fn link_row(params: &SystemParams, i: usize, j: usize) -> usize {
    6 + 2 * (params.link_offset(i) + j)
}

/// Analytic linear model about the hanging equilibrium.
pub fn build_linear_model(params: &SystemParams, masses: &DerivedMasses) -> LinearModel {
    build_linear_model_with(params, masses, LoadShare::Symmetric)
}

pub fn build_linear_model_with(
    params: &SystemParams,
    masses: &DerivedMasses,
    share_mode: LoadShare,
) -> LinearModel {
    let n = params.linear_dim();
    let nq = params.n_quads();
    let g = params.gravity;
    let c = projection();
    let e3h = hat(&e3());
    let shares = load_shares(params, share_mode);
    let mut mm = DMatrix::zeros(n, n);
    let mut gg = DMatrix::zeros(n, n);
    let mut bb = DMatrix::zeros(n, 3 * nq);

    mm.view_mut((0, 0), (3, 3))
        .copy_from(&(masses.total * Mat3::identity()));
    mm.view_mut((3, 3), (3, 3)).copy_from(&masses.jbar0);
    let mut m_x0_eta = Mat3::zeros();
    let mut g_eta = Mat3::zeros();

    for (i, quad) in params.quadrotors.iter().enumerate() {
        let rho_h = hat(&quad.attachment);
        let m_it = masses.quad_total[i];
        m_x0_eta -= m_it * rho_h;
        g_eta += shares[i] * g * 0.5 * (e3h * rho_h + rho_h * e3h);

        bb.view_mut((0, 3 * i), (3, 3)).fill_with_identity();
        bb.view_mut((3, 3 * i), (3, 3)).copy_from(&rho_h);

        for (j, link) in quad.links.iter().enumerate() {
            let r = link_row(params, i, j);
            let chain = masses.chain[i][j];
            let l = link.length;
            let x0_s = chain * l * e3h * c;
            let eta_s = chain * l * rho_h * e3h * c;
            mm.view_mut((0, r), (3, 2)).copy_from(&x0_s);
            mm.view_mut((r, 0), (2, 3)).copy_from(&x0_s.transpose());
            mm.view_mut((3, r), (3, 2)).copy_from(&eta_s);
            mm.view_mut((r, 3), (2, 3)).copy_from(&eta_s.transpose());
            for (k, other) in quad.links.iter().enumerate() {
                let col = link_row(params, i, k);
                let v = masses.pair(i, j, k) * l * other.length;
                mm[(r, col)] = v;
                mm[(r + 1, col + 1)] = v;
            }
            let stiffness = l * g * (m_it + shares[i] - chain);
            gg[(r, r)] = stiffness;
            gg[(r + 1, r + 1)] = stiffness;
            bb.view_mut((r, 3 * i), (2, 3))
                .copy_from(&(-l * c.transpose() * e3h));
        }
    }
    mm.view_mut((0, 3), (3, 3)).copy_from(&m_x0_eta);
    mm.view_mut((3, 0), (3, 3)).copy_from(&m_x0_eta.transpose());
    gg.view_mut((3, 3), (3, 3)).copy_from(&g_eta);
    LinearModel {
        m: mm,
        g: gg,
        b: bb,
        load_share: shares,
    }
}

/// Full state at linear coordinates `x`, `x_dot` about the equilibrium with
/// payload at `x0d`. Quadrotors are level and at rest.
pub fn state_from_linear(
    params: &SystemParams,
    x0d: &Vec3,
    x: &DVector<f64>,
    x_dot: &DVector<f64>,
) -> FullState {
    let c = projection();
    let mut s = FullState::hanging(params, x0d + Vec3::new(x[0], x[1], x[2]));
    s.v0 = Vec3::new(x_dot[0], x_dot[1], x_dot[2]);
    s.r0 = exp_so3(&Vec3::new(x[3], x[4], x[5]));
    s.omega0 = Vec3::new(x_dot[3], x_dot[4], x_dot[5]);
    for (i, quad) in params.quadrotors.iter().enumerate() {
        for j in 0..quad.links.len() {
            let r = link_row(params, i, j);
            let xi = c * nalgebra::Vector2::new(x[r], x[r + 1]);
            let w = c * nalgebra::Vector2::new(x_dot[r], x_dot[r + 1]);
            let q = UnitVector::e3().rotate(&xi);
            s.links[i][j] = LinkState {
                q,
                omega: w - q.vec() * q.vec().dot(&w),
            };
        }
    }
    s
}

/// Linear coordinates `(x, x_dot)` of a full state relative to the
/// equilibrium with payload at `x0d`.
pub fn linear_coordinates(
    state: &FullState,
    params: &SystemParams,
    x0d: &Vec3,
) -> (DVector<f64>, DVector<f64>) {
    let n = params.linear_dim();
    let mut x = DVector::zeros(n);
    let mut xd = DVector::zeros(n);
    x.fixed_rows_mut::<3>(0).copy_from(&(state.x0 - x0d));
    x.fixed_rows_mut::<3>(3).copy_from(&log_so3(&state.r0));
    xd.fixed_rows_mut::<3>(0).copy_from(&state.v0);
    xd.fixed_rows_mut::<3>(3).copy_from(&state.omega0);
    for (i, cable) in state.links.iter().enumerate() {
        for (j, link) in cable.iter().enumerate() {
            let r = link_row(params, i, j);
            let xi = link.q.log_from(&UnitVector::e3());
            x[r] = xi.x;
            x[r + 1] = xi.y;
            xd[r] = link.omega.x;
            xd[r + 1] = link.omega.y;
        }
    }
    (x, xd)
}

/// Blocks of the linear model obtained numerically from the nonlinear
/// energies: `M` from the kinetic energy, `G` as the Hessian of the potential
/// including the equilibrium thrust work, `B` from the quadrotor position
/// Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDifferenceModel {
    pub m: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

fn check_step(h: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::validation(
            "h",
            format!("finite-difference step must be in [1e-7, 1e-3], got {h}"),
        ));
    }
    Ok(())
}

fn unit(n: usize, k: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[k] = 1.0;
    e
}

pub fn finite_difference_linearize(
    params: &SystemParams,
    masses: &DerivedMasses,
    h: f64,
) -> Result<FiniteDifferenceModel> {
    finite_difference_linearize_with(params, masses, h, LoadShare::Symmetric, Execution::default())
}

pub fn finite_difference_linearize_with(
    params: &SystemParams,
    masses: &DerivedMasses,
    h: f64,
    share_mode: LoadShare,
    exec: Execution,
) -> Result<FiniteDifferenceModel> {
    check_step(h)?;
    let _ = masses;
    let n = params.linear_dim();
    let nq = params.n_quads();
    let zero = DVector::zeros(n);
    let origin = Vec3::zeros();
    let shares = load_shares(params, share_mode);
    let g = params.gravity;

    let kinetic = |v: &DVector<f64>| body_energy(&state_from_linear(params, &origin, &zero, v), params).kinetic;
    let potential = |x: &DVector<f64>| {
        let s = state_from_linear(params, &origin, x, &zero);
        let mut v = body_energy(&s, params).potential;
        for i in 0..nq {
            let xi = quadrotor_position(&s, params, i).expect("index in range");
            v += (masses.quad_total[i] + shares[i]) * g * e3().dot(&xi);
        }
        v
    };

    let single: Vec<f64> = (0..n).map(|a| kinetic(&unit(n, a))).collect();
    let m_rows = map_range(exec, n, |a| {
        (0..n)
            .map(|b| {
                if a == b {
                    2.0 * single[a]
                } else {
                    kinetic(&(unit(n, a) + unit(n, b))) - single[a] - single[b]
                }
            })
            .collect::<Vec<f64>>()
    });
    let m = DMatrix::from_fn(n, n, |a, b| m_rows[a][b]);

    // Hessian by central differences, Richardson-extrapolated.
    let v0 = potential(&zero);
    let second = |a: usize, b: usize, h: f64| -> f64 {
        let (ea, eb) = (unit(n, a) * h, unit(n, b) * h);
        if a == b {
            (potential(&ea) - 2.0 * v0 + potential(&(-&ea))) / (h * h)
        } else {
            (potential(&(&ea + &eb)) - potential(&(&ea - &eb)) - potential(&(&eb - &ea))
                + potential(&(-&ea - &eb)))
                / (4.0 * h * h)
        }
    };
    let hg = h.max(1e-4);
    let g_rows = map_range(exec, n, |a| {
        (0..n)
            .map(|b| {
                if b < a {
                    f64::NAN
                } else {
                    (4.0 * second(a, b, hg / 2.0) - second(a, b, hg)) / 3.0
                }
            })
            .collect::<Vec<f64>>()
    });
    let gm = DMatrix::from_fn(n, n, |a, b| if b >= a { g_rows[a][b] } else { g_rows[b][a] });

    let b_cols = map_range(exec, n, |a| {
        let ea = unit(n, a) * h;
        let plus = state_from_linear(params, &origin, &ea, &zero);
        let minus = state_from_linear(params, &origin, &(-&ea), &zero);
        (0..nq)
            .map(|i| {
                (quadrotor_position(&plus, params, i).expect("index in range")
                    - quadrotor_position(&minus, params, i).expect("index in range"))
                    / (2.0 * h)
            })
            .collect::<Vec<Vec3>>()
    });
    let b = DMatrix::from_fn(n, 3 * nq, |a, col| b_cols[a][col / 3][col % 3]);
    Ok(FiniteDifferenceModel { m, g: gm, b })
}

fn projected_accelerations(params: &SystemParams, d: &StateDerivative) -> DVector<f64> {
    let mut out = Vec::with_capacity(params.linear_dim());
    out.extend(d.v0_dot.iter());
    out.extend(d.omega0_dot.iter());
    for l in d.links.iter().flatten() {
        out.push(l.omega_dot.x);
        out.push(l.omega_dot.y);
    }
    DVector::from_vec(out)
}

/// Numerical Jacobians of the nonlinear right-hand side at equilibrium:
/// `(d x_ddot / d x, d x_ddot / d du)`, to be compared with `-M^-1 G` and
/// `M^-1 B`.
pub fn dynamics_jacobians(
    params: &SystemParams,
    masses: &DerivedMasses,
    h: f64,
    share_mode: LoadShare,
    exec: Execution,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_step(h)?;
    let n = params.linear_dim();
    let nq = params.n_quads();
    let zero = DVector::zeros(n);
    let origin = Vec3::zeros();
    let thrusts = equilibrium_thrusts(params, masses, share_mode);
    let hover: Vec<Vec3> = thrusts.iter().map(|f| -f * e3()).collect();
    let moments = vec![Vec3::zeros(); nq];

    let accel = |x: &DVector<f64>, du: &[Vec3]| -> Result<DVector<f64>> {
        let s = state_from_linear(params, &origin, x, &zero);
        let forces: Vec<Vec3> = hover.iter().zip(du).map(|(a, b)| a + b).collect();
        Ok(projected_accelerations(params, &rhs_with_forces(&s, params, masses, &forces, &moments)?))
    };
    let no_du = vec![Vec3::zeros(); nq];
    let central = |f: &dyn Fn(f64) -> Result<DVector<f64>>| -> Result<DVector<f64>> {
        let d = |h: f64| -> Result<DVector<f64>> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
        Ok((d(h / 2.0)? * 4.0 - d(h)?) / 3.0)
    };
    let a_cols = map_range(exec, n, |a| central(&|t| accel(&(unit(n, a) * t), &no_du)));
    let b_cols = map_range(exec, 3 * nq, |col| {
        central(&|t| {
            let mut du = no_du.clone();
            du[col / 3][col % 3] = t;
            accel(&zero, &du)
        })
    });
    let mut a = DMatrix::zeros(n, n);
    for (k, c) in a_cols.into_iter().enumerate() {
        a.set_column(k, &c?);
    }
    let mut b = DMatrix::zeros(n, 3 * nq);
    for (k, c) in b_cols.into_iter().enumerate() {
        b.set_column(k, &c?);
    }
    Ok((a, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopModel {
    pub a: DMatrix<f64>,
    pub bm: DMatrix<f64>,
    pub kx: DMatrix<f64>,
    pub kxdot: DMatrix<f64>,
}

/// `A = [0 I; -M^-1 (G + B Kx)  -M^-1 B Kxdot]`, `Bm = [0; M^-1]`.
pub fn build_closed_loop(
    lm: &LinearModel,
    kx: &DMatrix<f64>,
    kxdot: &DMatrix<f64>,
) -> Result<ClosedLoopModel> {
    let n = lm.dim();
    let m_in = lm.inputs();
    for (what, k) in [("Kx", kx), ("Kxdot", kxdot)] {
        if k.nrows() != m_in || k.ncols() != n {
            return Err(Error::Dimension {
                what,
                expected: format!("{m_in}x{n}"),
                got: format!("{}x{}", k.nrows(), k.ncols()),
            });
        }
    }
    let lu = mass_lu(&lm.m)?;
    let m_inv = lu.solve_matrix(&DMatrix::identity(n, n));
    let stiff = &m_inv * (&lm.g + &lm.b * kx);
    let damp = &m_inv * (&lm.b * kxdot);
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).fill_with_identity();
    a.view_mut((n, 0), (n, n)).copy_from(&(-stiff));
    a.view_mut((n, n), (n, n)).copy_from(&(-damp));
    let mut bm = DMatrix::zeros(2 * n, n);
    bm.view_mut((n, 0), (n, n)).copy_from(&m_inv);
    Ok(ClosedLoopModel {
        a,
        bm,
        kx: kx.clone(),
        kxdot: kxdot.clone(),
    })
}

/// Rank of the controllability matrix of the first-order open-loop system.
pub fn controllability_rank(lm: &LinearModel) -> Result<usize> {
    let (a, b) = lm.first_order()?;
    Ok(reachable_dimension(&a, &b, 1e-9))
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "%%MatrixMarket matrix array real general");
    let _ = writeln!(out, "% {name}");
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let _ = writeln!(out, "{}", crate::sim::export::format_g17(m[(r, c)]));
        }
    }
}

/// Matrix-market style text dump of the given named matrices.
pub fn dump_matrices(mats: &[(&str, &DMatrix<f64>)]) -> String {
    let mut out = String::new();
    for (name, m) in mats {
        write_matrix(&mut out, name, m);
    }
    out
}
