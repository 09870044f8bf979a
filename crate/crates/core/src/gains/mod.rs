//! Gain synthesis, the Lyapunov equation and the stability certificate.

pub mod certificate;
pub mod lqr;
pub mod lyapunov;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearization::{build_closed_loop, LinearModel};
use crate::model::SystemParams;

pub use certificate::{check_certificate, lyapunov_value, Certificate, CertificateConfig, LyapunovValue};
pub use lqr::{solve_care, synthesize_gains, LqrWeights};
pub use lyapunov::{lyapunov_residual, solve_lyapunov};

/// Attitude loop gains of one quadrotor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttitudeGains {
    pub k_r: f64,
    pub k_omega: f64,
    pub k_i: f64,
    pub c2: f64,
}

impl Default for AttitudeGains {
    fn default() -> Self {
        AttitudeGains {
            k_r: 1.0,
            k_omega: 0.1,
            k_i: 0.05,
            c2: 1.0,
        }
    }
}

/// Everything needed to build a [`GainSet`] from a linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainDesign {
    pub weights: LqrWeights,
    /// `Q = lyapunov_q * I` in the closed-loop Lyapunov equation, except for
    /// the payload vertical position and velocity entries.
    pub lyapunov_q: f64,
    /// Extra factor on the vertical entries of `Q`.
    pub lyapunov_q_vertical: f64,
    pub k_z: f64,
    /// Per-quadrotor link integral gains; defaults to `k_z / 10`.
    pub k_z_links: Option<Vec<f64>>,
    pub sigma: f64,
    pub attitude: AttitudeGains,
}

impl Default for GainDesign {
    fn default() -> Self {
        GainDesign {
            weights: LqrWeights::default(),
            lyapunov_q: 1.0,
            lyapunov_q_vertical: 1.0,
            k_z: 1.0,
            k_z_links: None,
            sigma: 1.0,
            attitude: AttitudeGains::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub kx: DMatrix<f64>,
    pub kxdot: DMatrix<f64>,
    pub k_z: f64,
    pub k_z_links: Vec<f64>,
    pub sigma: f64,
    pub attitude: Vec<AttitudeGains>,
    pub q: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Closed-loop `A` and `P Bm`, cached for the integral update.
    pub a_cl: DMatrix<f64>,
    pub pb: DMatrix<f64>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(name, format!("must be positive, got {v}")))
    }
}

impl GainSet {
    /// `K_z = [k_z I3, k_z I3, k_zi I_{3x2} ...]`, shape `3 x D_x`.
    pub fn kz_matrix(&self, params: &SystemParams) -> DMatrix<f64> {
        let dx = self.kx.ncols();
        let mut kz = DMatrix::zeros(3, dx);
        for r in 0..3 {
            kz[(r, r)] = self.k_z;
            kz[(r, 3 + r)] = self.k_z;
        }
        for (i, cable) in params.quadrotors.iter().enumerate() {
            for j in 0..cable.links.len() {
                let col = 6 + 2 * (params.link_offset(i) + j);
                kz[(0, col)] = self.k_z_links[i];
                kz[(1, col + 1)] = self.k_z_links[i];
            }
        }
        kz
    }

    /// Rows of `Kx`, `Kxdot` belonging to quadrotor `i`.
    pub fn quad_rows(&self, i: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            self.kx.rows(3 * i, 3).into_owned(),
            self.kxdot.rows(3 * i, 3).into_owned(),
        )
    }

    /// Integral setpoint cancelling a disturbance force shared by every quadrotor.
    pub fn integral_equilibrium(&self, disturbance: &Vector3<f64>) -> DVector<f64> {
        let mut p = DVector::zeros(self.kx.ncols());
        for r in 0..3 {
            p[r] = disturbance[r] / self.k_z;
        }
        p
    }

    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        let n = params.n_quads();
        let dx = self.p.nrows() / 2;
        for (what, k) in [("Kx", &self.kx), ("Kxdot", &self.kxdot)] {
            if k.nrows() != 3 * n || k.ncols() != dx {
                return Err(Error::Dimension {
                    what,
                    expected: format!("{}x{dx}", 3 * n),
                    got: format!("{}x{}", k.nrows(), k.ncols()),
                });
            }
        }
        positive("k_z", self.k_z)?;
        positive("sigma", self.sigma)?;
        if self.k_z_links.len() != n || self.attitude.len() != n {
            return Err(Error::validation("gains", "need one entry per quadrotor"));
        }
        for &k in &self.k_z_links {
            positive("k_z_links", k)?;
        }
        for a in &self.attitude {
            positive("k_r", a.k_r)?;
            positive("k_omega", a.k_omega)?;
            positive("k_i", a.k_i)?;
            positive("c2", a.c2)?;
        }
        Ok(())
    }
}

impl GainDesign {
    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        self.weights.validate()?;
        positive("lyapunov_q", self.lyapunov_q)?;
        positive("lyapunov_q_vertical", self.lyapunov_q_vertical)?;
        positive("k_z", self.k_z)?;
        positive("sigma", self.sigma)?;
        if let Some(links) = &self.k_z_links {
            if links.len() != params.n_quads() {
                return Err(Error::validation("k_z_links", "need one entry per quadrotor"));
            }
            for &k in links {
                positive("k_z_links", k)?;
            }
        }
        let a = &self.attitude;
        positive("k_r", a.k_r)?;
        positive("k_omega", a.k_omega)?;
        positive("k_i", a.k_i)?;
        positive("c2", a.c2)
    }
}

/// Assembles a gain set: LQR for `(Kx, Kxdot)`, then `P` from the closed loop.
pub fn design_gains(params: &SystemParams, lm: &LinearModel, design: &GainDesign) -> Result<GainSet> {
    design.validate(params)?;
    let (kx, kxdot) = synthesize_gains(lm, &design.weights)?;
    from_feedback(params, lm, design, kx, kxdot)
}

/// Completes a gain set around given feedback matrices.
pub fn from_feedback(
    params: &SystemParams,
    lm: &LinearModel,
    design: &GainDesign,
    kx: DMatrix<f64>,
    kxdot: DMatrix<f64>,
) -> Result<GainSet> {
    design.validate(params)?;
    let cl = build_closed_loop(lm, &kx, &kxdot)?;
    let dim = cl.a.nrows();
    let mut q = DMatrix::identity(dim, dim) * design.lyapunov_q;
    q[(2, 2)] *= design.lyapunov_q_vertical;
    q[(dim / 2 + 2, dim / 2 + 2)] *= design.lyapunov_q_vertical;
    let p = solve_lyapunov(&cl.a, &q)?;
    let pb = &p * &cl.bm;
    let n = params.n_quads();
    let gains = GainSet {
        kx,
        kxdot,
        k_z: design.k_z,
        k_z_links: design
            .k_z_links
            .clone()
            .unwrap_or_else(|| vec![design.k_z / 10.0; n]),
        sigma: design.sigma,
        attitude: vec![design.attitude; n],
        q,
        p,
        a_cl: cl.a,
        pb,
    };
    gains.validate(params)?;
    Ok(gains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_real_eigenvalue;
    use crate::linearization::build_linear_model;
    use crate::model::derive_masses;
    use crate::testing::paper_params;

    #[test]
    fn paper_gains_hurwitz() {
        let params = paper_params();
        let masses = derive_masses(&params);
        let lm = build_linear_model(&params, &masses);
        let g = design_gains(&params, &lm, &GainDesign::default()).unwrap();
        assert_eq!(g.kx.shape(), (12, 46));
        assert!(max_real_eigenvalue(&g.a_cl) < 0.0);
        assert!(lyapunov_residual(&g.a_cl, &g.p, &g.q) < 1e-8);
        assert!(g.p.clone().cholesky().is_some());
    }

    #[test]
    fn kz_structure() {
        let params = paper_params();
        let masses = derive_masses(&params);
        let lm = build_linear_model(&params, &masses);
        let g = design_gains(&params, &lm, &GainDesign::default()).unwrap();
        let kz = g.kz_matrix(&params);
        assert_eq!(kz.shape(), (3, 46));
        assert_eq!(kz[(2, 2)], 1.0);
        assert_eq!(kz[(2, 5)], 1.0);
        assert_eq!(kz[(0, 6)], 0.1);
        assert_eq!(kz[(1, 7)], 0.1);
        assert_eq!(kz[(2, 6)], 0.0);
        assert_eq!(kz.row(2).iter().filter(|v| **v != 0.0).count(), 2);
    }
}
