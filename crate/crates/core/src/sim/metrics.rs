//! Per-step error signals and their summaries.

use serde::Serialize;

use crate::controller::ControlOutput;
use crate::manifold::{e3, Vec3};
use crate::model::{Energy, FullState};

/// `e_q = sum |q_ij - e3|`, `e_omega = sum |omega_ij|`.
pub fn link_errors(state: &FullState) -> (f64, f64) {
    state.links.iter().flatten().fold((0.0, 0.0), |(eq, ew), l| {
        (eq + (l.q.vec() - e3()).norm(), ew + l.omega.norm())
    })
}

/// `Psi_0 = tr(I - R0) / 2`, the payload attitude error against `R0d = I`.
pub fn payload_attitude_error(state: &FullState) -> f64 {
    0.5 * (3.0 - state.r0.matrix().trace())
}

/// Signals recorded once per integrator step, including the final state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub times: Vec<f64>,
    pub payload_error: Vec<f64>,
    pub psi0: Vec<f64>,
    /// `[step][quad]`.
    pub psi: Vec<Vec<f64>>,
    pub e_omega: Vec<Vec<f64>>,
    pub thrust: Vec<Vec<f64>>,
    pub moment: Vec<Vec<Vec3>>,
    pub e_q: Vec<f64>,
    pub e_w: Vec<f64>,
    pub v: Vec<f64>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub ex_inf: Vec<f64>,
    pub e_i: Vec<Vec<Vec3>>,
    pub energy: Vec<Energy>,
    pub constraint_defect: Vec<f64>,
}

/// Controller-side quantities at one step.
pub struct StepRecord<'a> {
    pub output: &'a ControlOutput,
    pub v1: f64,
    pub v2: f64,
    pub ex_inf: f64,
    pub e_i: &'a [Vec3],
    pub energy: Energy,
}

impl Metrics {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, t: f64, state: &FullState, x0d: &Vec3, rec: StepRecord) {
        let (eq, ew) = link_errors(state);
        self.times.push(t);
        self.payload_error.push((state.x0 - x0d).norm());
        self.psi0.push(payload_attitude_error(state));
        self.psi.push(rec.output.quads.iter().map(|q| q.psi).collect());
        self.e_omega.push(rec.output.quads.iter().map(|q| q.e_omega.norm()).collect());
        self.thrust.push(rec.output.quads.iter().map(|q| q.thrust).collect());
        self.moment.push(rec.output.quads.iter().map(|q| q.moment).collect());
        self.e_q.push(eq);
        self.e_w.push(ew);
        self.v.push(rec.v1 + rec.v2);
        self.v1.push(rec.v1);
        self.v2.push(rec.v2);
        self.ex_inf.push(rec.ex_inf);
        self.e_i.push(rec.e_i.to_vec());
        self.energy.push(rec.energy);
        self.constraint_defect.push(state.constraint_defect());
    }

    /// Index of the sample closest to `t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        if self.times.is_empty() {
            return None;
        }
        let k = self.times.partition_point(|&s| s < t);
        let candidates = [k.saturating_sub(1), k.min(self.times.len() - 1)];
        candidates
            .into_iter()
            .min_by(|&a, &b| (self.times[a] - t).abs().total_cmp(&(self.times[b] - t).abs()))
    }

    pub fn lyapunov_check(&self, rel_tol: f64) -> LyapunovCheck {
        let v0 = self.v.first().copied().unwrap_or(0.0);
        let tol = rel_tol * v0.abs();
        let mut increases = 0;
        let mut max_increase = 0.0f64;
        for w in self.v.windows(2) {
            let d = w[1] - w[0];
            if d > tol {
                increases += 1;
            }
            max_increase = max_increase.max(d);
        }
        let steps = self.v.len().saturating_sub(1);
        LyapunovCheck {
            v0,
            v_final: self.v.last().copied().unwrap_or(0.0),
            tolerance: tol,
            steps,
            increases,
            fraction: if steps == 0 { 0.0 } else { increases as f64 / steps as f64 },
            max_increase,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovCheck {
    pub v0: f64,
    pub v_final: f64,
    pub tolerance: f64,
    pub steps: usize,
    /// Steps with `V(t + dt) > V(t) + tolerance`.
    pub increases: usize,
    pub fraction: f64,
    pub max_increase: f64,
}

/// First time after which `signal` stays below `threshold`.
pub fn settling_time(times: &[f64], signal: &[f64], threshold: f64) -> Option<f64> {
    match signal.iter().rposition(|&s| !(s < threshold)) {
        None => times.first().copied(),
        Some(k) if k + 1 < times.len() => Some(times[k + 1]),
        Some(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settling() {
        let t = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(settling_time(&t, &[5.0, 0.1, 2.0, 0.1], 1.0), Some(3.0));
        assert_eq!(settling_time(&t, &[0.5, 0.1, 0.2, 0.1], 1.0), Some(0.0));
        assert_eq!(settling_time(&t, &[0.5, 0.1, 0.2, 3.0], 1.0), None);
        assert_eq!(settling_time(&t, &[0.5, f64::NAN, 0.2, 0.1], 1.0), Some(2.0));
    }

    #[test]
    fn nearest_index() {
        let m = Metrics {
            times: vec![0.0, 0.1, 0.2, 0.3],
            ..Metrics::default()
        };
        assert_eq!(m.index_at(0.14), Some(1));
        assert_eq!(m.index_at(0.16), Some(2));
        assert_eq!(m.index_at(-1.0), Some(0));
        assert_eq!(m.index_at(9.0), Some(3));
    }

    #[test]
    fn monotone_count() {
        let m = Metrics {
            v: vec![1.0, 0.9, 0.9 + 5e-7, 0.95, 0.5],
            ..Metrics::default()
        };
        let c = m.lyapunov_check(1e-6);
        assert_eq!(c.increases, 1);
        assert_eq!(c.steps, 4);
        assert!((c.max_increase - (0.05 - 5e-7)).abs() < 1e-12);
    }
}
