//! Closed-loop runs of a scenario.

use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use crate::controller::{ControlOutput, Controller, ControllerState};
use crate::error::Result;
use crate::gains::certificate::{
    attitude_lyapunov, disturbance_force, integral_coupling, integral_energy, integral_setpoint, AttitudeErrors,
};
use crate::gains::{check_certificate, design_gains, Certificate, GainSet};
use crate::integrator::{simulate, Trajectory};
use crate::linearization::{build_linear_model_with, LinearModel};
use crate::model::{derive_masses, total_energy, DerivedMasses, FullState};
use crate::par::{map_slice, Execution};
use crate::sim::metrics::{settling_time, LyapunovCheck, Metrics, StepRecord};
use crate::sim::scenario::{Scenario, ScenarioFile};

/// Threshold used for the reported convergence times.
pub const CONVERGENCE_THRESHOLD: f64 = 0.01;

/// Relative per-step tolerance of the Lyapunov monotonicity check.
pub const LYAPUNOV_TOLERANCE: f64 = 1e-6;

/// Linear model, gains and certificate of a scenario.
pub struct Design {
    pub masses: DerivedMasses,
    pub linear: LinearModel,
    pub gains: GainSet,
    pub certificate: Certificate,
}

pub fn design(s: &Scenario) -> Result<Design> {
    let masses = derive_masses(&s.params);
    let linear = build_linear_model_with(&s.params, &masses, s.load_share);
    let gains = design_gains(&s.params, &linear, &s.gains)?;
    let certificate = check_certificate(
        &gains,
        &s.params,
        &masses,
        &linear,
        s.disturbance.bound,
        &s.certificate,
    );
    Ok(Design {
        masses,
        linear,
        gains,
        certificate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Terminal {
    pub time: f64,
    pub payload_error: f64,
    pub payload_position: [f64; 3],
    pub psi0: f64,
    pub psi_max: f64,
    pub e_omega_max: f64,
    pub e_q: f64,
    pub e_w: f64,
    pub lyapunov: f64,
    pub e_x_inf: f64,
    pub e_i: Vec<[f64; 3]>,
    pub thrust: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTimes {
    pub threshold: f64,
    pub payload_error: Option<f64>,
    pub e_q: Option<f64>,
    pub e_w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub steps: usize,
    pub dt: f64,
    pub duration: f64,
    pub terminal: Terminal,
    pub convergence: ConvergenceTimes,
    pub lyapunov: LyapunovCheck,
    pub e_x_sup: f64,
    pub max_constraint_defect: f64,
    pub certificate: Certificate,
    pub config: ScenarioFile,
    pub wall_clock_s: f64,
}

pub struct RunOutput {
    pub trajectory: Trajectory,
    pub metrics: Metrics,
    pub summary: Summary,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

struct Monitor<'a> {
    s: &'a Scenario,
    d: &'a Design,
    coupling: nalgebra::DMatrix<f64>,
    force: DVector<f64>,
    /// `2 int (S sat(e_x) - B Delta) . de_x` accumulated along the path.
    ex_energy: f64,
}

impl Monitor<'_> {
    fn advance(&mut self, from: &DVector<f64>, to: &DVector<f64>) {
        self.ex_energy += integral_energy(&self.coupling, &self.force, from, to, self.d.gains.sigma);
    }

    fn record(&self, m: &mut Metrics, t: f64, state: &FullState, out: &ControlOutput, ctrl: &ControllerState) {
        let v1 = out.z1.dot(&(&self.d.gains.p * &out.z1)) + self.ex_energy;
        let v2 = out
            .quads
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let errors = AttitudeErrors {
                    psi: q.psi,
                    e_r: q.e_r,
                    e_omega: q.e_omega,
                    e_i: ctrl.e_i[i],
                };
                attitude_lyapunov(
                    &errors,
                    &self.d.gains.attitude[i],
                    &self.s.params.quadrotors[i].inertia,
                    &self.s.disturbance.moment[i],
                )
            })
            .sum();
        let rec = StepRecord {
            output: out,
            v1,
            v2,
            ex_inf: inf_norm(&ctrl.e_x),
            e_i: &ctrl.e_i,
            energy: total_energy(state, &self.s.params, &self.d.masses),
        };
        m.push(t, state, &self.s.x0d, rec);
    }
}

/// Simulates the closed loop and evaluates every metric.
pub fn run(s: &Scenario) -> Result<RunOutput> {
    let started = Instant::now();
    let d = design(s)?;
    let mut controller = Controller::new(d.gains.clone(), d.linear.load_share.clone(), s.x0d, s.controller);
    controller.b1 = s.b1;
    let dec = s.controller.decimation;
    let ctrl_dt = s.integrator.dt * dec as f64;
    let mut mon = Monitor {
        s,
        d: &d,
        coupling: integral_coupling(&d.gains, &s.params, &d.linear),
        force: disturbance_force(&d.linear, &s.disturbance),
        ex_energy: 0.0,
    };
    let mut ctrl = ControllerState::new(&s.params);
    mon.advance(&integral_setpoint(&d.gains, &s.disturbance), &ctrl.e_x);
    let mut metrics = Metrics::default();
    let mut held: Option<ControlOutput> = None;
    let mut k = 0usize;

    let update = |ctrl: &mut ControllerState, mon: &mut Monitor, state: &FullState| -> Result<ControlOutput> {
        let (out, next) = controller.compute(state, ctrl, &s.params, &d.masses.quad_total, ctrl_dt)?;
        mon.advance(&ctrl.e_x, &next.e_x);
        *ctrl = next;
        Ok(out)
    };

    let trajectory = simulate(
        &s.initial,
        &s.params,
        &d.masses,
        &s.disturbance,
        &s.integrator,
        s.duration,
        |t, state| {
            if k % dec == 0 || held.is_none() {
                held = Some(update(&mut ctrl, &mut mon, state)?);
            }
            k += 1;
            let out = held.as_ref().expect("control computed");
            mon.record(&mut metrics, t, state, out, &ctrl);
            Ok(out.inputs())
        },
    )?;
    let last = trajectory.states.last().expect("initial state present");
    let t_end = *trajectory.times.last().expect("initial time present");
    let out = update(&mut ctrl, &mut mon, last)?;
    mon.record(&mut metrics, t_end, last, &out, &ctrl);

    let n = metrics.len() - 1;
    let terminal = Terminal {
        time: t_end,
        payload_error: metrics.payload_error[n],
        payload_position: last.x0.into(),
        psi0: metrics.psi0[n],
        psi_max: metrics.psi[n].iter().copied().fold(0.0, f64::max),
        e_omega_max: metrics.e_omega[n].iter().copied().fold(0.0, f64::max),
        e_q: metrics.e_q[n],
        e_w: metrics.e_w[n],
        lyapunov: metrics.v[n],
        e_x_inf: metrics.ex_inf[n],
        e_i: metrics.e_i[n].iter().map(|v| (*v).into()).collect(),
        thrust: metrics.thrust[n].clone(),
    };
    let convergence = ConvergenceTimes {
        threshold: CONVERGENCE_THRESHOLD,
        payload_error: settling_time(&metrics.times, &metrics.payload_error, CONVERGENCE_THRESHOLD),
        e_q: settling_time(&metrics.times, &metrics.e_q, CONVERGENCE_THRESHOLD),
        e_w: settling_time(&metrics.times, &metrics.e_w, CONVERGENCE_THRESHOLD),
    };
    let summary = Summary {
        scenario: s.name.clone(),
        steps: trajectory.inputs.len(),
        dt: s.integrator.dt,
        duration: s.duration,
        terminal,
        convergence,
        lyapunov: metrics.lyapunov_check(LYAPUNOV_TOLERANCE),
        e_x_sup: metrics.ex_inf.iter().copied().fold(0.0, f64::max),
        max_constraint_defect: metrics.constraint_defect.iter().copied().fold(0.0, f64::max),
        certificate: d.certificate.clone(),
        config: s.file.clone(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        trajectory,
        metrics,
        summary,
    })
}

/// Runs independent scenarios, in parallel when available. Results keep the input order.
pub fn run_batch(scenarios: &[Scenario], exec: Execution) -> Vec<Result<RunOutput>> {
    map_slice(exec, scenarios, run)
}
