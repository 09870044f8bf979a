//! End-to-end acceptance checks. Runs without the libtest harness so that the
//! per-criterion result lines are always printed.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use rand::SeedableRng;

use multilift::dynamics::{full_rhs, QuadInput};
use multilift::gains::certificate::check_certificate;
use multilift::gains::lyapunov_residual;
use multilift::gains::solve_lyapunov;
use multilift::integrator::{simulate, IntegratorConfig};
use multilift::linearization::{
    build_closed_loop, build_linear_model, controllability_rank, finite_difference_linearize,
};
use multilift::manifold::{e3, Mat3, UnitVector, Vec3};
use multilift::model::{derive_masses, total_energy, DisturbanceSpec, FullState, Link, Payload, Quadrotor, SystemParams};
use multilift::oracle::{compare_dynamics, random_state, to_point_load, PointLoadModel, PointLoadState};
use multilift::par::Execution;
use multilift::sim::builtin::{paper_params, quad_inertia};
use multilift::sim::run::{design, run, RunOutput};
use multilift::sim::scenario::{load_scenario, scenario_file};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Thrust of the hanging equilibrium: quadrotor, its cable and an equal share
/// of the payload, all times g.
fn hover_thrust(p: &SystemParams, i: usize) -> f64 {
    let q = &p.quadrotors[i];
    let links: f64 = q.links.iter().map(|l| l.mass).sum();
    (q.mass + links + p.payload.mass / p.n_quads() as f64) * p.gravity
}

fn c1_equilibrium() -> Outcome {
    let start = Instant::now();
    let p = paper_params();
    let m = derive_masses(&p);
    let s = FullState::hanging(&p, Vec3::new(0.44, 0.78, -0.5));
    let u: Vec<QuadInput> = (0..4)
        .map(|i| QuadInput {
            thrust: hover_thrust(&p, i),
            moment: Vec3::zeros(),
        })
        .collect();
    let d = full_rhs(&s, &p, &m, &u, &DisturbanceSpec::none(4)).expect("rhs");
    let r = d.max_acceleration();
    let t = start.elapsed().as_secs_f64();
    outcome(r < 1e-10 && t < 1.0, format!("|Xdot| = {r:.2e}, {t:.3} s"))
}

fn c2_dynamics_oracle() -> Outcome {
    let start = Instant::now();
    let r = compare_dynamics(&paper_params(), 50, 2024, 10.0, Execution::default()).expect("oracle");
    let t = start.elapsed().as_secs_f64();
    outcome(
        r.samples == 50 && r.max_relative_error < 1e-6 && t < 30.0,
        format!("50 states, max rel. err. {:.2e}, {t:.1} s", r.max_relative_error),
    )
}

fn c3_point_load_reduction() -> Outcome {
    let (m0, mq, l) = (0.3, 0.8, 1.1);
    let p = SystemParams {
        payload: Payload {
            mass: m0,
            inertia: Mat3::identity() * 1e-4,
        },
        quadrotors: vec![Quadrotor {
            mass: mq,
            inertia: quad_inertia(),
            attachment: Vec3::zeros(),
            links: vec![Link { mass: 0.0, length: l }],
        }],
        gravity: 9.81,
    };
    let masses = derive_masses(&p);
    let mut s = FullState::hanging(&p, Vec3::new(0.2, -0.1, 0.5));
    s.v0 = Vec3::new(0.3, -0.2, 0.1);
    let q = UnitVector::normalize(Vec3::new(0.4, -0.3, 1.0)).expect("unit");
    let w = Vec3::new(0.5, 1.2, -0.7);
    s.links[0][0].omega = w - q.vec() * q.vec().dot(&w);
    s.links[0][0].q = q;
    let thrust = |t: f64| (mq + m0) * 9.81 * (1.0 + 0.3 * (3.0 * t).sin());
    let cfg = IntegratorConfig::default();
    let none = DisturbanceSpec::none(1);
    let tr = simulate(&s, &p, &masses, &none, &cfg, 2.0, |t, _| {
        Ok(vec![QuadInput {
            thrust: thrust(t),
            moment: Vec3::zeros(),
        }])
    })
    .expect("simulate");
    let model = PointLoadModel {
        quad_mass: mq,
        load_mass: m0,
        length: l,
        gravity: 9.81,
    };
    let mut ps: PointLoadState = to_point_load(&s);
    let mut worst = 0.0f64;
    for k in 0..tr.inputs.len() {
        // the quadrotor keeps R = I, so the force is -f e3, held over the step
        let u = -tr.inputs[k][0].thrust * e3();
        ps = model.step(&ps, tr.times[k], cfg.dt, &|_| u);
        let full = &tr.states[k + 1];
        let d = (full.x0 - ps.x_load)
            .amax()
            .max((full.links[0][0].q.vec() - ps.q).amax())
            .max((full.v0 - ps.v_load).amax())
            .max((full.links[0][0].omega - ps.omega).amax());
        worst = worst.max(d);
    }
    outcome(worst < 1e-8, format!("max deviation over 2 s: {worst:.2e}"))
}

fn c4_energy() -> Outcome {
    let p = paper_params();
    let m = derive_masses(&p);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
    let init = random_state(&p, &mut rng, 0.5);
    let zero = vec![QuadInput::default(); 4];
    let cfg = IntegratorConfig {
        dt: 1e-3,
        ..IntegratorConfig::default()
    };
    let tr = simulate(&init, &p, &m, &DisturbanceSpec::none(4), &cfg, 5.0, |_, _| Ok(zero.clone())).expect("simulate");
    let e0 = total_energy(&init, &p, &m).total();
    let drift = tr
        .states
        .iter()
        .map(|s| ((total_energy(s, &p, &m).total() - e0) / e0).abs())
        .fold(0.0, f64::max);
    outcome(drift < 1e-6, format!("max |dE|/|E0| = {drift:.2e} over 5 s, E0 = {e0:.4} J"))
}

fn c5_constraints(runs: &[(&str, &RunOutput)]) -> Outcome {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, r) in runs {
        let mut d = 0.0f64;
        for s in &r.trajectory.states {
            d = d.max(s.r0.orthogonality_defect());
            for l in s.links.iter().flatten() {
                d = d.max((l.q.vec().norm() - 1.0).abs()).max(l.q.vec().dot(&l.omega).abs());
            }
            for q in &s.quads {
                d = d.max((q.r.matrix().transpose() * q.r.matrix() - Mat3::identity()).norm());
            }
        }
        worst = worst.max(d);
        parts.push(format!("{name} {d:.1e}"));
    }
    outcome(worst < 1e-9, format!("max defect over 10 s runs: {}", parts.join(", ")))
}

fn c6_linearization() -> Outcome {
    let p = paper_params();
    let m = derive_masses(&p);
    let lm = build_linear_model(&p, &m);
    let fd = finite_difference_linearize(&p, &m, 1e-5).expect("finite differences");
    let (em, eg, eb) = (rel(&lm.m, &fd.m), rel(&lm.g, &fd.g), rel(&lm.b, &fd.b));
    let rank = controllability_rank(&lm).expect("rank");
    let dx = 6 + 2 * p.total_links();
    outcome(
        em.max(eg).max(eb) < 1e-4 && rank == 2 * dx && rank == 92,
        format!("rel. err. M {em:.1e}, G {eg:.1e}, B {eb:.1e}; rank {rank} of {}", 2 * dx),
    )
}

fn c7_lyapunov() -> Outcome {
    let s = load_scenario("paper-case1").expect("scenario");
    let d = design(&s).expect("design");
    let cl = build_closed_loop(&d.linear, &d.gains.kx, &d.gains.kxdot).expect("closed loop");
    let n = cl.a.nrows();
    let r_design = lyapunov_residual(&cl.a, &d.gains.p, &d.gains.q);
    let q = DMatrix::identity(n, n);
    let p = solve_lyapunov(&cl.a, &q).expect("solve");
    let r_unit = lyapunov_residual(&cl.a, &p, &q);
    outcome(
        n == 2 * 46 && r_design < 1e-8 && r_unit < 1e-8,
        format!("dim {n}, residual {r_design:.1e} (design Q), {r_unit:.1e} (Q = I)"),
    )
}

fn convergence(r: &RunOutput, tol: f64) -> (bool, String) {
    let t = &r.summary.terminal;
    let ok = t.payload_error < tol
        && t.e_q < tol
        && t.e_w < tol
        && t.psi0 < tol
        && t.psi_max < tol
        && t.e_omega_max < tol;
    let detail = format!(
        "t = {:.1} s: |x0 - x0d| = {:.2e} m, e_q = {:.2e}, e_omega = {:.2e}, Psi0 = {:.1e}, max Psi_i = {:.1e}, max |e_Omega_i| = {:.1e}; {:.1} s",
        t.time, t.payload_error, t.e_q, t.e_w, t.psi0, t.psi_max, t.e_omega_max, r.summary.wall_clock_s
    );
    (ok, detail)
}

fn c8_case1(r: &RunOutput) -> Outcome {
    let (ok, detail) = convergence(r, 0.01);
    let target = Vec3::from(r.summary.terminal.payload_position) - Vec3::new(0.44, 0.78, -0.5);
    let ok = ok && target.norm() < 0.01 && r.summary.duration == 10.0 && r.summary.wall_clock_s < 60.0;
    outcome(ok, detail)
}

fn c9_case2(r: &RunOutput) -> Outcome {
    let init = &r.trajectory.states[0];
    let angle = |m: &Mat3| (0.5 * (m.trace() - 1.0)).clamp(-1.0, 1.0).acos().to_degrees();
    let tilt = angle(init.r0.matrix());
    let quads: Vec<f64> = init.quads.iter().map(|q| angle(q.r.matrix())).collect();
    let start_ok = (tilt - 30.0).abs() < 1e-9
        && (quads[0] - 35.0).abs() < 1e-9
        && (quads[2] - 35.0).abs() < 1e-9
        && quads[1] == 0.0
        && quads[3] == 0.0;
    let (ok, detail) = convergence(r, 0.01);
    outcome(
        ok && start_ok,
        format!("from payload tilt {tilt:.1} deg, quadrotor tilts {quads:.1?} deg; {detail}"),
    )
}

fn c10_certificate() -> Outcome {
    let s = load_scenario("paper-case1").expect("scenario");
    let d = design(&s).expect("design");
    let c = &d.certificate;
    // c2 bound recomputed from the inertia: for diag(a, a, c) the spread of
    // 2J - tr(J) I is max(c, |c - 2a|)
    let j = quad_inertia();
    let (a, cz) = (j[(0, 0)], j[(2, 2)]);
    let b2 = cz.max((cz - 2.0 * a).abs()) * s.certificate.omega_d_bound;
    let g = s.gains.attitude;
    let bound = ((g.k_r * a).sqrt() / cz).min(4.0 * g.k_omega / (8.0 * g.k_r * cz + (g.k_omega + b2).powi(2)));
    let satisfies = g.c2 < bound;
    let bound_agrees = c.quads.iter().all(|q| (q.c2_bound - bound).abs() < 1e-12 * bound);

    // violation: the second diagonal entry of W2, k_Omega - 2 c2 lambda_max, turns negative
    let mut f = scenario_file("paper-case1").expect("scenario");
    f.gains.attitude.c2 = 2.0 * g.k_omega / (2.0 * cz);
    let bad = f.build().expect("scenario");
    let bd = design(&bad).expect("design");
    let bc = check_certificate(&bd.gains, &bad.params, &bd.masses, &bd.linear, 0.0, &bad.certificate);
    let c2 = bad.gains.attitude.c2;
    let off = -0.5 * c2 * (g.k_omega + b2);
    let w2 = Matrix2::new(c2 * g.k_r, off, off, g.k_omega - 2.0 * c2 * cz);
    let oracle_min = SymmetricEigen::new(w2).eigenvalues.min();
    let reported = bc.quads.iter().map(|q| q.w2_min_eig).fold(f64::INFINITY, f64::min);
    let ok = satisfies
        && bound_agrees
        && c.passed
        && !bc.passed
        && bc.quads.iter().all(|q| !q.c2_ok && !q.w2_ok)
        && reported <= 0.0
        && (reported - oracle_min).abs() < 1e-12 * oracle_min.abs().max(1.0);
    outcome(
        ok,
        format!(
            "paper gains: c2 = {} < {bound:.4}, passed = {}; c2 = {c2:.2}: passed = {}, W2 min eig {reported:.4} (oracle {oracle_min:.4})",
            g.c2, c.passed, bc.passed
        ),
    )
}

fn c11_monotone(r: &RunOutput) -> Outcome {
    let l = &r.summary.lyapunov;
    let ok = r.summary.certificate.passed && l.increases == 0 && l.steps == 10_000;
    outcome(
        ok,
        format!(
            "certificate passed = {}; {} of {} steps with V(t+dt) > V(t) + 1e-6 V(0), V(0) = {:.3e}, V(10) = {:.3e}",
            r.summary.certificate.passed, l.increases, l.steps, l.v0, l.v_final
        ),
    )
}

fn c12_disturbance() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/disturbance-rejection.toml");
    let s = load_scenario(path.to_str().expect("utf-8 path")).expect("scenario");
    let d = design(&s).expect("design");
    let capacity = d.gains.k_z * d.gains.sigma;
    let delta = s.disturbance.force_inf_norm();
    let r = run(&s).expect("run");
    let m = &r.metrics;
    let window = |a: f64, b: f64| {
        m.times
            .iter()
            .zip(&m.ex_inf)
            .filter(|(t, _)| **t >= a && **t <= b)
            .map(|(_, e)| *e)
            .fold(0.0, f64::max)
    };
    let (mid, late) = (window(10.0, 15.0), window(15.0, 20.0));
    let plateau = (late - mid).abs() / mid;
    let k_i = s.gains.attitude.k_i;
    let ei_err = r
        .summary
        .terminal
        .e_i
        .iter()
        .zip(&s.disturbance.moment)
        .map(|(e, dr)| (Vec3::from(*e) - dr / k_i).norm() / (dr / k_i).norm())
        .fold(0.0, f64::max);
    let err = r.summary.terminal.payload_error;
    let ok = (delta - 0.8 * capacity).abs() < 1e-12
        && err < 5e-3
        && r.summary.e_x_sup.is_finite()
        && plateau < 0.05
        && ei_err < 0.05;
    outcome(
        ok,
        format!(
            "|Delta_x| = {delta} = 0.8 k_z sigma; |x0 - x0d|(20 s) = {err:.2e} m; sup|e_x| {:.3e}, change over last 5 s {:.1}%; e_I vs Delta_R/k_I {:.1}%",
            r.summary.e_x_sup,
            100.0 * plateau,
            100.0 * ei_err
        ),
    )
}

fn main() -> ExitCode {
    let case1 = run(&load_scenario("paper-case1").expect("scenario")).expect("case 1");
    let case2 = run(&load_scenario("paper-case2").expect("scenario")).expect("case 2");
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("equilibrium residual", Box::new(c1_equilibrium)),
        ("dynamics vs Euler-Lagrange oracle", Box::new(c2_dynamics_oracle)),
        ("single cable point-load reduction", Box::new(c3_point_load_reduction)),
        ("open-loop energy conservation", Box::new(c4_energy)),
        (
            "constraint preservation",
            Box::new(|| c5_constraints(&[("paper-case1", &case1), ("paper-case2", &case2)])),
        ),
        ("linearization and controllability", Box::new(c6_linearization)),
        ("Lyapunov solver residual", Box::new(c7_lyapunov)),
        ("paper-case1 convergence", Box::new(|| c8_case1(&case1))),
        ("paper-case2 convergence", Box::new(|| c9_case2(&case2))),
        ("certificate checker", Box::new(c10_certificate)),
        ("Lyapunov monotonicity", Box::new(|| c11_monotone(&case1))),
        ("disturbance rejection", Box::new(c12_disturbance)),
    ];
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {:>2} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, k + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
