use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::json;

use multilift::gains::lyapunov_residual;
use multilift::linalg::max_real_eigenvalue;
use multilift::linearization::{
    build_closed_loop, build_linear_model_with, controllability_rank, dump_matrices,
    finite_difference_linearize_with,
};
use multilift::model::derive_masses;
use multilift::oracle::compare_dynamics;
use multilift::par::Execution;
use multilift::sim::export::{export, Format};
use multilift::sim::run::design;
use multilift::sim::scenario::{builtin_names, scenario_file};
use multilift::sim::{run_batch, Scenario};
use multilift::{Error, Result};

#[derive(Parser)]
#[command(name = "multilift", version, about = "Multi-quadrotor rigid payload transport: simulation, linearization and control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the closed loop and write time series, snapshots and a summary
    Run(Common),
    /// Linearize about the hanging equilibrium and check against finite differences
    Linearize(Common),
    /// Synthesize gains and solve the closed-loop Lyapunov equation
    Gains(Common),
    /// Check the stability certificate inequalities
    Certify(Common),
    /// Compare the dynamics with the finite-difference Euler-Lagrange oracle
    Oracle(Common),
    /// List the built-in scenarios
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// Built-in scenario name or path to a TOML file; `run` accepts several
    #[arg(required = true)]
    scenario: Vec<String>,
    /// Integrator step in seconds
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated time in seconds
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Also write the model and gain matrices as text
    #[arg(long)]
    dump_matrices: bool,
}

impl Common {
    fn load(&self) -> Result<Vec<Scenario>> {
        self.scenario
            .iter()
            .map(|name| {
                let mut f = scenario_file(name)?;
                if let Some(dt) = self.dt {
                    f.integrator.dt = dt;
                }
                if let Some(d) = self.duration {
                    f.duration = d;
                }
                f.build()
            })
            .collect()
    }

    fn format(&self) -> Format {
        match self.format {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }

    fn dir(&self, s: &Scenario) -> Result<PathBuf> {
        let dir = self.out_dir.join(&s.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        Ok(dir)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value"));
}

fn cmd_run(c: &Common) -> Result<()> {
    let scenarios = c.load()?;
    let results = run_batch(&scenarios, Execution::default());
    for (s, r) in scenarios.iter().zip(results) {
        let out = r?;
        let dir = c.dir(s)?;
        export(&out, &s.params, c.format(), s.output.decimation, &s.output.snapshot_times, &dir)?;
        if c.dump_matrices {
            let d = design(s)?;
            let text = dump_matrices(&[("Kx", &d.gains.kx), ("Kxdot", &d.gains.kxdot), ("P", &d.gains.p)]);
            write(&dir.join("gains.txt"), &text)?;
        }
        let t = &out.summary.terminal;
        println!(
            "{}: t = {:.3} s, |x0 - x0d| = {:.3e} m, e_q = {:.3e}, e_omega = {:.3e}, certificate {}, {:.1} s wall clock -> {}",
            s.name,
            t.time,
            t.payload_error,
            t.e_q,
            t.e_w,
            if out.summary.certificate.passed { "passed" } else { "failed" },
            out.summary.wall_clock_s,
            dir.display()
        );
    }
    Ok(())
}

fn cmd_linearize(c: &Common) -> Result<()> {
    for s in c.load()? {
        let masses = derive_masses(&s.params);
        let lm = build_linear_model_with(&s.params, &masses, s.load_share);
        let fd = finite_difference_linearize_with(&s.params, &masses, 1e-5, s.load_share, Execution::default())?;
        let rank = controllability_rank(&lm)?;
        print_json(&json!({
            "scenario": s.name,
            "dimension": lm.dim(),
            "inputs": lm.inputs(),
            "controllability_rank": rank,
            "full_rank": 2 * lm.dim(),
            "relative_error": { "M": rel(&lm.m, &fd.m), "G": rel(&lm.g, &fd.g), "B": rel(&lm.b, &fd.b) },
            "load_share": lm.load_share,
        }));
        if c.dump_matrices {
            let path = c.dir(&s)?.join("linear_model.txt");
            write(&path, &dump_matrices(&[("M", &lm.m), ("G", &lm.g), ("B", &lm.b)]))?;
        }
    }
    Ok(())
}

fn cmd_gains(c: &Common) -> Result<()> {
    for s in c.load()? {
        let d = design(&s)?;
        let cl = build_closed_loop(&d.linear, &d.gains.kx, &d.gains.kxdot)?;
        print_json(&json!({
            "scenario": s.name,
            "closed_loop_max_real_eigenvalue": max_real_eigenvalue(&cl.a),
            "lyapunov_residual": lyapunov_residual(&cl.a, &d.gains.p, &d.gains.q),
            "kx_norm": d.gains.kx.norm(),
            "kxdot_norm": d.gains.kxdot.norm(),
            "k_z": d.gains.k_z,
            "k_z_links": d.gains.k_z_links,
            "sigma": d.gains.sigma,
            "attitude": d.gains.attitude,
        }));
        if c.dump_matrices {
            let path = c.dir(&s)?.join("gains.txt");
            let text = dump_matrices(&[
                ("Kx", &d.gains.kx),
                ("Kxdot", &d.gains.kxdot),
                ("A", &cl.a),
                ("P", &d.gains.p),
            ]);
            write(&path, &text)?;
        }
    }
    Ok(())
}

fn cmd_certify(c: &Common) -> Result<()> {
    for s in c.load()? {
        let d = design(&s)?;
        let text = serde_json::to_string_pretty(&d.certificate).expect("certificate serializes");
        println!("{text}");
        write(&c.dir(&s)?.join("certificate.json"), &text)?;
    }
    Ok(())
}

fn cmd_oracle(c: &Common) -> Result<()> {
    for s in c.load()? {
        let dynamics = compare_dynamics(&s.params, 50, 1, 10.0, Execution::default())?;
        print_json(&json!({
            "scenario": s.name,
            "samples": dynamics.samples,
            "max_relative_error": dynamics.max_relative_error,
            "mean_relative_error": dynamics.mean_relative_error,
        }));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Linearize(c) => cmd_linearize(c),
        Command::Gains(c) => cmd_gains(c),
        Command::Certify(c) => cmd_certify(c),
        Command::Oracle(c) => cmd_oracle(c),
        Command::List => {
            for name in builtin_names() {
                println!("{name}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

