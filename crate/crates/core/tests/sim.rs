use std::process::Command;

use multilift::par::Execution;
use multilift::sim::export::{export, read_csv, snapshots, Format};
use multilift::sim::scenario::{scenario_file, ScenarioFile, DEFAULT_SNAPSHOT_TIMES};
use multilift::sim::{run, run_batch};

fn short(name: &str, duration: f64) -> ScenarioFile {
    let mut f = scenario_file(name).unwrap();
    f.duration = duration;
    f
}

#[test]
fn equilibrium_start_holds() {
    let mut f = short("paper-case1", 5.0);
    f.initial.x0 = f.x0d;
    let r = run(&f.build().unwrap()).unwrap();
    let m = &r.metrics;
    let worst = m
        .payload_error
        .iter()
        .chain(&m.psi0)
        .chain(&m.e_q)
        .chain(&m.e_w)
        .chain(&m.ex_inf)
        .chain(m.psi.iter().flatten())
        .chain(m.e_omega.iter().flatten())
        .fold(0.0f64, |a, &b| a.max(b));
    assert!(worst < 1e-8, "{worst:e}");
    assert_eq!(m.len(), 5001);
}

#[test]
fn csv_rows_round_trip_and_determinism() {
    let s = short("paper-case2", 0.05).build().unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run(&s).unwrap();
    let rb = run(&s).unwrap();
    export(&ra, &s.params, Format::Csv, 1, &DEFAULT_SNAPSHOT_TIMES, a.path()).unwrap();
    export(&rb, &s.params, Format::Csv, 1, &DEFAULT_SNAPSHOT_TIMES, b.path()).unwrap();
    let steps = ra.trajectory.inputs.len();
    assert_eq!(steps, 50);
    for name in ["payload", "quadrotors", "links", "errors", "snapshots"] {
        let file = format!("{name}.csv");
        let bytes_a = std::fs::read(a.path().join(&file)).unwrap();
        assert_eq!(bytes_a, std::fs::read(b.path().join(&file)).unwrap(), "{file}");
    }
    let (header, rows) = read_csv(&a.path().join("payload.csv")).unwrap();
    assert_eq!(header[0], "time [s]");
    assert_eq!(header[1], "x0_x [m]");
    assert_eq!(rows.len(), steps + 1);
    for (row, state) in rows.iter().zip(&ra.trajectory.states) {
        assert_eq!(row[1], state.x0.x);
        assert_eq!(row[5], state.v0.y);
    }
    let (_, links) = read_csv(&a.path().join("links.csv")).unwrap();
    assert_eq!(links.len(), steps + 1);
    assert_eq!(links[17][1], *ra.trajectory.states[17].links[0][0].q.vec().index(0));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 50);
    assert_eq!(summary["config"]["name"], "paper-case2");
    assert!(summary["wall_clock_s"].as_f64().unwrap() >= 0.0);
    assert!(summary["certificate"]["passed"].is_boolean());
}

#[test]
fn decimated_and_json_output() {
    let s = short("rod-2quad", 0.1).build().unwrap();
    let r = run(&s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = export(&r, &s.params, Format::Json, 30, &[0.0, 0.05], dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trajectory.json")).unwrap()).unwrap();
    let rows = v[0]["rows"].as_array().unwrap();
    let times: Vec<f64> = rows.iter().map(|r| r[0].as_f64().unwrap()).collect();
    assert_eq!(times.len(), 5);
    assert_eq!(times[3], r.trajectory.times[90]);
    assert_eq!(times[4], 0.1);
}

#[test]
fn case2_snapshots_at_figure_times() {
    let s = scenario_file("paper-case2").unwrap().build().unwrap();
    let r = run(&s).unwrap();
    let points = snapshots(&r.trajectory, &s.params, &s.output.snapshot_times).unwrap();
    // payload + 4 x (attachment + 5 links + quadrotor) per time
    let per_time = 1 + 4 * 7;
    assert_eq!(points.len(), DEFAULT_SNAPSHOT_TIMES.len() * per_time);
    for (k, t) in DEFAULT_SNAPSHOT_TIMES.iter().enumerate() {
        assert!((points[k * per_time].time - t).abs() < 1e-9, "{} vs {t}", points[k * per_time].time);
    }
    let last = &points[points.len() - 1];
    let quad = multilift::model::quadrotor_position(r.trajectory.states.last().unwrap(), &s.params, 3).unwrap();
    assert_eq!(last.position, <[f64; 3]>::from(quad));
}

#[test]
fn batch_matches_sequential_runs() {
    let scenarios: Vec<_> = ["paper-case1", "rod-2quad", "paper-case2"]
        .iter()
        .map(|n| short(n, 0.05).build().unwrap())
        .collect();
    let par = run_batch(&scenarios, Execution::Parallel);
    let seq = run_batch(&scenarios, Execution::Sequential);
    for (a, b) in par.into_iter().zip(seq) {
        let (a, b) = (a.unwrap(), b.unwrap());
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.metrics, b.metrics);
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_multilift")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let ok = cli(&["run", "paper-case1", "--duration", "0.02", "--out-dir", out, "--dump-matrices"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    for f in ["payload.csv", "quadrotors.csv", "links.csv", "errors.csv", "snapshots.csv", "summary.json", "gains.txt"] {
        assert!(dir.path().join("paper-case1").join(f).exists(), "{f}");
    }
    let (_, rows) = read_csv(&dir.path().join("paper-case1/errors.csv")).unwrap();
    assert_eq!(rows.len(), 21);

    assert_eq!(cli(&["run", "no-such-scenario", "--out-dir", out]).status.code(), Some(2));

    let text = multilift::sim::scenario::builtin_source("paper-case1")
        .unwrap()
        .replacen("mass = 0.755", "mass = -1.0", 1);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text).unwrap();
    let r = cli(&["certify", bad.to_str().unwrap(), "--out-dir", out]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("quadrotors[0].mass"));

    // attachments on the rod axis leave the spin about the rod unreachable
    let text = multilift::sim::scenario::builtin_source("rod-2quad")
        .unwrap()
        .replace("attachment = [-1.025, 0.0, -0.01]", "attachment = [-1.025, 0.0, 0.0]")
        .replace("attachment = [1.025, 0.0, -0.01]", "attachment = [1.025, 0.0, 0.0]");
    let axis = dir.path().join("axis.toml");
    std::fs::write(&axis, text).unwrap();
    assert_eq!(cli(&["gains", axis.to_str().unwrap(), "--out-dir", out]).status.code(), Some(3));

    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let r = cli(&["certify", "paper-case1", "--out-dir", blocker.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(4));

    let r = cli(&["linearize", "rod-2quad", "--out-dir", out, "--dump-matrices"]);
    assert_eq!(r.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v["controllability_rank"], 20);
    assert!(dir.path().join("rod-2quad/linear_model.txt").exists());
}
