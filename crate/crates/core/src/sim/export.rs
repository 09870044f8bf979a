//! CSV, JSON and snapshot output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::model::{link_position, quadrotor_position, SystemParams};
use crate::sim::metrics::Metrics;
use crate::sim::run::RunOutput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::validation("format", format!("expected csv or json, got `{other}`"))),
        }
    }
}

/// One group of signals sharing the time column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    /// `name [unit]`; the first column is `time [s]`.
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn col3(out: &mut Vec<String>, prefix: &str, unit: &str) {
    for c in ["x", "y", "z"] {
        out.push(format!("{prefix}_{c} [{unit}]"));
    }
}

/// Indices of the kept samples: every `decimation`-th plus the last.
pub fn kept_indices(len: usize, decimation: usize) -> Vec<usize> {
    let step = decimation.max(1);
    let mut idx: Vec<usize> = (0..len).step_by(step).collect();
    if len > 0 && idx.last() != Some(&(len - 1)) {
        idx.push(len - 1);
    }
    idx
}

/// Payload, quadrotor, link and error tables.
pub fn signal_tables(traj: &Trajectory, m: &Metrics, params: &SystemParams, decimation: usize) -> Result<Vec<Table>> {
    let keep = kept_indices(traj.states.len(), decimation);
    let time = || vec!["time [s]".to_string()];

    let mut payload = time();
    col3(&mut payload, "x0", "m");
    col3(&mut payload, "v0", "m/s");
    col3(&mut payload, "omega0", "rad/s");
    for r in 0..3 {
        for c in 0..3 {
            payload.push(format!("R0_{}{} [-]", r + 1, c + 1));
        }
    }
    payload.push("payload_error [m]".into());
    payload.push("psi0 [-]".into());

    let mut quads = time();
    for i in 0..params.n_quads() {
        col3(&mut quads, &format!("x{}", i + 1), "m");
        quads.push(format!("f{} [N]", i + 1));
        col3(&mut quads, &format!("M{}", i + 1), "N m");
        quads.push(format!("psi{} [-]", i + 1));
        quads.push(format!("e_Omega{} [rad/s]", i + 1));
        col3(&mut quads, &format!("e_I{}", i + 1), "rad s");
    }

    let mut links = time();
    for (i, q) in params.quadrotors.iter().enumerate() {
        for j in 0..q.links.len() {
            col3(&mut links, &format!("q{}{}", i + 1, j + 1), "-");
            col3(&mut links, &format!("omega{}{}", i + 1, j + 1), "rad/s");
        }
    }

    let errors: Vec<String> = [
        "time [s]",
        "e_q [-]",
        "e_omega [rad/s]",
        "V [-]",
        "V1 [-]",
        "V2 [-]",
        "e_x_inf [-]",
        "kinetic_energy [J]",
        "potential_energy [J]",
        "total_energy [J]",
        "constraint_defect [-]",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let mut tables = vec![
        Table { name: "payload".into(), columns: payload, rows: vec![] },
        Table { name: "quadrotors".into(), columns: quads, rows: vec![] },
        Table { name: "links".into(), columns: links, rows: vec![] },
        Table { name: "errors".into(), columns: errors, rows: vec![] },
    ];
    for &k in &keep {
        let s = &traj.states[k];
        let t = traj.times[k];
        let mut row = vec![t];
        row.extend(s.x0.iter().chain(s.v0.iter()).chain(s.omega0.iter()));
        let r0 = s.r0.matrix();
        for r in 0..3 {
            for c in 0..3 {
                row.push(r0[(r, c)]);
            }
        }
        row.push(m.payload_error[k]);
        row.push(m.psi0[k]);
        tables[0].rows.push(row);

        let mut row = vec![t];
        for i in 0..params.n_quads() {
            row.extend(quadrotor_position(s, params, i)?.iter());
            row.push(m.thrust[k][i]);
            row.extend(m.moment[k][i].iter());
            row.push(m.psi[k][i]);
            row.push(m.e_omega[k][i]);
            row.extend(m.e_i[k][i].iter());
        }
        tables[1].rows.push(row);

        let mut row = vec![t];
        for l in s.links.iter().flatten() {
            row.extend(l.q.vec().iter().chain(l.omega.iter()));
        }
        tables[2].rows.push(row);

        let e = &m.energy[k];
        tables[3].rows.push(vec![
            t,
            m.e_q[k],
            m.e_w[k],
            m.v[k],
            m.v1[k],
            m.v2[k],
            m.ex_inf[k],
            e.kinetic,
            e.potential,
            e.total(),
            m.constraint_defect[k],
        ]);
    }
    Ok(tables)
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn write_all(path: &Path, text: &str) -> Result<()> {
    create(path)?.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn table_csv(table: &Table) -> String {
    let mut out = String::new();
    out.push_str(&table.columns.iter().map(|c| quote(c)).collect::<Vec<_>>().join(","));
    out.push_str("\r\n");
    for row in &table.rows {
        out.push_str(&row.iter().map(|&x| format_g17(x)).collect::<Vec<_>>().join(","));
        out.push_str("\r\n");
    }
    out
}

/// Reads a numeric table written by [`table_csv`].
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| bad(1, "missing header".into()))?
        .split(',')
        .map(|s| s.trim_matches('"').to_string())
        .collect();
    let rows = lines
        .enumerate()
        .map(|(n, l)| {
            l.split(',')
                .map(|v| v.parse::<f64>().map_err(|e| bad(n + 2, e.to_string())))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Body {
    Payload,
    Attachment,
    Link,
    Quadrotor,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotPoint {
    pub time: f64,
    pub body: Body,
    pub quad: Option<usize>,
    pub link: Option<usize>,
    pub position: [f64; 3],
}

/// Positions of every body at the samples nearest to `times`.
pub fn snapshots(traj: &Trajectory, params: &SystemParams, times: &[f64]) -> Result<Vec<SnapshotPoint>> {
    let t_end = traj.times.last().copied().unwrap_or(0.0);
    let mut out = Vec::new();
    for &t in times.iter().filter(|&&t| t <= t_end + 1e-9) {
        let k = traj.times.partition_point(|&s| s < t - 1e-9).min(traj.times.len() - 1);
        let k = if k > 0 && (traj.times[k - 1] - t).abs() < (traj.times[k] - t).abs() { k - 1 } else { k };
        let s = &traj.states[k];
        let time = traj.times[k];
        let point = |body, quad, link, p: nalgebra::Vector3<f64>| SnapshotPoint {
            time,
            body,
            quad,
            link,
            position: p.into(),
        };
        out.push(point(Body::Payload, None, None, s.x0));
        for (i, q) in params.quadrotors.iter().enumerate() {
            out.push(point(Body::Attachment, Some(i), None, s.x0 + s.r0.matrix() * q.attachment));
            for j in 0..q.links.len() {
                out.push(point(Body::Link, Some(i), Some(j), link_position(s, params, i, j)?));
            }
            out.push(point(Body::Quadrotor, Some(i), None, quadrotor_position(s, params, i)?));
        }
    }
    Ok(out)
}

pub fn snapshots_csv(points: &[SnapshotPoint]) -> String {
    let mut out = String::from("time [s],body,quad,link,x [m],y [m],z [m]\r\n");
    let idx = |v: Option<usize>| v.map(|k| k.to_string()).unwrap_or_default();
    for p in points {
        let body = serde_json::to_value(p.body).expect("enum serializes");
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\r\n",
            format_g17(p.time),
            body.as_str().expect("string"),
            idx(p.quad),
            idx(p.link),
            format_g17(p.position[0]),
            format_g17(p.position[1]),
            format_g17(p.position[2]),
        ));
    }
    out
}

/// Writes the signal tables, `summary.json` and the snapshot file into `dir`.
pub fn export(
    run: &RunOutput,
    params: &SystemParams,
    format: Format,
    decimation: usize,
    snapshot_times: &[f64],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tables = signal_tables(&run.trajectory, &run.metrics, params, decimation)?;
    let mut written = Vec::new();
    match format {
        Format::Csv => {
            for t in &tables {
                let path = dir.join(format!("{}.csv", t.name));
                write_all(&path, &table_csv(t))?;
                written.push(path);
            }
        }
        Format::Json => {
            let path = dir.join("trajectory.json");
            let text = serde_json::to_string(&tables).expect("tables serialize");
            write_all(&path, &text)?;
            written.push(path);
        }
    }
    let points = snapshots(&run.trajectory, params, snapshot_times)?;
    let path = dir.join(match format {
        Format::Csv => "snapshots.csv",
        Format::Json => "snapshots.json",
    });
    match format {
        Format::Csv => write_all(&path, &snapshots_csv(&points))?,
        Format::Json => write_all(&path, &serde_json::to_string_pretty(&points).expect("points serialize"))?,
    }
    written.push(path);
    let path = dir.join("summary.json");
    write_all(&path, &summary_json(run))?;
    written.push(path);
    Ok(written)
}

pub fn summary_json(run: &RunOutput) -> String {
    serde_json::to_string_pretty(&run.summary).expect("summary serializes")
}

/// C `printf("%.17g")` formatting; round-trips every finite `f64`.
pub fn format_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..17).contains(&exp) {
        let decimals = (16 - exp) as usize;
        trim_zeros(&format!("{:.*}", decimals, x))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa), sign, exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}
