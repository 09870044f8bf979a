//! Scenario files: TOML schema, validation and the built-in scenarios.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::gains::{CertificateConfig, GainDesign};
use crate::integrator::IntegratorConfig;
use crate::linearization::LoadShare;
use crate::manifold::{e3, Mat3, Rotation, UnitVector, Vec3};
use crate::model::{DisturbanceSpec, FullState, Link, LinkState, Payload, Quadrotor, SystemParams, STANDARD_GRAVITY};
use crate::sim::builtin::box_inertia;

/// Snapshot times of the second paper maneuver.
pub const DEFAULT_SNAPSHOT_TIMES: [f64; 9] = [0.0, 0.14, 0.30, 0.68, 1.10, 1.36, 1.98, 3.48, 10.0];

const BUILTINS: [(&str, &str); 4] = [
    ("paper-case1", include_str!("../../scenarios/paper-case1.toml")),
    ("paper-case2", include_str!("../../scenarios/paper-case2.toml")),
    ("paper-case2-heavy", include_str!("../../scenarios/paper-case2-heavy.toml")),
    ("rod-2quad", include_str!("../../scenarios/rod-2quad.toml")),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Either a diagonal or a full inertia matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InertiaSpec {
    Diagonal([f64; 3]),
    Full([[f64; 3]; 3]),
}

impl InertiaSpec {
    fn matrix(&self) -> Mat3 {
        match self {
            InertiaSpec::Diagonal(d) => Mat3::from_diagonal(&Vec3::from(*d)),
            InertiaSpec::Full(rows) => Mat3::from_fn(|r, c| rows[r][c]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttitudeSpec {
    AxisAngle { axis: [f64; 3], angle_deg: f64 },
    Matrix([[f64; 3]; 3]),
}

impl AttitudeSpec {
    fn rotation(&self, field: &str) -> Result<Rotation> {
        match self {
            AttitudeSpec::AxisAngle { axis, angle_deg } => {
                let a = Vec3::from(*axis);
                if !(a.norm() > 0.0) || !angle_deg.is_finite() {
                    return Err(Error::validation(field, "axis must be non-zero and angle finite"));
                }
                Ok(Rotation::about_axis(&a.normalize(), angle_deg.to_radians()))
            }
            AttitudeSpec::Matrix(rows) => Rotation::new(Mat3::from_fn(|r, c| rows[r][c]))
                .map_err(|e| Error::validation(field, e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadSpec {
    pub mass: f64,
    /// Solid box edge lengths along b1, b2, b3; used when `inertia` is absent.
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub box_size: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<InertiaSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrotorSpec {
    pub mass: f64,
    pub inertia: InertiaSpec,
    pub attachment: [f64; 3],
    /// Number of identical links in the cable.
    pub links: usize,
    pub link_mass: f64,
    pub link_length: f64,
}

/// Initial cable shape: explicit unit directions, or an arc bending from `e3`
/// by up to `angle_deg` toward the horizontal direction `toward` (largest at
/// the quadrotor end).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CableInit {
    pub quad: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arc: Option<ArcSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcSpec {
    pub toward: [f64; 3],
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadInit {
    pub quad: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attitude: Option<AttitudeSpec>,
    #[serde(default)]
    pub omega: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub x0: [f64; 3],
    #[serde(default)]
    pub v0: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attitude: Option<AttitudeSpec>,
    #[serde(default)]
    pub omega0: [f64; 3],
    #[serde(default)]
    pub cables: Vec<CableInit>,
    #[serde(default)]
    pub quads: Vec<QuadInit>,
}

/// Forces and moments acting on each quadrotor. A single entry applies to all.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceFile {
    pub force: Vec<[f64; 3]>,
    pub moment: Vec<[f64; 3]>,
    /// Declared bound on the force infinity norm; defaults to the actual norm.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputOptions {
    /// Keep every `decimation`-th step in the exported time series.
    pub decimation: usize,
    pub snapshot_times: Vec<f64>,
}

impl Default for OutputOptions {
    fn default() -> Self {
        OutputOptions {
            decimation: 1,
            snapshot_times: DEFAULT_SNAPSHOT_TIMES.to_vec(),
        }
    }
}

/// The on-disk form of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub duration: f64,
    pub x0d: [f64; 3],
    #[serde(default = "default_b1")]
    pub b1: [f64; 3],
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    #[serde(default)]
    pub load_share: LoadShare,
    pub payload: PayloadSpec,
    pub quadrotors: Vec<QuadrotorSpec>,
    pub initial: InitialSpec,
    #[serde(default)]
    pub gains: GainDesign,
    #[serde(default)]
    pub certificate: CertificateConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub disturbance: DisturbanceFile,
    #[serde(default)]
    pub output: OutputOptions,
}

fn default_b1() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}

/// A validated scenario, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub params: SystemParams,
    pub initial: FullState,
    pub x0d: Vec3,
    pub b1: Vec3,
    pub load_share: LoadShare,
    pub gains: GainDesign,
    pub certificate: CertificateConfig,
    pub controller: ControllerConfig,
    pub integrator: IntegratorConfig,
    pub disturbance: DisturbanceSpec,
    pub duration: f64,
    pub output: OutputOptions,
    /// The source description, echoed into summaries.
    pub file: ScenarioFile,
}

fn finite3(field: &str, v: &[f64; 3]) -> Result<Vec3> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(Vec3::from(*v))
    } else {
        Err(Error::validation(field, "must be finite"))
    }
}

fn unit(field: &str, v: &[f64; 3]) -> Result<UnitVector> {
    UnitVector::new(Vec3::from(*v)).map_err(|e| Error::validation(field, e.to_string()))
}

fn arc_directions(arc: &ArcSpec, n: usize, field: &str) -> Result<Vec<UnitVector>> {
    let mut h = Vec3::from(arc.toward);
    h -= e3() * h.dot(&e3());
    if !(h.norm() > 1e-12) || !arc.angle_deg.is_finite() {
        return Err(Error::validation(field, "arc needs a horizontal direction and finite angle"));
    }
    let h = h.normalize();
    (0..n)
        .map(|j| {
            let b = arc.angle_deg.to_radians() * (n - j) as f64 / n as f64;
            UnitVector::normalize(e3() * b.cos() + h * b.sin())
        })
        .collect()
}

impl ScenarioFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn params(&self) -> Result<SystemParams> {
        let payload_inertia = match (&self.payload.inertia, &self.payload.box_size) {
            (Some(j), _) => j.matrix(),
            (None, Some(b)) => box_inertia(self.payload.mass, b[0], b[1], b[2]),
            (None, None) => return Err(Error::validation("payload", "needs `inertia` or `box`")),
        };
        let quadrotors = self
            .quadrotors
            .iter()
            .enumerate()
            .map(|(i, q)| {
                Ok(Quadrotor {
                    mass: q.mass,
                    inertia: q.inertia.matrix(),
                    attachment: finite3(&format!("quadrotors[{i}].attachment"), &q.attachment)?,
                    links: vec![
                        Link {
                            mass: q.link_mass,
                            length: q.link_length,
                        };
                        q.links
                    ],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = SystemParams {
            payload: Payload {
                mass: self.payload.mass,
                inertia: payload_inertia,
            },
            quadrotors,
            gravity: self.gravity,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn initial_state(&self, params: &SystemParams) -> Result<FullState> {
        let init = &self.initial;
        let mut s = FullState::hanging(params, finite3("initial.x0", &init.x0)?);
        s.v0 = finite3("initial.v0", &init.v0)?;
        s.omega0 = finite3("initial.omega0", &init.omega0)?;
        if let Some(a) = &init.attitude {
            s.r0 = a.rotation("initial.attitude")?;
        }
        let n = params.n_quads();
        for (k, c) in init.cables.iter().enumerate() {
            let field = format!("initial.cables[{k}]");
            if c.quad >= n {
                return Err(Error::validation(field, format!("quad {} out of range", c.quad)));
            }
            let links = s.links[c.quad].len();
            let dirs = match (&c.directions, &c.arc) {
                (Some(_), Some(_)) => {
                    return Err(Error::validation(field, "give either `directions` or `arc`"))
                }
                (Some(d), None) => {
                    if d.len() != links {
                        return Err(Error::validation(field, format!("expected {links} directions")));
                    }
                    d.iter()
                        .enumerate()
                        .map(|(j, v)| unit(&format!("{field}.directions[{j}]"), v))
                        .collect::<Result<Vec<_>>>()?
                }
                (None, Some(arc)) => arc_directions(arc, links, &field)?,
                (None, None) => vec![UnitVector::e3(); links],
            };
            let rates = match &c.rates {
                Some(r) if r.len() != links => {
                    return Err(Error::validation(field, format!("expected {links} rates")))
                }
                Some(r) => r.iter().map(|w| Vec3::from(*w)).collect(),
                None => vec![Vec3::zeros(); links],
            };
            s.links[c.quad] = dirs
                .into_iter()
                .zip(rates)
                .map(|(q, omega)| LinkState { q, omega })
                .collect();
        }
        for (k, q) in init.quads.iter().enumerate() {
            let field = format!("initial.quads[{k}]");
            if q.quad >= n {
                return Err(Error::validation(field, format!("quad {} out of range", q.quad)));
            }
            if let Some(a) = &q.attitude {
                s.quads[q.quad].r = a.rotation(&format!("{field}.attitude"))?;
            }
            s.quads[q.quad].omega = finite3(&format!("{field}.omega"), &q.omega)?;
        }
        s.validate(params)?;
        Ok(s)
    }

    pub fn disturbance_spec(&self, n: usize) -> Result<DisturbanceSpec> {
        let expand = |v: &[[f64; 3]], what: &str| -> Result<Vec<Vec3>> {
            match v.len() {
                0 => Ok(vec![Vec3::zeros(); n]),
                1 => Ok(vec![finite3(what, &v[0])?; n]),
                m if m == n => v.iter().map(|x| finite3(what, x)).collect(),
                m => Err(Error::validation(what, format!("expected 1 or {n} entries, got {m}"))),
            }
        };
        let mut d = DisturbanceSpec {
            force: expand(&self.disturbance.force, "disturbance.force")?,
            moment: expand(&self.disturbance.moment, "disturbance.moment")?,
            bound: 0.0,
        };
        d.bound = self.disturbance.bound.unwrap_or_else(|| d.force_inf_norm());
        d.validate(n)?;
        Ok(d)
    }

    pub fn build(self) -> Result<Scenario> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::validation("duration", "must be non-negative"));
        }
        let params = self.params()?;
        let initial = self.initial_state(&params)?;
        let x0d = finite3("x0d", &self.x0d)?;
        let b1 = finite3("b1", &self.b1)?;
        if b1.norm() < 1e-9 {
            return Err(Error::validation("b1", "must be non-zero"));
        }
        self.gains.validate(&params)?;
        self.certificate.validate()?;
        self.controller.validate()?;
        self.integrator.validate()?;
        if self.output.decimation == 0 {
            return Err(Error::validation("output.decimation", "must be at least 1"));
        }
        let disturbance = self.disturbance_spec(params.n_quads())?;
        Ok(Scenario {
            name: self.name.clone(),
            params,
            initial,
            x0d,
            b1: b1.normalize(),
            load_share: self.load_share,
            gains: self.gains.clone(),
            certificate: self.certificate,
            controller: self.controller,
            integrator: self.integrator,
            disturbance,
            duration: self.duration,
            output: self.output.clone(),
            file: self,
        })
    }
}

/// A built-in name or a path to a TOML file.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario> {
    scenario_file(name_or_path)?.build()
}

pub fn scenario_file(name_or_path: &str) -> Result<ScenarioFile> {
    if let Some(src) = builtin_source(name_or_path) {
        return ScenarioFile::parse(src, Path::new(name_or_path));
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(Error::UnknownScenario(name_or_path.to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioFile::parse(&text, path)
}
