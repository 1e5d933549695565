//! TOML experiment files.
//!
//! ```toml
//! preset = "example1"
//!
//! [mesh]
//! level = 1
//!
//! [control]
//! mode = "controlled"
//! M = 2
//! lambda = 1.0
//! ```
//!
//! Every table and key is optional. Unknown keys are errors.

use std::path::PathBuf;

use serde::Deserialize;
use thiserror::Error;

use crate::actuators::TrianglePlacement;
use crate::mesh::DomainSpec;
use crate::sim::{CustomData, Example2Forcing, FeedbackScheme, Mode, Preset, SimConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Syntax(String),
    #[error("key `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

/// Everything a config file can set.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub sim: SimConfig,
    pub out_dir: Option<PathBuf>,
    pub stride: usize,
    pub svg: bool,
    pub xi_m: Vec<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    preset: Option<String>,
    #[serde(default)]
    domain: DomainTable,
    #[serde(default)]
    mesh: MeshTable,
    #[serde(default)]
    physics: PhysicsTable,
    #[serde(default)]
    time: TimeTable,
    #[serde(default)]
    control: ControlTable,
    #[serde(default)]
    actuators: ActuatorTable,
    #[serde(default)]
    example2: Example2Table,
    custom: Option<CustomTable>,
    #[serde(default)]
    output: OutputTable,
    #[serde(default)]
    xi: XiTable,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainTable {
    kind: Option<String>,
    l1: Option<f64>,
    l2: Option<f64>,
    vertices: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshTable {
    h: Option<f64>,
    level: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhysicsTable {
    nu: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeTable {
    dt: Option<f64>,
    t_end: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlTable {
    mode: Option<String>,
    #[serde(rename = "M")]
    m: Option<usize>,
    lambda: Option<f64>,
    scheme: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Anchor {
    Named(String),
    Weights(Vec<f64>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActuatorTable {
    r: Option<f64>,
    anchor: Option<Anchor>,
    side_ratio: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Example2Table {
    forcing: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomTable {
    #[serde(default)]
    f: f64,
    #[serde(default)]
    g: f64,
    #[serde(default)]
    w0: f64,
    #[serde(default)]
    wt0: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputTable {
    dir: Option<PathBuf>,
    stride: Option<usize>,
    snapshots: Option<Vec<f64>>,
    svg: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct XiTable {
    #[serde(rename = "M")]
    m: Option<Vec<usize>>,
}

fn keyword<T: std::str::FromStr<Err = String>>(key: &str, value: Option<&str>) -> Result<Option<T>, ConfigError> {
    value.map(|v| v.parse::<T>().map_err(|msg| ConfigError::Value { key: key.into(), msg })).transpose()
}

fn vertices(v: &[Vec<f64>]) -> Result<[[f64; 2]; 3], ConfigError> {
    let err = |msg: &str| ConfigError::Value { key: "domain.vertices".into(), msg: msg.into() };
    if v.len() != 3 {
        return Err(err("expected three vertices"));
    }
    let mut out = [[0.0; 2]; 3];
    for (o, p) in out.iter_mut().zip(v) {
        *o = p.as_slice().try_into().map_err(|_| err("expected two coordinates per vertex"))?;
    }
    Ok(out)
}

fn placement(t: &ActuatorTable) -> Result<TrianglePlacement, ConfigError> {
    let mut p = TrianglePlacement::default();
    if let Some(sr) = t.side_ratio {
        p.side_ratio = sr;
    }
    match &t.anchor {
        None => {}
        Some(Anchor::Named(n)) if n == "incenter" => {}
        Some(Anchor::Weights(l)) if l.len() == 3 && l.iter().all(|x| *x > 0.0) && (l.iter().sum::<f64>() - 1.0).abs() < 1e-12 => {
            p.anchor = Some([l[0], l[1], l[2]]);
        }
        Some(_) => {
            return Err(ConfigError::Value {
                key: "actuators.anchor".into(),
                msg: "expected \"incenter\" or three positive barycentric weights summing to 1".into(),
            })
        }
    }
    Ok(p)
}

/// Parses an experiment file.
pub fn parse(text: &str) -> Result<Experiment, ConfigError> {
    let file: File = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string().trim_end().to_string()))?;

    let level = file.mesh.level.unwrap_or(1);
    if level > 6 {
        return Err(ConfigError::Value { key: "mesh.level".into(), msg: "supported range is 0..=6".into() });
    }
    let forcing = keyword::<Example2Forcing>("example2.forcing", file.example2.forcing.as_deref())?.unwrap_or(Example2Forcing::Scaled);
    let preset = match file.preset.as_deref().unwrap_or("example1") {
        "example1" => Preset::Example1,
        "example2" => Preset::Example2(forcing),
        "custom" => {
            let c = file.custom.as_ref();
            Preset::Custom(CustomData {
                f: c.map_or(0.0, |c| c.f),
                g: c.map_or(0.0, |c| c.g),
                w0: c.map_or(0.0, |c| c.w0),
                wt0: c.map_or(0.0, |c| c.wt0),
            })
        }
        other => return Err(ConfigError::Value { key: "preset".into(), msg: format!("unknown preset `{other}`") }),
    };
    if !matches!(preset, Preset::Custom(_)) && file.custom.is_some() {
        return Err(ConfigError::Invalid("a [custom] table needs preset = \"custom\"".into()));
    }

    let mut sim = SimConfig::example1(level);
    sim.preset = preset;
    let d = &file.domain;
    match d.kind.as_deref() {
        None | Some("triangle") => {
            if let Some(v) = &d.vertices {
                sim.domain = DomainSpec::Triangle { vertices: vertices(v)? };
            }
            if d.l1.is_some() || d.l2.is_some() {
                return Err(ConfigError::Invalid("domain.l1/l2 need domain.kind = \"rectangle\"".into()));
            }
        }
        Some("rectangle") => {
            sim.domain = DomainSpec::Rectangle { l1: d.l1.unwrap_or(1.0), l2: d.l2.unwrap_or(1.0) };
            if d.vertices.is_some() {
                return Err(ConfigError::Invalid("domain.vertices needs domain.kind = \"triangle\"".into()));
            }
        }
        Some(other) => return Err(ConfigError::Value { key: "domain.kind".into(), msg: format!("unknown domain `{other}`") }),
    }
    if let Some(h) = file.mesh.h {
        sim.mesh_h = h;
    }
    if let Some(nu) = file.physics.nu {
        sim.nu = nu;
    }
    if let Some(dt) = file.time.dt {
        sim.dt = dt;
    }
    if let Some(t) = file.time.t_end {
        sim.t_end = t;
    }
    let c = &file.control;
    sim.mode = keyword::<Mode>("control.mode", c.mode.as_deref())?.unwrap_or(Mode::Free);
    sim.actuators.m = c.m.unwrap_or(0);
    if let Some(l) = c.lambda {
        sim.lambda = l;
    }
    if let Some(s) = keyword::<FeedbackScheme>("control.scheme", c.scheme.as_deref())? {
        sim.scheme = s;
    }
    if let Some(r) = file.actuators.r {
        sim.actuators.r = r;
    }
    sim.actuators.placement = placement(&file.actuators)?;
    sim.snapshot_times = file.output.snapshots.unwrap_or_default();
    sim.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

    let stride = file.output.stride.unwrap_or(25);
    if stride == 0 {
        return Err(ConfigError::Value { key: "output.stride".into(), msg: "must be at least 1".into() });
    }
    Ok(Experiment {
        sim,
        out_dir: file.output.dir,
        stride,
        svg: file.output.svg.unwrap_or(false),
        xi_m: file.xi.m.unwrap_or_else(|| vec![0, 1, 2]),
    })
}
