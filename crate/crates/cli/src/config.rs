//! Flat `section.key = value` run configuration with `CE_` environment overrides.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use contact_core::adaptive::{AdaptiveConfig, StoppingMode};
use contact_core::fem::ElasticityCoefficients;
use contact_core::mesh::{Point, Rect};
use contact_core::problem::{BenchmarkSpec, ProblemData};
use contact_core::verification::{Enrichment, ReferenceConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `section.key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("missing required keys: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("key `{key}`: cannot parse `{value}`")]
    Parse { key: String, value: String },
    #[error("key `{key}`: {reason}")]
    Range { key: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Float,
    Int,
    Bool,
    Text,
}

struct KeySpec {
    key: &'static str,
    kind: Kind,
    default: Option<&'static str>,
}

const fn req(key: &'static str, kind: Kind) -> KeySpec {
    KeySpec { key, kind, default: None }
}

const fn opt(key: &'static str, kind: Kind, default: &'static str) -> KeySpec {
    KeySpec { key, kind, default: Some(default) }
}

const KEYS: &[KeySpec] = &[
    opt("geometry.x0", Kind::Float, "-1"),
    opt("geometry.x1", Kind::Float, "1"),
    opt("geometry.y0", Kind::Float, "0"),
    opt("geometry.y1", Kind::Float, "1"),
    opt("geometry.nx", Kind::Int, "4"),
    opt("geometry.ny", Kind::Int, "2"),
    opt("geometry.split_x", Kind::Float, "0"),
    req("material.young", Kind::Float),
    req("material.poisson", Kind::Float),
    opt("load.body_force_x", Kind::Float, "0"),
    opt("load.body_force_y", Kind::Float, "0"),
    opt("load.traction_right_x", Kind::Float, "0"),
    opt("load.traction_right_y", Kind::Float, "0"),
    opt("load.traction_top_x", Kind::Float, "0"),
    opt("load.traction_top_y", Kind::Float, "0"),
    opt("load.traction_left_x", Kind::Float, "0"),
    opt("load.traction_left_y", Kind::Float, "0"),
    req("nitsche.gamma0", Kind::Float),
    req("nitsche.delta_init", Kind::Float),
    req("adaptive.gamma_reg", Kind::Float),
    req("adaptive.gamma_lin", Kind::Float),
    req("adaptive.fraction", Kind::Float),
    opt("adaptive.delta_shrink", Kind::Float, "0.5"),
    opt("adaptive.max_steps", Kind::Int, "11"),
    opt("adaptive.uniform_steps", Kind::Int, "3"),
    opt("adaptive.max_newton", Kind::Int, "50"),
    opt("adaptive.max_rounds", Kind::Int, "40"),
    opt("adaptive.degree", Kind::Int, "1"),
    opt("adaptive.stopping", Kind::Text, "global"),
    opt("adaptive.evenness_ratio", Kind::Float, "0"),
    opt("output.directory", Kind::Text, "out"),
    opt("output.vtk", Kind::Bool, "true"),
    opt("output.mesh", Kind::Bool, "true"),
    opt("output.estimators", Kind::Bool, "true"),
    opt("verify.reference_h", Kind::Float, "0.02"),
    opt("verify.lifting", Kind::Text, "uniform-refinement"),
    opt("verify.errors", Kind::Bool, "false"),
];

/// Environment variable that overrides `key`: `material.young` → `CE_MATERIAL_YOUNG`.
pub fn env_name(key: &str) -> String {
    format!("CE_{}", key.to_uppercase().replace('.', "_"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub vtk: bool,
    pub mesh: bool,
    pub estimators: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig {
    pub reference: ReferenceConfig,
    pub lifting: Enrichment,
    /// Compute errors against a reference in the adaptive and uniform modes too.
    pub errors: bool,
}

/// Tractions on the three free edges of the rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeTractions {
    pub right: Point,
    pub top: Point,
    pub left: Point,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub benchmark: BenchmarkSpec,
    pub tractions: EdgeTractions,
    pub adaptive: AdaptiveConfig,
    pub uniform_steps: usize,
    pub output: OutputConfig,
    pub verify: VerifyConfig,
}

struct Values(BTreeMap<&'static str, String>);

impl Values {
    fn raw(&self, key: &str) -> &str {
        &self.0[key]
    }

    fn err(&self, key: &str) -> ConfigError {
        ConfigError::Parse { key: key.to_string(), value: self.raw(key).to_string() }
    }

    fn float(&self, key: &str) -> Result<f64, ConfigError> {
        self.raw(key).parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| self.err(key))
    }

    fn int(&self, key: &str) -> Result<usize, ConfigError> {
        self.raw(key).parse().map_err(|_| self.err(key))
    }

    fn boolean(&self, key: &str) -> Result<bool, ConfigError> {
        self.raw(key).parse().map_err(|_| self.err(key))
    }

    fn pair(&self, prefix: &str) -> Result<Point, ConfigError> {
        Ok([self.float(&format!("{prefix}_x"))?, self.float(&format!("{prefix}_y"))?])
    }
}

fn range(key: &str, reason: &str) -> ConfigError {
    ConfigError::Range { key: key.to_string(), reason: reason.to_string() }
}

/// Parses `text`, then applies overrides from `env` (looked up by [`env_name`]).
pub fn parse_config(text: &str, env: impl Fn(&str) -> Option<String>) -> Result<RunConfig, ConfigError> {
    let mut given: BTreeMap<&'static str, String> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.matches('.').count() != 1 || v.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        let spec = KEYS.iter().find(|s| s.key == k).ok_or_else(|| ConfigError::UnknownKey(k.to_string()))?;
        if given.insert(spec.key, v.to_string()).is_some() {
            return Err(ConfigError::Duplicate(k.to_string()));
        }
    }
    for spec in KEYS {
        if let Some(v) = env(&env_name(spec.key)) {
            given.insert(spec.key, v.trim().to_string());
        }
    }
    let missing: Vec<String> =
        KEYS.iter().filter(|s| s.default.is_none() && !given.contains_key(s.key)).map(|s| s.key.to_string()).collect();
    if !missing.is_empty() {
        return Err(ConfigError::Missing(missing));
    }
    for spec in KEYS {
        if let Some(d) = spec.default {
            given.entry(spec.key).or_insert_with(|| d.to_string());
        }
    }
    let v = Values(given);
    for spec in KEYS {
        match spec.kind {
            Kind::Float => drop(v.float(spec.key)?),
            Kind::Int => drop(v.int(spec.key)?),
            Kind::Bool => drop(v.boolean(spec.key)?),
            Kind::Text => {}
        }
    }
    build(&v)
}

fn build(v: &Values) -> Result<RunConfig, ConfigError> {
    let rect = Rect::new(v.float("geometry.x0")?, v.float("geometry.x1")?, v.float("geometry.y0")?, v.float("geometry.y1")?);
    if !(rect.x1 > rect.x0 && rect.y1 > rect.y0) {
        return Err(range("geometry.x1", "the rectangle must have positive width and height"));
    }
    let split_x = v.float("geometry.split_x")?;
    if !(split_x > rect.x0 && split_x < rect.x1) {
        return Err(range("geometry.split_x", "must lie strictly inside the bottom edge"));
    }
    let (nx, ny) = (v.int("geometry.nx")?, v.int("geometry.ny")?);
    if nx == 0 || ny == 0 {
        return Err(range("geometry.nx", "grid counts must be positive"));
    }
    let (young, poisson) = (v.float("material.young")?, v.float("material.poisson")?);
    if !(young > 0.0) {
        return Err(range("material.young", "must be positive"));
    }
    if !(poisson > -1.0 && poisson < 0.5) {
        return Err(range("material.poisson", "must lie in (-1, 0.5); 0.5 makes the plane strain lambda infinite"));
    }
    let tractions = EdgeTractions {
        right: v.pair("load.traction_right")?,
        top: v.pair("load.traction_top")?,
        left: v.pair("load.traction_left")?,
    };
    let benchmark = BenchmarkSpec {
        rect,
        nx,
        ny,
        split_x,
        young,
        poisson,
        body_force: v.pair("load.body_force")?,
        right_traction: tractions.right,
    };

    let mode = match v.raw("adaptive.stopping") {
        "global" => StoppingMode::Global,
        "local" => StoppingMode::Local { gamma_reg: v.float("adaptive.gamma_reg")?, gamma_lin: v.float("adaptive.gamma_lin")? },
        _ => return Err(v.err("adaptive.stopping")),
    };
    let evenness = v.float("adaptive.evenness_ratio")?;
    let degree = v.int("adaptive.degree")?;
    if !(1..=2).contains(&degree) {
        return Err(range("adaptive.degree", "must be 1 or 2"));
    }
    let adaptive = AdaptiveConfig {
        gamma_reg: v.float("adaptive.gamma_reg")?,
        gamma_lin: v.float("adaptive.gamma_lin")?,
        delta_init: v.float("nitsche.delta_init")?,
        delta_shrink: v.float("adaptive.delta_shrink")?,
        marking_fraction: v.float("adaptive.fraction")?,
        max_steps: v.int("adaptive.max_steps")?,
        mode,
        evenness_ratio: (evenness > 0.0).then_some(evenness),
        gamma0: v.float("nitsche.gamma0")?,
        degree,
        max_newton: v.int("adaptive.max_newton")?,
        max_rounds: v.int("adaptive.max_rounds")?,
        ..Default::default()
    };
    adaptive.validate().map_err(|e| range("adaptive", &e.to_string()))?;

    let reference_h = v.float("verify.reference_h")?;
    if !(reference_h > 0.0) {
        return Err(range("verify.reference_h", "must be positive"));
    }
    let lifting = match v.raw("verify.lifting") {
        "higher-degree" => Enrichment::HigherDegree,
        "uniform-refinement" => Enrichment::UniformRefinement,
        _ => return Err(v.err("verify.lifting")),
    };
    let reference = ReferenceConfig {
        h: reference_h,
        gamma0: adaptive.gamma0,
        delta_init: adaptive.delta_init,
        ..Default::default()
    };
    Ok(RunConfig {
        benchmark,
        tractions,
        adaptive,
        uniform_steps: v.int("adaptive.uniform_steps")?,
        output: OutputConfig {
            directory: PathBuf::from(v.raw("output.directory")),
            vtk: v.boolean("output.vtk")?,
            mesh: v.boolean("output.mesh")?,
            estimators: v.boolean("output.estimators")?,
        },
        verify: VerifyConfig { reference, lifting, errors: v.boolean("verify.errors")? },
    })
}

impl RunConfig {
    /// Loads and boundary data; the bottom edge carries no traction.
    pub fn problem_data(&self) -> Result<ProblemData, contact_core::fem::FemError> {
        let spec = &self.benchmark;
        let coeff = ElasticityCoefficients::plane_strain(spec.young, spec.poisson)?;
        let r = spec.rect;
        let tol = 1e-10 * (r.x1 - r.x0).max(r.height());
        let t = self.tractions;
        let traction = Arc::new(move |x: Point| {
            if (x[0] - r.x1).abs() < tol {
                t.right
            } else if (x[0] - r.x0).abs() < tol {
                t.left
            } else if (x[1] - r.y1).abs() < tol {
                t.top
            } else {
                [0.0, 0.0]
            }
        });
        Ok(ProblemData::new(coeff, contact_core::problem::constant_field(spec.body_force), traction))
    }
}
