//! Scenario files: a JSON description of a system plus diagnostics settings.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "name": "sliding_belt_torus",
//!   "domain": { "kind": "flat_torus", "bounds": [0, 1, 0, 1] },
//!   "parameters": { "tau": 6.283185307179586 },
//!   "curves": [ { "id": 0, "h": "sin(tau*y)", "positive_region": 1, "negative_region": 2 } ],
//!   "regions": [
//!     { "id": 1, "field": ["1", "-1"], "membership": [ { "curve": 0, "sign": "positive" } ] },
//!     { "id": 2, "field": ["1", "1"], "membership": [ { "curve": 0, "sign": "negative" } ] }
//!   ],
//!   "diagnostics": { "seed": 7 }
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::DiagnosticsConfig;
use crate::expr::{ExprError, PlanarField, ScalarField};
use crate::sigma::{find_tangency_points, SigmaError};
use crate::system::{Domain, DomainKind, FilippovSystem, ModelError, RegionSpec, Side, SwitchingCurve};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Expression { path: String, source: ExprError },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: {source}")]
    Model { path: String, source: ModelError },
    #[error("{path}: {source}")]
    Tangency { path: String, source: SigmaError },
}

impl ScenarioError {
    /// JSON path of the offending field (`$` for the whole document).
    pub fn path(&self) -> &str {
        match self {
            ScenarioError::Io { path, .. }
            | ScenarioError::Parse { path, .. }
            | ScenarioError::Expression { path, .. }
            | ScenarioError::Invalid { path, .. }
            | ScenarioError::Model { path, .. }
            | ScenarioError::Tangency { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub bounds: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub id: usize,
    pub h: String,
    pub positive_region: i64,
    pub negative_region: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipSpec {
    pub curve: usize,
    pub sign: Side,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionFileSpec {
    pub id: i64,
    pub field: [String; 2],
    #[serde(default)]
    pub membership: Vec<MembershipSpec>,
}

/// The file as written, before any expression is parsed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    pub domain: DomainSpec,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub curves: Vec<CurveSpec>,
    pub regions: Vec<RegionFileSpec>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub system: FilippovSystem,
    pub diagnostics: DiagnosticsConfig,
    pub source: ScenarioFile,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ScenarioError::Parse {
            path: if path.is_empty() || path == "." { "$".into() } else { path },
            message: format!("{inner}"),
        }
    })?;
    build_scenario(file)
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { path: path.into(), message: message.into() }
}

/// Map a model error back to the fields it concerns.
fn model_path(file: &ScenarioFile, e: &ModelError) -> String {
    let curve = |id: usize| file.curves.iter().position(|c| c.id == id).map(|i| format!("curves[{i}]"));
    let region = |id: i64| file.regions.iter().position(|r| r.id == id).map(|i| format!("regions[{i}]"));
    let p = match e {
        ModelError::InvalidDomain(_) => Some("domain.bounds".to_string()),
        ModelError::UnknownRegion { curve: c, .. } | ModelError::SameSideRegions(c) => curve(*c),
        ModelError::UnknownCurve { region: r, .. } | ModelError::EmptyRegion(r) => region(*r),
        ModelError::CurvesIntersect { a, b, .. } => match (curve(*a), curve(*b)) {
            (Some(x), Some(y)) => Some(format!("{x},{y}")),
            _ => None,
        },
        ModelError::IrregularCurve { curve: c, .. } => curve(*c).map(|s| s + ".h"),
        ModelError::AmbiguousMembership { .. } => Some("regions".to_string()),
        _ => None,
    };
    p.unwrap_or_else(|| "$".to_string())
}

pub fn build_scenario(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
    if file.schema_version != SCENARIO_SCHEMA_VERSION {
        return Err(invalid(
            "schema_version",
            format!("unsupported schema version {} (expected {SCENARIO_SCHEMA_VERSION})", file.schema_version),
        ));
    }
    let domain = Domain::new(file.domain.kind, file.domain.bounds)
        .map_err(|source| ScenarioError::Model { path: "domain.bounds".into(), source })?;
    for (k, v) in &file.parameters {
        if !v.is_finite() {
            return Err(invalid(format!("parameters.{k}"), "parameter must be finite"));
        }
        if matches!(k.as_str(), "x" | "y") {
            return Err(invalid(format!("parameters.{k}"), "`x` and `y` are reserved"));
        }
    }
    let params = Arc::new(file.parameters.clone());
    let mut curves = Vec::with_capacity(file.curves.len());
    for (i, c) in file.curves.iter().enumerate() {
        let h = ScalarField::parse(&c.h, params.clone())
            .map_err(|source| ScenarioError::Expression { path: format!("curves[{i}].h"), source })?;
        curves.push(SwitchingCurve::new(c.id, h, c.positive_region, c.negative_region));
    }
    let mut regions = Vec::with_capacity(file.regions.len());
    for (i, r) in file.regions.iter().enumerate() {
        let field = PlanarField::parse(&r.field[0], &r.field[1], params.clone()).map_err(|source| {
            // locate the component by re-parsing the first one alone
            let which = if ScalarField::parse(&r.field[0], params.clone()).is_err() { 0 } else { 1 };
            ScenarioError::Expression { path: format!("regions[{i}].field[{which}]"), source }
        })?;
        let membership = r.membership.iter().map(|m| (m.curve, m.sign)).collect();
        regions.push(RegionSpec { id: r.id, field, membership });
    }
    let system = FilippovSystem::new(domain, curves, regions, params)
        .map_err(|e| ScenarioError::Model { path: model_path(&file, &e), source: e })?;
    let resolution = file.diagnostics.decomposition_resolution;
    for (i, c) in file.curves.iter().enumerate() {
        find_tangency_points(&system, c.id, resolution)
            .map_err(|source| ScenarioError::Tangency { path: format!("curves[{i}]"), source })?;
    }
    file.diagnostics
        .validate()
        .map_err(|e| invalid("diagnostics", e.to_string()))?;
    Ok(Scenario { name: file.name.clone(), system, diagnostics: file.diagnostics.clone(), source: file })
}
