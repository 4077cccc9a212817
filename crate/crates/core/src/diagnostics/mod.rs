//! Finite-budget probes of chaotic behaviour.
//!
//! Every negative result here is a statement about the configured budget
//! only: a probe that finds nothing is reported as inconclusive.

mod graph;
mod probes;
mod rescale;
mod report;

pub use graph::{
    assemble_closed_orbits, build_segment_graph, probe_windows, ClosedOrbitRecord, GraphEdge, GraphNode, NodeRole,
    SegmentGraph, WindowKind,
};
pub use probes::{saturate, sensitivity_probe, transitivity_probe, GridCoverage, SensitivityWitness, TransitivityResult};
pub use rescale::rescale_tangency_freeze;
pub use report::{chaos_report, ChaosReport, Verdict, REPORT_SCHEMA_VERSION};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{BranchPolicy, IntegrationError, IntegratorConfig, Orbit};
use crate::sigma::{sigma_decomposition, ArcClass, SigmaDecomposition, SigmaError};
use crate::system::{Domain, FilippovSystem, ModelError, Point, Side};

/// Radius of the vicinity of a point node in a segment graph.
pub const NODE_RADIUS: f64 = 1e-3;
/// Time step on which two orbits are compared.
pub const COMPARE_STEP: f64 = 0.01;
/// Endpoint gap allowed when re-validating closed orbits and witnesses.
pub const REVALIDATE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sigma(#[from] SigmaError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error("invalid diagnostics config: {0}")]
    Config(String),
}

/// Open disk in the domain (minimum-image distance on the torus).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Point,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: Point, radius: f64) -> Self {
        Disk { center, radius }
    }

    pub fn contains(&self, domain: &Domain, p: Point) -> bool {
        domain.distance(self.center, p) < self.radius
    }

    /// Smallest parameter `s` in `[0, 1]` at which the chord `a -> b` is
    /// inside the disk.
    pub fn chord_entry(&self, domain: &Domain, a: Point, b: Point) -> Option<f64> {
        let d = domain.delta(a, b);
        let w = domain.delta(a, self.center);
        let dd = d[0] * d[0] + d[1] * d[1];
        let ww = w[0] * w[0] + w[1] * w[1];
        let r2 = self.radius * self.radius;
        if ww < r2 {
            return Some(0.0);
        }
        if dd == 0.0 {
            return None;
        }
        // |w - s d|^2 = r^2
        let wd = w[0] * d[0] + w[1] * d[1];
        let disc = wd * wd - dd * (ww - r2);
        if disc <= 0.0 {
            return None;
        }
        let s = (wd - disc.sqrt()) / dd;
        (0.0..=1.0).contains(&s).then_some(s)
    }

    /// First time at which the orbit's sampled trace enters the disk.
    pub fn first_entry(&self, domain: &Domain, orbit: &Orbit) -> Option<f64> {
        let mut prev: Option<(f64, Point)> = None;
        for (t, p, _) in orbit.samples() {
            let hit = match prev {
                None => self.contains(domain, p).then_some(t),
                Some((t0, p0)) => self.chord_entry(domain, p0, p).map(|s| t0 + s * (t - t0)),
            };
            if hit.is_some() {
                return hit;
            }
            prev = Some((t, p));
        }
        None
    }
}

/// Which parts of the switching manifold seed saturation and anchor the
/// segment graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpretation {
    SlidingAndEscaping,
    SlidingOnly,
}

impl Interpretation {
    pub fn includes(self, class: ArcClass) -> bool {
        match self {
            Interpretation::SlidingAndEscaping => matches!(class, ArcClass::Sliding | ArcClass::Escaping),
            Interpretation::SlidingOnly => class == ArcClass::Sliding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub seed: u64,
    pub decomposition_resolution: usize,
    pub interpretation: Interpretation,
    pub grid_resolution: usize,
    pub saturation_horizon: f64,
    pub saturation_seeds: usize,
    pub saturation_policies: Vec<BranchPolicy>,
    pub density_threshold: f64,
    pub transitivity_pairs: usize,
    pub disk_radius: f64,
    pub transitivity_budget: usize,
    /// Seed grid per side inside `U`.
    pub transitivity_seeds: usize,
    pub transitivity_horizon: f64,
    /// Radius of the sensitivity disk.
    pub sensitivity_radius: f64,
    /// Separation threshold as a fraction of the domain diameter.
    pub sensitivity_r_fraction: f64,
    pub sensitivity_budget: usize,
    pub sensitivity_horizon: f64,
    pub windows: usize,
    pub window_radius: f64,
    pub graph_horizon: f64,
    pub graph_budget: usize,
    pub dwell_grid: Vec<f64>,
    pub integrator: IntegratorConfig,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            seed: 7,
            decomposition_resolution: 2000,
            interpretation: Interpretation::SlidingAndEscaping,
            grid_resolution: 32,
            saturation_horizon: 200.0,
            saturation_seeds: 32,
            saturation_policies: default_saturation_policies(),
            density_threshold: 0.99,
            transitivity_pairs: 20,
            disk_radius: 0.05,
            transitivity_budget: 1000,
            transitivity_seeds: 5,
            transitivity_horizon: 10.0,
            sensitivity_radius: 0.01,
            sensitivity_r_fraction: 0.25,
            sensitivity_budget: 200,
            sensitivity_horizon: 10.0,
            windows: 10,
            window_radius: 0.05,
            graph_horizon: 4.0,
            graph_budget: 1000,
            dwell_grid: (0..10).map(|i| 0.05 * i as f64).collect(),
            integrator: IntegratorConfig::default(),
        }
    }
}

pub fn default_saturation_policies() -> Vec<BranchPolicy> {
    vec![
        BranchPolicy::ExitImmediatelyUp,
        BranchPolicy::ExitImmediatelyDown,
        BranchPolicy::Random { seed: 1, max_dwell: 0.5 },
    ]
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<(), DiagnosticsError> {
        let bad = |m: &str| Err(DiagnosticsError::Config(m.to_string()));
        if self.grid_resolution == 0 {
            return bad("grid_resolution must be positive");
        }
        if self.decomposition_resolution < 16 {
            return bad("decomposition_resolution must be at least 16");
        }
        for (name, v) in [
            ("saturation_horizon", self.saturation_horizon),
            ("transitivity_horizon", self.transitivity_horizon),
            ("sensitivity_horizon", self.sensitivity_horizon),
            ("graph_horizon", self.graph_horizon),
            ("disk_radius", self.disk_radius),
            ("window_radius", self.window_radius),
            ("sensitivity_radius", self.sensitivity_radius),
            ("sensitivity_r_fraction", self.sensitivity_r_fraction),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.density_threshold) {
            return bad("density_threshold must lie in [0, 1]");
        }
        if self.dwell_grid.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return bad("dwell_grid entries must be finite and non-negative");
        }
        if self.saturation_policies.is_empty() {
            return bad("saturation_policies must not be empty");
        }
        Ok(())
    }
}

/// Decompositions of every switching curve, in curve order.
pub fn decompose_all(sys: &FilippovSystem, resolution: usize) -> Result<Vec<SigmaDecomposition>, DiagnosticsError> {
    sys.curves
        .iter()
        .map(|c| sigma_decomposition(sys, c.id, resolution).map_err(Into::into))
        .collect()
}

/// Total length of the arcs selected by `interpretation`.
pub fn hypothesis_length(decomps: &[SigmaDecomposition], interpretation: Interpretation) -> f64 {
    decomps.iter().flat_map(|d| &d.arcs).filter(|a| interpretation.includes(a.class)).map(|a| a.length).sum()
}

/// Point at arclength fraction `f` of a polyline (minimum-image segments).
pub fn polyline_point(domain: &Domain, points: &[Point], f: f64) -> Point {
    if points.len() < 2 {
        return points[0];
    }
    let lens: Vec<f64> = points.windows(2).map(|w| domain.distance(w[0], w[1])).collect();
    let total: f64 = lens.iter().sum();
    let mut target = f.clamp(0.0, 1.0) * total;
    for (i, l) in lens.iter().enumerate() {
        if target <= *l || i == lens.len() - 1 {
            let s = if *l > 0.0 { (target / l).min(1.0) } else { 0.0 };
            let d = domain.delta(points[i], points[i + 1]);
            return domain.canonical([points[i][0] + s * d[0], points[i][1] + s * d[1]]);
        }
        target -= l;
    }
    points[points.len() - 1]
}

/// `n` points spread over the selected arcs proportionally to length, with a
/// common random offset.
pub fn sigma_seeds<R: Rng>(
    sys: &FilippovSystem,
    decomps: &[SigmaDecomposition],
    interpretation: Interpretation,
    n: usize,
    rng: &mut R,
) -> Vec<Point> {
    let arcs: Vec<_> = decomps.iter().flat_map(|d| &d.arcs).filter(|a| interpretation.includes(a.class)).collect();
    let total: f64 = arcs.iter().map(|a| a.length).sum();
    if n == 0 || total <= 0.0 {
        return Vec::new();
    }
    let offset: f64 = rng.gen();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = (i as f64 + offset) / n as f64 * total;
        for a in &arcs {
            if s <= a.length {
                out.push(polyline_point(&sys.domain, &a.points, s / a.length));
                break;
            }
            s -= a.length;
        }
    }
    out
}

/// Uniform disk center; on the plane the disk stays inside the domain.
pub fn random_disk<R: Rng>(domain: &Domain, radius: f64, rng: &mut R) -> Disk {
    let [x0, x1, y0, y1] = domain.bounds;
    let m = if domain.is_torus() { 0.0 } else { radius.min(0.5 * (x1 - x0)).min(0.5 * (y1 - y0)) };
    let x = x0 + m + rng.gen::<f64>() * (x1 - x0 - 2.0 * m);
    let y = y0 + m + rng.gen::<f64>() * (y1 - y0 - 2.0 * m);
    Disk::new([x, y], radius)
}

/// `n x n` grid of points inside the disk, center first.
pub fn disk_grid(disk: &Disk, n: usize) -> Vec<Point> {
    let mut out = vec![disk.center];
    if n < 2 {
        return out;
    }
    for i in 0..n {
        for j in 0..n {
            let u = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
            let v = -1.0 + 2.0 * (j as f64 + 0.5) / n as f64;
            if u * u + v * v < 1.0 && (u, v) != (0.0, 0.0) {
                out.push([disk.center[0] + 0.999 * disk.radius * u, disk.center[1] + 0.999 * disk.radius * v]);
            }
        }
    }
    out
}

/// Short label for a policy, used in reports.
pub fn policy_label(p: &BranchPolicy) -> String {
    match p {
        BranchPolicy::ExitImmediatelyUp => "exit_immediately_up".into(),
        BranchPolicy::ExitImmediatelyDown => "exit_immediately_down".into(),
        BranchPolicy::SlideUntilTangency => "slide_until_tangency".into(),
        BranchPolicy::DwellThenExit { dwell, side } => {
            format!("dwell_then_exit({dwell},{})", if *side == Side::Positive { "up" } else { "down" })
        }
        BranchPolicy::Random { seed, max_dwell } => format!("random({seed},{max_dwell})"),
        BranchPolicy::Scripted { choices, .. } => format!("scripted({})", choices.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chord_entry_on_torus_wraps() {
        let d = Domain::torus([0.0, 1.0, 0.0, 1.0]);
        let disk = Disk::new([0.0, 0.5], 0.05);
        let s = disk.chord_entry(&d, [0.9, 0.5], [0.1, 0.5]).unwrap();
        assert!((s - 0.25).abs() < 1e-12);
        assert!(disk.chord_entry(&d, [0.9, 0.7], [0.1, 0.7]).is_none());
    }

    #[test]
    fn polyline_fraction() {
        let d = Domain::plane([-5.0, 5.0, -5.0, 5.0]);
        let p = polyline_point(&d, &[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], 0.75);
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn disk_grid_stays_inside() {
        let disk = Disk::new([0.3, 0.3], 0.05);
        let d = Domain::plane([0.0, 1.0, 0.0, 1.0]);
        let g = disk_grid(&disk, 5);
        assert_eq!(g[0], disk.center);
        assert!(g.len() > 10 && g.iter().all(|p| disk.contains(&d, *p)));
    }

    #[test]
    fn config_roundtrips_through_json() {
        let c = DiagnosticsConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        let back: DiagnosticsConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let partial: DiagnosticsConfig = serde_json::from_str(r#"{"seed": 3}"#).unwrap();
        assert_eq!(partial.seed, 3);
        assert!(c.validate().is_ok());
    }
}
