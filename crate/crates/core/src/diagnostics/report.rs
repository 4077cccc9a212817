//! Aggregated chaos report.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    assemble_closed_orbits, build_segment_graph, decompose_all, hypothesis_length, random_disk, saturate, sensitivity_probe,
    sigma_seeds, transitivity_probe, DiagnosticsConfig, DiagnosticsError, Disk, Interpretation, SegmentGraph,
    SensitivityWitness, WindowKind,
};
use crate::sigma::ArcClass;
use crate::system::{FilippovSystem, Point};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
const INCONCLUSIVE: &str = "inconclusive at budget";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Chaotic,
    NotChaotic,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisEvidence {
    pub present: bool,
    pub interpretation: Interpretation,
    pub sliding_arcs: usize,
    pub escaping_arcs: usize,
    pub crossing_arcs: usize,
    pub tangencies: usize,
    pub pseudo_equilibria: usize,
    pub length: f64,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SaturationEvidence {
    pub seeds: usize,
    pub horizon: f64,
    pub resolution: usize,
    pub hit_cells: usize,
    pub total_cells: usize,
    pub coverage: f64,
    pub threshold: f64,
    pub passed: bool,
    pub label: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairEvidence {
    pub u: Disk,
    pub v: Disk,
    pub found: bool,
    pub seed: Option<Point>,
    pub hit_time: Option<f64>,
    pub seeds_tried: usize,
    pub orbits_explored: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransitivityEvidence {
    pub budget: usize,
    pub found: usize,
    pub total: usize,
    pub passed: bool,
    pub label: Option<String>,
    pub pairs: Vec<PairEvidence>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityEvidence {
    pub disk: Disk,
    pub r: f64,
    pub budget: usize,
    pub pairs_tried: usize,
    pub passed: bool,
    pub label: Option<String>,
    pub witness: Option<SensitivityWitness>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowEvidence {
    pub node: usize,
    pub disk: Disk,
    pub found: bool,
    pub period: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodicEvidence {
    pub base: Option<usize>,
    pub nodes: usize,
    pub edges: usize,
    pub components: usize,
    pub found: usize,
    pub total: usize,
    pub passed: bool,
    pub label: Option<String>,
    pub windows: Vec<WindowEvidence>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChaosReport {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub hypothesis: HypothesisEvidence,
    pub saturation: Option<SaturationEvidence>,
    pub transitivity: TransitivityEvidence,
    pub sensitivity: SensitivityEvidence,
    pub periodic: Option<PeriodicEvidence>,
    pub verdict: Verdict,
    /// Ingredients that did not come out positive.
    pub failed: Vec<String>,
}

fn label(passed: bool) -> Option<String> {
    (!passed).then(|| INCONCLUSIVE.to_string())
}

/// Run every probe under `cfg` and aggregate the evidence. All randomness
/// comes from `cfg.seed`; the report is identical across runs.
pub fn chaos_report(sys: &FilippovSystem, name: &str, cfg: &DiagnosticsConfig) -> Result<ChaosReport, DiagnosticsError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let decomps = decompose_all(sys, cfg.decomposition_resolution)?;
    let count = |c: ArcClass| decomps.iter().map(|d| d.arcs_of(c).count()).sum::<usize>();
    let length = hypothesis_length(&decomps, cfg.interpretation);
    let present = length > 0.0;
    let hypothesis = HypothesisEvidence {
        present,
        interpretation: cfg.interpretation,
        sliding_arcs: count(ArcClass::Sliding),
        escaping_arcs: count(ArcClass::Escaping),
        crossing_arcs: count(ArcClass::Crossing),
        tangencies: decomps.iter().map(|d| d.tangencies.len()).sum(),
        pseudo_equilibria: decomps.iter().map(|d| d.pseudo_equilibria.len()).sum(),
        length,
        note: if present {
            "sliding/escaping set nonempty".into()
        } else {
            "hypothesis absent: no sliding or escaping arcs; saturation and periodic checks skipped".into()
        },
    };

    let saturation = present.then(|| {
        log::info!("saturation: {} seeds, horizon {}", cfg.saturation_seeds, cfg.saturation_horizon);
        let seeds = sigma_seeds(sys, &decomps, cfg.interpretation, cfg.saturation_seeds, &mut rng);
        let g = saturate(sys, &cfg.integrator, &seeds, cfg.saturation_horizon, &cfg.saturation_policies, cfg.grid_resolution);
        let passed = g.coverage() >= cfg.density_threshold;
        SaturationEvidence {
            seeds: seeds.len(),
            horizon: cfg.saturation_horizon,
            resolution: cfg.grid_resolution,
            hit_cells: g.hit_cells(),
            total_cells: g.total_cells(),
            coverage: g.coverage(),
            threshold: cfg.density_threshold,
            passed,
            label: label(passed),
        }
    });

    log::info!("transitivity: {} pairs", cfg.transitivity_pairs);
    let disks: Vec<(Disk, Disk)> = (0..cfg.transitivity_pairs)
        .map(|_| (random_disk(&sys.domain, cfg.disk_radius, &mut rng), random_disk(&sys.domain, cfg.disk_radius, &mut rng)))
        .collect();
    let pairs: Vec<PairEvidence> = disks
        .iter()
        .map(|(u, v)| {
            let r = transitivity_probe(sys, u, v, cfg.transitivity_budget, cfg);
            PairEvidence {
                u: *u,
                v: *v,
                found: r.found.is_some(),
                seed: r.found.as_ref().map(|h| h.seed),
                hit_time: r.found.as_ref().map(|h| h.hit_time),
                seeds_tried: r.seeds_tried,
                orbits_explored: r.orbits_explored,
            }
        })
        .collect();
    let found = pairs.iter().filter(|p| p.found).count();
    let passed = found == pairs.len();
    let transitivity = TransitivityEvidence {
        budget: cfg.transitivity_budget,
        found,
        total: pairs.len(),
        passed,
        label: label(passed),
        pairs,
    };

    log::info!("sensitivity");
    let disk = random_disk(&sys.domain, cfg.sensitivity_radius, &mut rng);
    let r = cfg.sensitivity_r_fraction * sys.domain.diameter();
    let s = sensitivity_probe(sys, &disk, r, cfg.sensitivity_budget, cfg);
    let passed = s.witness.as_ref().is_some_and(|w| w.revalidated);
    let sensitivity = SensitivityEvidence {
        disk,
        r,
        budget: cfg.sensitivity_budget,
        pairs_tried: s.pairs_tried,
        passed,
        label: label(passed),
        witness: s.witness,
    };

    let periodic = if present {
        log::info!("periodic: {} windows", cfg.windows);
        let windows: Vec<(WindowKind, Disk)> =
            (0..cfg.windows).map(|_| (WindowKind::Random, random_disk(&sys.domain, cfg.window_radius, &mut rng))).collect();
        let graph = build_segment_graph(sys, &decomps, &windows, cfg)?;
        Some(periodic_evidence(sys, &graph, &windows, cfg))
    } else {
        None
    };

    let mut failed = Vec::new();
    if !present {
        failed.push("hypothesis".to_string());
    }
    if saturation.as_ref().is_some_and(|s| !s.passed) {
        failed.push("saturation".to_string());
    }
    if !transitivity.passed {
        failed.push("transitivity".to_string());
    }
    if !sensitivity.passed {
        failed.push("sensitivity".to_string());
    }
    if periodic.as_ref().is_some_and(|p| !p.passed) {
        failed.push("periodic".to_string());
    }
    let verdict = if failed.is_empty() { Verdict::Chaotic } else { Verdict::NotChaotic };
    Ok(ChaosReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: name.to_string(),
        seed: cfg.seed,
        hypothesis,
        saturation,
        transitivity,
        sensitivity,
        periodic,
        verdict,
        failed,
    })
}

fn periodic_evidence(
    sys: &FilippovSystem,
    graph: &SegmentGraph,
    windows: &[(WindowKind, Disk)],
    cfg: &DiagnosticsConfig,
) -> PeriodicEvidence {
    let window_ids: Vec<usize> = graph.nodes.iter().filter(|n| !n.is_point()).map(|n| n.id).collect();
    let records = match graph.base {
        Some(b) if !window_ids.is_empty() => assemble_closed_orbits(sys, graph, b, &window_ids, cfg),
        _ => Vec::new(),
    };
    let evidence: Vec<WindowEvidence> = window_ids
        .iter()
        .zip(windows)
        .map(|(id, (_, disk))| {
            let rec = records.iter().find(|r| r.window == Some(*id));
            WindowEvidence {
                node: *id,
                disk: *disk,
                found: rec.is_some(),
                period: rec.map(|r| r.period),
                gap: rec.map(|r| r.gap),
            }
        })
        .collect();
    let found = evidence.iter().filter(|w| w.found).count();
    let passed = graph.base.is_some() && found == evidence.len();
    PeriodicEvidence {
        base: graph.base,
        nodes: graph.nodes.len(),
        edges: graph.edges.len(),
        components: graph.strongly_connected_components().len(),
        found,
        total: evidence.len(),
        passed,
        label: label(passed),
        windows: evidence,
    }
}
