//! Segment graphs between switching-curve anchors and closed-orbit assembly.
//!
//! Point nodes are sliding anchors and tangency points; window nodes are
//! small disks. An edge is an orbit piece from a node to the first point node
//! it reaches afterwards, cut at the closest approach. Windows are never
//! edge targets; instead every edge lists the windows its orbit crosses.
//! Edges restart at their target node, so chaining them is legitimate only
//! where the forward orbit is unique or a fresh branch choice is allowed:
//! sliding anchors and tangency points.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use petgraph::algo::{astar, tarjan_scc};
use petgraph::graph::{DiGraph, NodeIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{polyline_point, DiagnosticsConfig, DiagnosticsError, Disk, NODE_RADIUS, REVALIDATE_TOL};
use crate::integrator::{
    enumerate_branches_with, integrate_filippov_with, BranchChoice, BranchPolicy, ChoiceKind, Direction,
    EscapeDecision, Orbit, OrbitSegment, SegmentKind,
};
use crate::sigma::{sliding_vector_field, ArcClass, SigmaDecomposition};
use crate::system::{FilippovSystem, Point};

/// Arc-length fractions of the anchors placed on each sliding arc.
const ANCHOR_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 0.99];
/// Candidate edges tried per window during assembly.
const CANDIDATES_PER_WINDOW: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    SlidingAnchor,
    Tangency,
    /// Tangency at the upstream tip of an escaping arc.
    EscapeEntry,
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Short forward orbit from the center lands on a sliding arc.
    IntoSliding,
    /// Short backward orbit from the center lands on an escaping arc.
    IntoEscaping,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphNode {
    pub id: usize,
    pub role: NodeRole,
    pub position: Point,
    /// Vicinity radius: [`NODE_RADIUS`] for point nodes, the disk radius for
    /// windows.
    pub radius: f64,
    pub curve: Option<usize>,
    pub window: Option<WindowKind>,
}

impl GraphNode {
    pub fn is_point(&self) -> bool {
        self.role != NodeRole::Window
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphEdge {
    pub source: usize,
    pub target: usize,
    pub flight_time: f64,
    /// Distance from the cut point to the target node.
    pub gap: f64,
    /// Escape decisions taken along the edge.
    pub script: Vec<EscapeDecision>,
    /// Window nodes whose disks the edge orbit enters.
    pub windows: Vec<usize>,
    pub orbit: Orbit,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentGraph {
    /// Set when there is no sliding or escaping arc to anchor the graph.
    pub hypothesis_absent: bool,
    pub base: Option<usize>,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl SegmentGraph {
    fn petgraph(&self) -> DiGraph<usize, usize> {
        let mut g = DiGraph::new();
        let idx: Vec<NodeIndex> = self.nodes.iter().map(|n| g.add_node(n.id)).collect();
        for (k, e) in self.edges.iter().enumerate() {
            g.add_edge(idx[e.source], idx[e.target], k);
        }
        g
    }

    /// Strongly connected components as sorted node-id lists, sorted.
    pub fn strongly_connected_components(&self) -> Vec<Vec<usize>> {
        let g = self.petgraph();
        let mut out: Vec<Vec<usize>> = tarjan_scc(&g)
            .into_iter()
            .map(|c| {
                let mut ids: Vec<usize> = c.into_iter().map(|i| g[i]).collect();
                ids.sort_unstable();
                ids
            })
            .collect();
        out.sort();
        out
    }

    pub fn same_component(&self, a: usize, b: usize) -> bool {
        self.strongly_connected_components().iter().any(|c| c.contains(&a) && c.contains(&b))
    }

    /// Edge indices of the quickest path `from -> to` (empty when equal).
    pub fn shortest_path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        if from == to {
            return Some(Vec::new());
        }
        let g = self.petgraph();
        let (_, path) = astar(
            &g,
            NodeIndex::new(from),
            |n| n.index() == to,
            |e| self.edges[*e.weight()].flight_time,
            |_| 0.0,
        )?;
        Some(path.windows(2).map(|w| self.quickest_edge(w[0].index(), w[1].index()).expect("edge on path")).collect())
    }

    fn quickest_edge(&self, u: usize, v: usize) -> Option<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.source == u && e.target == v)
            .min_by(|a, b| a.1.flight_time.total_cmp(&b.1.flight_time))
            .map(|(k, _)| k)
    }

    /// Source and target vicinity conditions of edge `k`.
    pub fn edge_is_valid(&self, sys: &FilippovSystem, k: usize) -> bool {
        let e = &self.edges[k];
        let (s, t) = (&self.nodes[e.source], &self.nodes[e.target]);
        let start_ok = sys.domain.distance(e.orbit.initial, s.position) <= s.radius.min(NODE_RADIUS);
        let end_ok = sys.domain.distance(e.orbit.end_point(), t.position) <= t.radius;
        start_ok && end_ok && t.is_point()
    }

    /// Graphviz rendering. Window nodes are boxes; an edge's label is its
    /// flight time.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph segment_graph {\n");
        for n in &self.nodes {
            let shape = match n.role {
                NodeRole::SlidingAnchor => "circle",
                NodeRole::Tangency => "diamond",
                NodeRole::EscapeEntry => "doublecircle",
                NodeRole::Window => "box",
            };
            let _ = writeln!(
                out,
                "  n{} [shape={shape}, label=\"{} {:?}\\n({:.4}, {:.4})\"];",
                n.id, n.id, n.role, n.position[0], n.position[1]
            );
        }
        for e in &self.edges {
            let _ = writeln!(out, "  n{} -> n{} [label=\"{:.4}\"];", e.source, e.target, e.flight_time);
            for w in &e.windows {
                let _ = writeln!(out, "  n{} -> n{w} [style=dotted, arrowhead=none];", e.source);
            }
        }
        out.push_str("}\n");
        out
    }
}

fn push_point_node(nodes: &mut Vec<GraphNode>, role: NodeRole, position: Point, curve: usize, sys: &FilippovSystem) {
    if nodes.iter().any(|n| sys.domain.distance(n.position, position) < 2.0 * NODE_RADIUS) {
        return;
    }
    let id = nodes.len();
    nodes.push(GraphNode { id, role, position, radius: NODE_RADIUS, curve: Some(curve), window: None });
}

/// Whether the tangency `t` is the tip of an escaping arc whose sliding
/// field points away from it.
fn is_escape_entry(sys: &FilippovSystem, d: &SigmaDecomposition, t: Point) -> bool {
    d.arcs_of(ArcClass::Escaping).any(|a| {
        let (tip, f) = if sys.domain.distance(a.start, t) < 1e-6 {
            (a.start, 0.01)
        } else if sys.domain.distance(a.end, t) < 1e-6 {
            (a.end, 0.99)
        } else {
            return false;
        };
        let q = polyline_point(&sys.domain, &a.points, f);
        match sliding_vector_field(sys, d.curve, q) {
            Ok(z) => {
                let away = sys.domain.delta(tip, q);
                z[0] * away[0] + z[1] * away[1] > 0.0
            }
            Err(_) => false,
        }
    })
}

/// Trim `orbit` at elapsed time `t`.
fn truncate(sys: &FilippovSystem, orbit: &Orbit, t: f64) -> Orbit {
    let mut segments: Vec<OrbitSegment> = Vec::new();
    for s in &orbit.segments {
        if s.t_start > t {
            break;
        }
        if s.t_end <= t {
            segments.push(s.clone());
            continue;
        }
        let mut samples: Vec<(f64, Point)> = s.samples.iter().take_while(|(ts, _)| *ts < t).cloned().collect();
        let end = orbit.position_at(sys, t).unwrap_or(s.end);
        samples.push((t, end));
        segments.push(OrbitSegment { kind: s.kind.clone(), t_start: s.t_start, t_end: t, start: s.start, end, samples });
        break;
    }
    let branches: Vec<BranchChoice> = orbit.branches.iter().filter(|b| b.time < t).cloned().collect();
    let decisions = branches.iter().filter(|b| matches!(b.kind, ChoiceKind::EscapeExit { .. } | ChoiceKind::EscapeSlide)).count();
    Orbit {
        initial: orbit.initial,
        direction: orbit.direction,
        horizon: t,
        segments,
        branches,
        script: orbit.script[..decisions].to_vec(),
        terminal: None,
        pending: None,
    }
}

/// Whether an escape decision is still being carried out at time `t`.
fn decision_in_progress(orbit: &Orbit, t: f64) -> bool {
    let Some(last) = orbit.branches.iter().filter(|b| b.time < t).last() else {
        return false;
    };
    match last.kind {
        ChoiceKind::EscapeExit { dwell, .. } => last.time + dwell > t - 1e-12 && dwell > 0.0,
        ChoiceKind::EscapeSlide => orbit
            .segments
            .iter()
            .any(|s| matches!(s.kind, SegmentKind::SlidingArc { .. }) && s.t_start == last.time && s.t_end >= t),
        _ => false,
    }
}

/// First arrival at a point node other than `source` (or at `source` after
/// leaving its vicinity). Returns `(target, cut time, gap)`.
fn first_arrival(sys: &FilippovSystem, nodes: &[GraphNode], source: usize, orbit: &Orbit) -> Option<(usize, f64, f64)> {
    let dom = &sys.domain;
    let src = &nodes[source];
    let leave_radius = src.radius;
    let mut left = false;
    let samples: Vec<(f64, Point)> = orbit.samples().map(|(t, p, _)| (t, p)).collect();
    for i in 1..samples.len() {
        let (t0, p0) = samples[i - 1];
        let (t1, p1) = samples[i];
        let mut best: Option<(usize, f64)> = None;
        for n in nodes.iter().filter(|n| n.is_point()) {
            if n.id == source && !left {
                continue;
            }
            let disk = Disk::new(n.position, NODE_RADIUS);
            if let Some(s) = disk.chord_entry(dom, p0, p1) {
                let te = t0 + s * (t1 - t0);
                if best.map_or(true, |(_, tb)| te < tb) {
                    best = Some((n.id, te));
                }
            }
        }
        if dom.distance(src.position, p1) > leave_radius {
            left = true;
        }
        if let Some((k, _)) = best {
            // closest approach while inside the vicinity
            let c = nodes[k].position;
            let mut min = (f64::INFINITY, t0);
            for j in i..samples.len() {
                let (ta, a) = samples[j - 1];
                let (tb, b) = samples[j];
                let d = dom.delta(a, b);
                let w = dom.delta(a, c);
                let dd = d[0] * d[0] + d[1] * d[1];
                let s = if dd > 0.0 { ((w[0] * d[0] + w[1] * d[1]) / dd).clamp(0.0, 1.0) } else { 0.0 };
                let dist = (w[0] - s * d[0]).hypot(w[1] - s * d[1]);
                if dist < min.0 {
                    min = (dist, ta + s * (tb - ta));
                }
                if j > i && dom.distance(a, c) > NODE_RADIUS {
                    break;
                }
            }
            return Some((k, min.1, min.0));
        }
    }
    None
}

fn edges_from(
    sys: &FilippovSystem,
    nodes: &[GraphNode],
    source: usize,
    cfg: &DiagnosticsConfig,
) -> Result<Vec<GraphEdge>, DiagnosticsError> {
    let start = nodes[source].position;
    let run = |budget| {
        enumerate_branches_with(sys, &cfg.integrator, start, cfg.graph_horizon, Direction::Forward, budget, &cfg.dwell_grid)
    };
    // The unforked prefix often reaches a node before any choice is needed.
    let root = run(1)?;
    let orbits = match root.first().and_then(|o| first_arrival(sys, nodes, source, o).map(|a| (o, a))) {
        Some((o, (_, t, _))) if o.pending.map_or(true, |p| t < p.time) => vec![o.clone()],
        _ => run(cfg.graph_budget)?,
    };
    let windows: Vec<&GraphNode> = nodes.iter().filter(|n| !n.is_point()).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for o in &orbits {
        let Some((target, t_cut, gap)) = first_arrival(sys, nodes, source, o) else {
            continue;
        };
        if t_cut <= 0.0 || decision_in_progress(o, t_cut) {
            continue;
        }
        let orbit = truncate(sys, o, t_cut);
        let key = (target, format!("{:?}", orbit.script));
        if !seen.insert(key) {
            continue;
        }
        let visited = windows
            .iter()
            .filter(|w| w.id != source && Disk::new(w.position, w.radius).first_entry(&sys.domain, &orbit).is_some())
            .map(|w| w.id)
            .collect();
        out.push(GraphEdge { source, target, flight_time: t_cut, gap, script: orbit.script.clone(), windows: visited, orbit });
    }
    Ok(out)
}

/// Build the graph: anchors on sliding arcs, tangency nodes, the given
/// windows, and edges from every node by branch enumeration.
pub fn build_segment_graph(
    sys: &FilippovSystem,
    decomps: &[SigmaDecomposition],
    windows: &[(WindowKind, Disk)],
    cfg: &DiagnosticsConfig,
) -> Result<SegmentGraph, DiagnosticsError> {
    let any_hypothesis = decomps
        .iter()
        .flat_map(|d| &d.arcs)
        .any(|a| cfg.interpretation.includes(a.class));
    if !any_hypothesis {
        return Ok(SegmentGraph { hypothesis_absent: true, base: None, nodes: Vec::new(), edges: Vec::new() });
    }
    let mut nodes = Vec::new();
    for d in decomps {
        for a in d.arcs_of(ArcClass::Sliding) {
            for f in ANCHOR_FRACTIONS {
                push_point_node(&mut nodes, NodeRole::SlidingAnchor, polyline_point(&sys.domain, &a.points, f), d.curve, sys);
            }
        }
    }
    let base = (!nodes.is_empty()).then_some(0);
    for d in decomps {
        for t in &d.tangencies {
            let role = if is_escape_entry(sys, d, t.position) { NodeRole::EscapeEntry } else { NodeRole::Tangency };
            push_point_node(&mut nodes, role, t.position, d.curve, sys);
        }
    }
    for (kind, disk) in windows {
        let id = nodes.len();
        nodes.push(GraphNode {
            id,
            role: NodeRole::Window,
            position: sys.domain.canonical(disk.center),
            radius: disk.radius,
            curve: None,
            window: Some(*kind),
        });
    }
    let per_node: Vec<Result<Vec<GraphEdge>, DiagnosticsError>> =
        (0..nodes.len()).into_par_iter().map(|k| edges_from(sys, &nodes, k, cfg)).collect();
    let mut edges = Vec::new();
    for r in per_node {
        match r {
            Ok(e) => edges.extend(e),
            // a node that cannot start an orbit just has no out-edges
            Err(DiagnosticsError::Integration(e)) => log::debug!("graph node skipped: {e}"),
            Err(e) => return Err(e),
        }
    }
    edges.sort_by(|a, b| {
        (a.source, a.target).cmp(&(b.source, b.target)).then(a.flight_time.total_cmp(&b.flight_time))
    });
    Ok(SegmentGraph { hypothesis_absent: false, base, nodes, edges })
}

/// Windows from an `n x n` grid of centers: forward orbits that land on a
/// sliding arc first, and backward orbits that land on an escaping arc
/// first. At most `max_each` of each kind, chosen by the seeded shuffle.
pub fn probe_windows(
    sys: &FilippovSystem,
    n: usize,
    radius: f64,
    horizon: f64,
    max_each: usize,
    cfg: &DiagnosticsConfig,
) -> Vec<(WindowKind, Disk)> {
    let [x0, x1, y0, y1] = sys.domain.bounds;
    let centers: Vec<Point> = (0..n * n)
        .map(|k| {
            let (i, j) = (k % n, k / n);
            [x0 + (i as f64 + 0.5) / n as f64 * (x1 - x0), y0 + (j as f64 + 0.5) / n as f64 * (y1 - y0)]
        })
        .collect();
    let lands_sliding = |p: Point, dir: Direction| -> bool {
        let Ok(o) = integrate_filippov_with(sys, &cfg.integrator, p, horizon, dir, &BranchPolicy::ExitImmediatelyUp) else {
            return false;
        };
        let mut segs = o.segments.iter().skip_while(|s| matches!(s.kind, SegmentKind::RegularArc { .. }));
        matches!(segs.next().map(|s| &s.kind), Some(SegmentKind::SlidingArc { .. }))
            && o.segments[0].t_end > 0.0
    };
    let kinds: Vec<(Point, bool, bool)> = centers
        .par_iter()
        .map(|p| (*p, lands_sliding(*p, Direction::Forward), lands_sliding(*p, Direction::Backward)))
        .collect();
    let mut v: Vec<Point> = kinds.iter().filter(|k| k.1).map(|k| k.0).collect();
    let mut w: Vec<Point> = kinds.iter().filter(|k| k.2).map(|k| k.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x77_1d0e);
    v.shuffle(&mut rng);
    w.shuffle(&mut rng);
    v.into_iter()
        .take(max_each)
        .map(|c| (WindowKind::IntoSliding, Disk::new(c, radius)))
        .chain(w.into_iter().take(max_each).map(|c| (WindowKind::IntoEscaping, Disk::new(c, radius))))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosedOrbitRecord {
    pub base: usize,
    /// Window node the cycle was assembled for.
    pub window: Option<usize>,
    pub period: f64,
    /// `|gamma(0) - gamma(period)|` of the re-integrated orbit.
    pub gap: f64,
    pub windows_visited: Vec<usize>,
    pub edges: Vec<usize>,
    pub script: Vec<EscapeDecision>,
    pub orbit: Orbit,
}

/// Re-integrate a chain of edges from the base node and close it up by
/// adjusting the period. Fails when the gap stays above the tolerance.
fn revalidate_chain(
    sys: &FilippovSystem,
    graph: &SegmentGraph,
    base: usize,
    chain: &[usize],
    cfg: &DiagnosticsConfig,
) -> Option<ClosedOrbitRecord> {
    let q0 = graph.nodes[base].position;
    let script: Vec<EscapeDecision> = chain.iter().flat_map(|k| graph.edges[*k].script.iter().cloned()).collect();
    let policy = BranchPolicy::Scripted { choices: script.clone(), then: None };
    let mut tau: f64 = chain.iter().map(|k| graph.edges[*k].flight_time).sum();
    let mut best: Option<(f64, f64, Orbit)> = None;
    for _ in 0..8 {
        if !(tau > 0.0) {
            return None;
        }
        let o = integrate_filippov_with(sys, &cfg.integrator, q0, tau, Direction::Forward, &policy).ok()?;
        if o.duration() < tau - 1e-12 || o.terminal.is_some() {
            return None;
        }
        let end = o.end_point();
        let g = sys.domain.delta(end, q0);
        let gap = g[0].hypot(g[1]);
        // velocity from the last chord of nonzero duration
        let samples: Vec<(f64, Point)> = o.samples().map(|(t, p, _)| (t, p)).collect();
        let v = samples.windows(2).rev().find(|w| w[1].0 > w[0].0).map(|w| {
            let d = sys.domain.delta(w[0].1, w[1].1);
            let dt = w[1].0 - w[0].0;
            [d[0] / dt, d[1] / dt]
        });
        let done = gap <= 1e-10;
        if best.as_ref().map_or(true, |b| gap < b.1) {
            best = Some((tau, gap, o));
        }
        if done {
            break;
        }
        let v = v?;
        let vv = v[0] * v[0] + v[1] * v[1];
        if vv == 0.0 {
            break;
        }
        tau += (g[0] * v[0] + g[1] * v[1]) / vv;
    }
    let (period, gap, orbit) = best?;
    if gap > REVALIDATE_TOL {
        return None;
    }
    let windows_visited = graph
        .nodes
        .iter()
        .filter(|n| !n.is_point() && Disk::new(n.position, n.radius).first_entry(&sys.domain, &orbit).is_some())
        .map(|n| n.id)
        .collect();
    Some(ClosedOrbitRecord { base, window: None, period, gap, windows_visited, edges: chain.to_vec(), script, orbit })
}

/// Closed orbits through `base`, one per requested window (in order), each
/// re-validated by fresh integration. With no windows, the quickest cycle
/// through `base`. Windows without a cycle are skipped; an empty list means
/// nothing was found at this budget.
pub fn assemble_closed_orbits(
    sys: &FilippovSystem,
    graph: &SegmentGraph,
    base: usize,
    windows: &[usize],
    cfg: &DiagnosticsConfig,
) -> Vec<ClosedOrbitRecord> {
    if base >= graph.nodes.len() || !graph.nodes[base].is_point() {
        return Vec::new();
    }
    let chain_through = |k: usize| -> Option<Vec<usize>> {
        let e = &graph.edges[k];
        let mut chain = graph.shortest_path(base, e.source)?;
        chain.push(k);
        chain.extend(graph.shortest_path(e.target, base)?);
        Some(chain)
    };
    if windows.is_empty() {
        let mut chains: Vec<(f64, Vec<usize>)> = (0..graph.edges.len())
            .filter(|k| graph.edges[*k].target == base)
            .filter_map(|k| chain_through(k))
            .map(|c| (c.iter().map(|k| graph.edges[*k].flight_time).sum(), c))
            .collect();
        chains.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        return chains
            .iter()
            .find_map(|(_, c)| revalidate_chain(sys, graph, base, c, cfg))
            .into_iter()
            .collect();
    }
    windows
        .par_iter()
        .filter_map(|w| {
            let mut tried = 0;
            for (k, e) in graph.edges.iter().enumerate() {
                if !e.windows.contains(w) {
                    continue;
                }
                let Some(chain) = chain_through(k) else { continue };
                tried += 1;
                if let Some(r) = revalidate_chain(sys, graph, base, &chain, cfg) {
                    if r.windows_visited.contains(w) {
                        return Some(ClosedOrbitRecord { window: Some(*w), ..r });
                    }
                }
                if tried >= CANDIDATES_PER_WINDOW {
                    break;
                }
            }
            None
        })
        .collect()
}
