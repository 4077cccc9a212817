//! Event-driven Filippov orbits.
//!
//! An orbit alternates regular arcs (inside one region), sliding arcs (on a
//! switching curve, driven by the sliding field) and zero-length event
//! segments. Forward orbits through escaping points are not unique; a
//! [`BranchPolicy`] picks one, and [`enumerate_branches`] walks the fork tree
//! over a finite dwell grid.
//!
//! Times stored in an orbit are elapsed times `>= 0` in both directions.
//! "Up" always means the `h > 0` side of the curve.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::ode::{DenseStep, OdeError, Stepper};
use crate::sigma::{self, classify_unchecked, lie_pair, unit_tangent, ArcClass, ClassKind, SigmaError, TANGENCY_TOL};
use crate::system::{FilippovSystem, Location, ModelError, Point, Side, SwitchingCurve};

/// Target `|h|` at a located crossing event.
pub const EVENT_TOL: f64 = 1e-10;
/// Maximum `|h|` along a sliding arc.
pub const SLIDING_BAND: f64 = 1e-8;
/// Closest-approach distance below which a regular arc touches a curve.
pub const GRAZE_DIST: f64 = 1e-8;
/// Arrivals with `|L| <= GRAZE_SLOPE * |grad h| * |Y|` are treated as grazing.
pub const GRAZE_SLOPE: f64 = 1e-3;
/// Search radius when snapping a grazing arrival onto a tangency point.
pub const SNAP_RADIUS: f64 = 1e-3;
const PROBE_DELTA: f64 = 1e-6;
const SUBSAMPLES: usize = 8;
const SLIDE_SUBSAMPLES: usize = 4;
const SIGN_SLACK: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sigma(#[from] SigmaError),
    #[error("step size underflow at t = {t:e} near ({:.6}, {:.6})", point[0], point[1])]
    StepUnderflow { t: f64, point: Point },
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
}

impl From<EvalError> for IntegrationError {
    fn from(e: EvalError) -> Self {
        IntegrationError::Model(ModelError::Eval(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Relative and absolute local error tolerance.
    pub tol: f64,
    pub h_max: f64,
    /// Zeno guard: orbits stop after this many segments.
    pub max_segments: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { tol: 1e-10, h_max: 0.05, max_segments: 50_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn orientation(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    DoubleTangency,
    PseudoEquilibrium,
    LeftDomain,
    /// Tangency with no field leaving and no sliding arc to follow.
    NoContinuation,
    /// A requested exit side whose field does not leave the curve.
    InfeasibleExit,
    StepUnderflow,
    SegmentLimit,
    /// Halted at an escaping encounter the policy left undecided.
    BranchPending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SegmentKind {
    RegularArc { region: i64 },
    SlidingArc { curve: usize },
    CrossingEvent { curve: usize },
    EscapeDeparture { curve: usize, side: Side },
    Terminal { reason: TerminalReason },
}

impl SegmentKind {
    pub fn label(&self) -> &'static str {
        match self {
            SegmentKind::RegularArc { .. } => "regular_arc",
            SegmentKind::SlidingArc { .. } => "sliding_arc",
            SegmentKind::CrossingEvent { .. } => "crossing_event",
            SegmentKind::EscapeDeparture { .. } => "escape_departure",
            SegmentKind::Terminal { .. } => "terminal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitSegment {
    #[serde(flatten)]
    pub kind: SegmentKind,
    pub t_start: f64,
    pub t_end: f64,
    pub start: Point,
    pub end: Point,
    /// `(t, point)` samples in canonical coordinates, endpoints included.
    pub samples: Vec<(f64, Point)>,
}

impl OrbitSegment {
    fn event(kind: SegmentKind, t: f64, p: Point) -> Self {
        OrbitSegment { kind, t_start: t, t_end: t, start: p, end: p, samples: vec![(t, p)] }
    }

    fn from_samples(kind: SegmentKind, samples: Vec<(f64, Point)>) -> Self {
        let (t_start, start) = samples[0];
        let (t_end, end) = *samples.last().unwrap();
        OrbitSegment { kind, t_start, t_end, start, end, samples }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "choice")]
pub enum EscapeDecision {
    /// Slide along the escaping arc for `dwell`, then leave to `side`.
    Exit { side: Side, dwell: f64 },
    /// Slide along the escaping arc until it ends.
    Slide,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ChoiceKind {
    EscapeExit { side: Side, dwell: f64 },
    EscapeSlide,
    SlidingExitAtTangency { side: Side },
    DoubleTangencyStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchChoice {
    pub time: f64,
    pub point: Point,
    #[serde(flatten)]
    pub kind: ChoiceKind,
}

/// An escaping point (or the tip of an escaping arc) where the orbit must
/// choose how to continue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Encounter {
    pub curve: usize,
    pub point: Point,
    pub time: f64,
    /// Number of decisions taken before this one.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum BranchPolicy {
    ExitImmediatelyUp,
    ExitImmediatelyDown,
    SlideUntilTangency,
    DwellThenExit { dwell: f64, side: Side },
    /// Uniform side and uniform dwell in `[0, max_dwell]` from a seeded stream.
    Random { seed: u64, max_dwell: f64 },
    /// Replay `choices`, then defer to `then` (or halt when absent).
    Scripted { choices: Vec<EscapeDecision>, then: Option<Box<BranchPolicy>> },
}

pub trait Decider {
    /// `None` halts the orbit at the encounter.
    fn decide(&mut self, encounter: &Encounter) -> Option<EscapeDecision>;
}

/// Stateful evaluation of a [`BranchPolicy`].
pub struct PolicyDecider {
    policy: BranchPolicy,
    rng: Option<ChaCha8Rng>,
    used: usize,
    then: Option<Box<PolicyDecider>>,
}

impl PolicyDecider {
    pub fn new(policy: &BranchPolicy) -> Self {
        let rng = match policy {
            BranchPolicy::Random { seed, .. } => Some(ChaCha8Rng::seed_from_u64(*seed)),
            _ => None,
        };
        let then = match policy {
            BranchPolicy::Scripted { then: Some(p), .. } => Some(Box::new(PolicyDecider::new(p))),
            _ => None,
        };
        PolicyDecider { policy: policy.clone(), rng, used: 0, then }
    }
}

impl Decider for PolicyDecider {
    fn decide(&mut self, encounter: &Encounter) -> Option<EscapeDecision> {
        match &self.policy {
            BranchPolicy::ExitImmediatelyUp => Some(EscapeDecision::Exit { side: Side::Positive, dwell: 0.0 }),
            BranchPolicy::ExitImmediatelyDown => Some(EscapeDecision::Exit { side: Side::Negative, dwell: 0.0 }),
            BranchPolicy::SlideUntilTangency => Some(EscapeDecision::Slide),
            BranchPolicy::DwellThenExit { dwell, side } => Some(EscapeDecision::Exit { side: *side, dwell: dwell.max(0.0) }),
            BranchPolicy::Random { max_dwell, .. } => {
                let rng = self.rng.as_mut().expect("seeded");
                let side = if rng.gen_bool(0.5) { Side::Positive } else { Side::Negative };
                let dwell = rng.gen::<f64>() * max_dwell.max(0.0);
                Some(EscapeDecision::Exit { side, dwell })
            }
            BranchPolicy::Scripted { choices, .. } => {
                if self.used < choices.len() {
                    self.used += 1;
                    Some(choices[self.used - 1])
                } else {
                    self.then.as_mut().and_then(|d| d.decide(encounter))
                }
            }
        }
    }
}

struct Halt;

impl Decider for Halt {
    fn decide(&mut self, _: &Encounter) -> Option<EscapeDecision> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Orbit {
    pub initial: Point,
    pub direction: Direction,
    pub horizon: f64,
    pub segments: Vec<OrbitSegment>,
    pub branches: Vec<BranchChoice>,
    /// Escape decisions in the order they were taken; replaying them with
    /// [`BranchPolicy::Scripted`] reproduces the orbit.
    pub script: Vec<EscapeDecision>,
    pub terminal: Option<TerminalReason>,
    pub pending: Option<Encounter>,
}

#[derive(Serialize)]
struct SegmentSummary<'a> {
    #[serde(flatten)]
    kind: &'a SegmentKind,
    t_start: f64,
    t_end: f64,
    start: Point,
    end: Point,
    samples: usize,
}

#[derive(Serialize)]
struct OrbitSummary<'a> {
    schema_version: u32,
    initial: Point,
    direction: Direction,
    horizon: f64,
    duration: f64,
    end: Point,
    terminal: &'a Option<TerminalReason>,
    segments: Vec<SegmentSummary<'a>>,
    branches: &'a [BranchChoice],
    script: &'a [EscapeDecision],
}

impl Orbit {
    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end)
    }

    pub fn end_point(&self) -> Point {
        self.segments.last().map_or(self.initial, |s| s.end)
    }

    /// All samples in time order as `(t, point, segment index)`.
    pub fn samples(&self) -> impl Iterator<Item = (f64, Point, usize)> + '_ {
        self.segments
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.samples.iter().map(move |(t, p)| (*t, *p, i)))
    }

    /// Position at elapsed time `t` by linear interpolation between samples
    /// (minimum-image on the torus). `None` beyond the orbit's duration.
    pub fn position_at(&self, sys: &FilippovSystem, t: f64) -> Option<Point> {
        if t < 0.0 || t > self.duration() {
            return None;
        }
        let mut prev: Option<(f64, Point)> = None;
        for (ts, p, _) in self.samples() {
            if ts >= t {
                return Some(match prev {
                    Some((t0, p0)) if ts > t0 => {
                        let d = sys.domain.delta(p0, p);
                        let s = (t - t0) / (ts - t0);
                        sys.domain.canonical([p0[0] + s * d[0], p0[1] + s * d[1]])
                    }
                    _ => p,
                });
            }
            prev = Some((ts, p));
        }
        prev.map(|(_, p)| p)
    }

    /// CSV with columns `t,x,y,segment_kind,segment_index`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,segment_kind,segment_index\n");
        for (i, s) in self.segments.iter().enumerate() {
            for (t, p) in &s.samples {
                let _ = writeln!(out, "{},{},{},{},{}", t, p[0], p[1], s.kind.label(), i);
            }
        }
        out
    }

    /// JSON summary without the dense samples.
    pub fn summary_json(&self) -> serde_json::Value {
        let summary = OrbitSummary {
            schema_version: 1,
            initial: self.initial,
            direction: self.direction,
            horizon: self.horizon,
            duration: self.duration(),
            end: self.end_point(),
            terminal: &self.terminal,
            segments: self
                .segments
                .iter()
                .map(|s| SegmentSummary {
                    kind: &s.kind,
                    t_start: s.t_start,
                    t_end: s.t_end,
                    start: s.start,
                    end: s.end,
                    samples: s.samples.len(),
                })
                .collect(),
            branches: &self.branches,
            script: &self.script,
        };
        serde_json::to_value(summary).expect("serializable")
    }
}

// ---------------------------------------------------------------------------
// Sigma events
// ---------------------------------------------------------------------------

/// How the orbit reached a point of a switching curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrival {
    Start,
    /// Transversal arrival from the given side.
    FromSide(Side),
    /// Tangential touch from the given side.
    Graze(Side),
    /// End of a sliding or escaping arc.
    SlideEnd,
}

/// Continuation decided by the local geometry at a switching-curve point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaAction {
    /// Continue as a regular arc on `side`.
    Cross { side: Side },
    /// Follow the sliding field along the curve.
    Slide,
    /// Escaping point or escaping-arc tip: resolved by the branch policy.
    Escape,
    /// Leave a tangency with the tangent field of `side`.
    FoldExit { side: Side },
    Terminal(TerminalReason),
}

/// Sliding field without the class check; fails only when the denominator
/// vanishes.
fn sliding_raw(sys: &FilippovSystem, curve: &SwitchingCurve, p: Point, o: f64) -> Result<[f64; 2], SigmaError> {
    let (lp, ln) = lie_pair(sys, curve, p, o)?;
    let d = ln - lp;
    if d.abs() <= TANGENCY_TOL {
        return Err(SigmaError::UndefinedSliding { point: p, l_pos: lp, l_neg: ln });
    }
    let y1 = sys.side_field(curve, Side::Positive, p)?;
    let y2 = sys.side_field(curve, Side::Negative, p)?;
    Ok([o * (ln * y1[0] - lp * y2[0]) / d, o * (ln * y1[1] - lp * y2[1]) / d])
}

/// Whether an arc of class `want` starts next to `p` with the sliding field
/// pointing away from `p`.
fn arc_leaving(sys: &FilippovSystem, curve: &SwitchingCurve, p: Point, o: f64, want: ClassKind) -> Result<bool, SigmaError> {
    for dir in [1.0, -1.0] {
        let q = sigma::walk_along(sys, curve, p, dir * PROBE_DELTA)?;
        if classify_unchecked(sys, curve, q, o)?.kind != want {
            continue;
        }
        let z = sliding_raw(sys, curve, q, o)?;
        let t = unit_tangent(curve, q)?;
        if dir * (z[0] * t[0] + z[1] * t[1]) > 0.0 {
            return Ok(true);
        }
    }
    Ok(false)
}

fn fold_visible(sys: &FilippovSystem, curve: &SwitchingCurve, side: Side, p: Point) -> Result<bool, EvalError> {
    Ok(side.sign() * sys.side_second_lie(curve, side, p)? > TANGENCY_TOL)
}

/// Decide how an orbit continues from point `p` of curve `curve_id`.
pub fn handle_sigma_event(
    sys: &FilippovSystem,
    curve_id: usize,
    p: Point,
    arrival: Arrival,
    direction: Direction,
) -> Result<SigmaAction, IntegrationError> {
    let _ = arrival;
    let o = direction.orientation();
    let curve = sys.curve(curve_id)?;
    let class = classify_unchecked(sys, curve, p, o)?;
    Ok(match class.kind {
        ClassKind::Crossing => SigmaAction::Cross { side: Side::of(class.l_pos) },
        ClassKind::Sliding => SigmaAction::Slide,
        ClassKind::Escaping => SigmaAction::Escape,
        // an escaping pseudo-equilibrium still lets the orbit leave to either side
        ClassKind::PseudoEquilibrium if class.l_pos > 0.0 => SigmaAction::Escape,
        ClassKind::PseudoEquilibrium => SigmaAction::Terminal(TerminalReason::PseudoEquilibrium),
        ClassKind::Tangency { double: true, .. } => SigmaAction::Terminal(TerminalReason::DoubleTangency),
        ClassKind::Tangency { side, .. } => {
            let tangent = if side == sigma::TangentSide::Positive { Side::Positive } else { Side::Negative };
            let other = tangent.opposite();
            let l_other = if other == Side::Positive { class.l_pos } else { class.l_neg };
            if arc_leaving(sys, curve, p, o, ClassKind::Escaping)? {
                SigmaAction::Escape
            } else if l_other * other.sign() > TANGENCY_TOL {
                SigmaAction::Cross { side: other }
            } else if fold_visible(sys, curve, tangent, p)? {
                SigmaAction::FoldExit { side: tangent }
            } else if arc_leaving(sys, curve, p, o, ClassKind::Sliding)? {
                SigmaAction::Slide
            } else {
                SigmaAction::Terminal(TerminalReason::NoContinuation)
            }
        }
    })
}

/// Move a near-tangential arrival onto the closest tangency of `side`'s
/// field within [`SNAP_RADIUS`], if there is one.
fn snap_to_tangency(sys: &FilippovSystem, curve: &SwitchingCurve, p: Point, side: Side) -> Result<Option<Point>, SigmaError> {
    let l = |q: Point| -> Result<f64, SigmaError> { Ok(sys.side_lie(curve, side, q)?) };
    let l0 = l(p)?;
    if l0.abs() <= sigma::ROOT_TOL {
        return Ok(Some(p));
    }
    let n = 64;
    let ds = SNAP_RADIUS / n as f64;
    for k in 1..=n {
        for dir in [1.0, -1.0] {
            let (mut a, mut b) = (dir * ds * (k - 1) as f64, dir * ds * k as f64);
            let lb = l(sigma::walk_along(sys, curve, p, b)?)?;
            if lb.signum() == l0.signum() && lb != 0.0 {
                continue;
            }
            let mut best = sigma::walk_along(sys, curve, p, b)?;
            for _ in 0..80 {
                let m = 0.5 * (a + b);
                let q = sigma::walk_along(sys, curve, p, m)?;
                let lm = l(q)?;
                best = q;
                if lm.abs() <= sigma::ROOT_TOL {
                    break;
                }
                if lm.signum() == l0.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            return Ok(Some(best));
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Arcs
// ---------------------------------------------------------------------------

fn underflow(e: OdeError<EvalError>, point: Point) -> IntegrationError {
    match e {
        OdeError::StepUnderflow { t, .. } => IntegrationError::StepUnderflow { t, point },
        OdeError::Field(e) => e.into(),
    }
}

/// Root of `g` in `[a, b]` where `g(a) >= 0 > g(b)`, by secant steps
/// safeguarded with bisection.
fn refine_root<G>(mut g: G, mut a: f64, mut ga: f64, mut b: f64, mut gb: f64, tol: f64) -> Result<f64, IntegrationError>
where
    G: FnMut(f64) -> Result<f64, IntegrationError>,
{
    if ga == 0.0 {
        return Ok(a);
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let mut c = b - gb * (b - a) / (gb - ga);
        if !(c > a && c < b) || !c.is_finite() {
            c = 0.5 * (a + b);
        }
        let gc = g(c)?;
        if gc.abs() <= tol || (b - a) <= 1e-15 * (1.0 + b.abs()) {
            return Ok(c);
        }
        if gc >= 0.0 {
            a = c;
            ga = gc;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = c;
            gb = gc;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
    }
    Ok(if ga.abs() < gb.abs() { a } else { b })
}

fn bisect<G>(mut g: G, mut a: f64, mut b: f64, iterations: usize) -> Result<f64, IntegrationError>
where
    G: FnMut(f64) -> Result<bool, IntegrationError>,
{
    // invariant: g(a) true, g(b) false
    for _ in 0..iterations {
        let m = 0.5 * (a + b);
        if g(m)? {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(a)
}

/// How a regular arc ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegularEnd {
    Horizon,
    Event { curve: usize, arrival: Arrival },
    LeftDomain,
}

enum Hit {
    Cross(usize),
    Graze(usize),
    Boundary,
}

#[allow(clippy::too_many_arguments)]
fn regular_arc(
    sys: &FilippovSystem,
    cfg: &IntegratorConfig,
    region: i64,
    p0: Point,
    t0: f64,
    t_end: f64,
    o: f64,
) -> Result<(OrbitSegment, RegularEnd), IntegrationError> {
    let dom = &sys.domain;
    let refs: Vec<f64> = sys
        .curves
        .iter()
        .map(|c| match sys.region_side(c, region) {
            Some(s) => Ok(s.sign()),
            None => c.value(p0).map(|h| if h >= 0.0 { 1.0 } else { -1.0 }),
        })
        .collect::<Result<_, _>>()?;
    let mut field = |y: [f64; 2]| -> Result<[f64; 2], EvalError> {
        let v = sys.region_field(region, y)?;
        Ok([o * v[0], o * v[1]])
    };
    let mut stepper = Stepper::new(t0, p0, cfg.tol, cfg.h_max);
    let mut samples = vec![(t0, p0)];
    let kind = SegmentKind::RegularArc { region };
    loop {
        if stepper.t >= t_end {
            return Ok((OrbitSegment::from_samples(kind, samples), RegularEnd::Horizon));
        }
        let here = dom.canonical(stepper.y);
        let step = stepper.step(&mut field, t_end).map_err(|e| underflow(e, here))?;
        let ts: Vec<f64> = (0..=SUBSAMPLES).map(|k| step.t0 + step.h * k as f64 / SUBSAMPLES as f64).collect();
        let at = |t: f64| dom.canonical(step.eval(t));
        let pts: Vec<Point> = ts.iter().map(|t| at(*t)).collect();

        let mut best: Option<(f64, Hit)> = None;
        let consider = |t: f64, hit: Hit, best: &mut Option<(f64, Hit)>| {
            if best.as_ref().is_none_or(|(tb, _)| t < *tb) {
                *best = Some((t, hit));
            }
        };

        if !dom.is_torus() {
            if let Some(k) = (1..=SUBSAMPLES).find(|&k| !dom.contains(step.eval(ts[k]))) {
                let tb = bisect(|t| Ok(dom.contains(step.eval(t))), ts[k - 1], ts[k], 60)?;
                consider(tb, Hit::Boundary, &mut best);
            }
        }

        for (ci, curve) in sys.curves.iter().enumerate() {
            let r = refs[ci];
            let hv: Vec<f64> = pts.iter().map(|p| curve.value(*p)).collect::<Result<_, _>>()?;
            let cross = (1..=SUBSAMPLES).find(|&k| r * hv[k] < -SIGN_SLACK);
            if let Some(k) = cross {
                let g = |t: f64| -> Result<f64, IntegrationError> { Ok(r * curve.value(at(t))? + SIGN_SLACK) };
                let te = refine_root(g, ts[k - 1], r * hv[k - 1] + SIGN_SLACK, ts[k], r * hv[k] + SIGN_SLACK, 0.1 * EVENT_TOL)?;
                consider(te, Hit::Cross(ci), &mut best);
            }
            let last = cross.unwrap_or(SUBSAMPLES);
            let near = hv[..=last].iter().any(|h| h.abs() <= 1e-2);
            if !near {
                continue;
            }
            let rate = |p: Point| -> Result<f64, IntegrationError> {
                let g = curve.gradient(p)?;
                let v = field(p)?;
                Ok(r * (g[0] * v[0] + g[1] * v[1]))
            };
            let mut prev = rate(pts[0])?;
            for k in 1..=last {
                let cur = rate(pts[k])?;
                if prev < -1e-10 && cur >= 0.0 {
                    let tg = bisect(|t| Ok(rate(at(t))? < 0.0), ts[k - 1], ts[k], 60)?;
                    let pg = at(tg);
                    let g = curve.gradient(pg)?;
                    if curve.value(pg)?.abs() / g[0].hypot(g[1]) <= GRAZE_DIST {
                        consider(tg, Hit::Graze(ci), &mut best);
                    }
                    break;
                }
                prev = cur;
            }
        }

        let Some((te, hit)) = best else {
            samples.push((step.t1(), dom.canonical(step.y1)));
            continue;
        };
        let (end_point, end) = match hit {
            Hit::Boundary => (step.eval(te), RegularEnd::LeftDomain),
            Hit::Cross(ci) => {
                let curve = &sys.curves[ci];
                let side = Side::of(refs[ci]);
                let pe = at(te);
                match near_tangent_arrival(sys, curve, pe, side, o)? {
                    Some(t) => (t, RegularEnd::Event { curve: curve.id, arrival: Arrival::Graze(side) }),
                    None => (pe, RegularEnd::Event { curve: curve.id, arrival: Arrival::FromSide(side) }),
                }
            }
            Hit::Graze(ci) => {
                let curve = &sys.curves[ci];
                let side = Side::of(refs[ci]);
                let pg = sigma::project(sys, curve, at(te), 4)?;
                let snapped = snap_to_tangency(sys, curve, pg, side)?.unwrap_or(pg);
                (snapped, RegularEnd::Event { curve: curve.id, arrival: Arrival::Graze(side) })
            }
        };
        samples.push((te, dom.canonical(end_point)));
        return Ok((OrbitSegment::from_samples(kind, samples), end));
    }
}

fn near_tangent_arrival(
    sys: &FilippovSystem,
    curve: &SwitchingCurve,
    p: Point,
    side: Side,
    o: f64,
) -> Result<Option<Point>, IntegrationError> {
    let l = o * sys.side_lie(curve, side, p)?;
    let g = curve.gradient(p)?;
    let y = sys.side_field(curve, side, p)?;
    if l.abs() > GRAZE_SLOPE * g[0].hypot(g[1]) * y[0].hypot(y[1]) {
        return Ok(None);
    }
    Ok(snap_to_tangency(sys, curve, p, side)?)
}

/// How a sliding (or escaping) arc ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlideEnd {
    Time,
    Tangency(Point),
    PseudoEquilibrium,
    LeftDomain,
}

#[allow(clippy::too_many_arguments)]
fn sliding_arc(
    sys: &FilippovSystem,
    cfg: &IntegratorConfig,
    curve: &SwitchingCurve,
    p0: Point,
    class: ArcClass,
    t0: f64,
    t_end: f64,
    o: f64,
    hold: bool,
) -> Result<(OrbitSegment, SlideEnd), IntegrationError> {
    let dom = &sys.domain;
    let expect = match class {
        ArcClass::Escaping => [1.0, -1.0],
        _ => [-1.0, 1.0],
    };
    let kind = SegmentKind::SlidingArc { curve: curve.id };
    let mut samples = vec![(t0, p0)];
    let speed = |p: Point| -> Result<f64, IntegrationError> {
        let z = sliding_raw(sys, curve, p, o)?;
        Ok(z[0].hypot(z[1]))
    };
    if speed(p0)? <= sigma::PSEUDO_EQ_TOL {
        if hold && t_end > t0 {
            // resting at a pseudo-equilibrium until the dwell is over
            samples.push((t_end, p0));
            return Ok((OrbitSegment::from_samples(kind, samples), SlideEnd::Time));
        }
        return Ok((OrbitSegment::from_samples(kind, samples), SlideEnd::PseudoEquilibrium));
    }
    let mut field = |y: [f64; 2]| -> Result<[f64; 2], SigmaError> { sliding_raw(sys, curve, dom.canonical(y), o) };
    let mut stepper = Stepper::new(t0, p0, cfg.tol, cfg.h_max);
    let proj = |y: Point| sigma::project(sys, curve, dom.canonical(y), 3);
    let psi = |p: Point| -> Result<[f64; 2], IntegrationError> {
        let (lp, ln) = lie_pair(sys, curve, p, o)?;
        Ok([expect[0] * lp, expect[1] * ln])
    };
    loop {
        if stepper.t >= t_end {
            return Ok((OrbitSegment::from_samples(kind, samples), SlideEnd::Time));
        }
        let here = dom.canonical(stepper.y);
        let step: DenseStep = match stepper.step(&mut field, t_end) {
            Ok(s) => s,
            Err(OdeError::StepUnderflow { t, .. }) => {
                if speed(here)? <= 1e-6 {
                    return Ok((OrbitSegment::from_samples(kind, samples), SlideEnd::PseudoEquilibrium));
                }
                return Err(IntegrationError::StepUnderflow { t, point: here });
            }
            Err(OdeError::Field(e)) => return Err(e.into()),
        };
        let ts: Vec<f64> = (0..=SLIDE_SUBSAMPLES).map(|k| step.t0 + step.h * k as f64 / SLIDE_SUBSAMPLES as f64).collect();
        let mut last_ok = [Some(ts[0]), Some(ts[0])];
        let start_psi = psi(step.y0)?;
        for i in 0..2 {
            if start_psi[i] <= 0.0 {
                last_ok[i] = None;
            }
        }
        let mut exit: Option<(f64, usize)> = None;
        'scan: for (k, &t) in ts.iter().enumerate().skip(1) {
            let q = proj(step.eval(t))?;
            let v = psi(q)?;
            for i in 0..2 {
                if v[i] < -TANGENCY_TOL {
                    exit = Some((t, i));
                    break 'scan;
                }
                if v[i] > 0.0 {
                    last_ok[i] = Some(ts[k]);
                }
            }
        }
        if let Some((tb, i)) = exit {
            let tp = match last_ok[i] {
                Some(ta) => {
                    let g = |t: f64| -> Result<f64, IntegrationError> { Ok(psi(proj(step.eval(t))?)?[i]) };
                    let ga = g(ta)?;
                    let gb = g(tb)?;
                    refine_root(g, ta, ga, tb, gb, sigma::ROOT_TOL)?
                }
                None => step.t0,
            };
            let pt = proj(step.eval(tp))?;
            samples.push((tp, pt));
            return Ok((OrbitSegment::from_samples(kind, samples), SlideEnd::Tangency(pt)));
        }
        let pe = proj(step.y1)?;
        if !dom.is_torus() && !dom.contains(pe) {
            let tb = bisect(|t| Ok(dom.contains(step.eval(t))), step.t0, step.t1(), 60)?;
            samples.push((tb, proj(step.eval(tb))?));
            return Ok((OrbitSegment::from_samples(kind, samples), SlideEnd::LeftDomain));
        }
        samples.push((step.t1(), pe));
        stepper.reset_state(pe);
        let v = speed(pe)?;
        if v <= sigma::PSEUDO_EQ_TOL || v * step.h < 1e-14 {
            return Ok((OrbitSegment::from_samples(kind, samples), SlideEnd::PseudoEquilibrium));
        }
    }
}

/// Integrate inside `region` from `p` for at most `t_max`; reports the first
/// curve hit, if any.
pub fn integrate_regular(
    sys: &FilippovSystem,
    p: Point,
    region: i64,
    t_max: f64,
    direction: Direction,
) -> Result<(OrbitSegment, RegularEnd), IntegrationError> {
    let cfg = IntegratorConfig::default();
    regular_arc(sys, &cfg, region, sys.domain.canonical(p), 0.0, t_max, direction.orientation())
}

/// Follow the sliding field from a sliding (or escaping) point for at most
/// `t_max`.
pub fn integrate_sliding(
    sys: &FilippovSystem,
    curve_id: usize,
    p: Point,
    t_max: f64,
    direction: Direction,
) -> Result<(OrbitSegment, SlideEnd), IntegrationError> {
    let o = direction.orientation();
    let curve = sys.curve(curve_id)?;
    let p = sigma::project(sys, curve, p, 20)?;
    let class = match classify_unchecked(sys, curve, p, o)?.kind {
        ClassKind::Escaping => ArcClass::Escaping,
        _ => ArcClass::Sliding,
    };
    sliding_arc(sys, &IntegratorConfig::default(), curve, p, class, 0.0, t_max, o, false)
}

// ---------------------------------------------------------------------------
// Orbits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Next {
    Regular { region: i64, p: Point },
    OnSigma { curve: usize, p: Point, arrival: Arrival },
    Slide { curve: usize, p: Point, class: ArcClass, exit: Option<(f64, Side)> },
    Encounter { curve: usize, p: Point },
    Depart { curve: usize, p: Point, side: Side },
    Done,
}

/// Resumable integration state.
#[derive(Debug, Clone)]
struct Cursor {
    orbit: Orbit,
    next: Next,
    t: f64,
}

impl Cursor {
    fn start(sys: &FilippovSystem, p: Point, horizon: f64, direction: Direction) -> Result<Self, IntegrationError> {
        if !(horizon > 0.0) {
            return Err(IntegrationError::Horizon(horizon));
        }
        let q = sys.domain.canonical(p);
        let next = match sys.region_of(q)? {
            Location::Region(region) => Next::Regular { region, p: q },
            Location::OnSigma(c) => {
                let curve = sys.curve(c)?;
                Next::OnSigma { curve: c, p: sigma::project(sys, curve, q, 20)?, arrival: Arrival::Start }
            }
        };
        let orbit = Orbit {
            initial: q,
            direction,
            horizon,
            segments: Vec::new(),
            branches: Vec::new(),
            script: Vec::new(),
            terminal: None,
            pending: None,
        };
        Ok(Cursor { orbit, next, t: 0.0 })
    }

    fn terminate(&mut self, reason: TerminalReason, p: Point) {
        self.orbit.segments.push(OrbitSegment::event(SegmentKind::Terminal { reason }, self.t, p));
        self.orbit.terminal = Some(reason);
        self.next = Next::Done;
    }

    fn push(&mut self, seg: OrbitSegment) {
        self.t = seg.t_end;
        self.orbit.segments.push(seg);
    }

    fn apply(&mut self, curve: usize, p: Point, d: EscapeDecision) {
        self.orbit.pending = None;
        self.orbit.script.push(d);
        let kind = match d {
            EscapeDecision::Exit { side, dwell } => ChoiceKind::EscapeExit { side, dwell: dwell.max(0.0) },
            EscapeDecision::Slide => ChoiceKind::EscapeSlide,
        };
        self.orbit.branches.push(BranchChoice { time: self.t, point: p, kind });
        self.next = match d {
            EscapeDecision::Exit { side, dwell } if dwell > 0.0 => {
                Next::Slide { curve, p, class: ArcClass::Escaping, exit: Some((dwell, side)) }
            }
            EscapeDecision::Exit { side, .. } => Next::Depart { curve, p, side },
            EscapeDecision::Slide => Next::Slide { curve, p, class: ArcClass::Escaping, exit: None },
        };
    }

    /// Finish the orbit as it stands (a pending encounter becomes terminal).
    fn into_orbit(mut self) -> Orbit {
        if self.orbit.pending.is_some() && self.orbit.terminal.is_none() {
            let p = self.orbit.end_point();
            self.terminate(TerminalReason::BranchPending, p);
        }
        self.orbit
    }

    fn run(&mut self, sys: &FilippovSystem, cfg: &IntegratorConfig, decider: &mut dyn Decider) -> Result<(), IntegrationError> {
        let o = self.orbit.direction.orientation();
        let horizon = self.orbit.horizon;
        loop {
            if self.orbit.segments.len() >= cfg.max_segments && !matches!(self.next, Next::Done) {
                let p = self.orbit.end_point();
                self.terminate(TerminalReason::SegmentLimit, p);
            }
            match std::mem::replace(&mut self.next, Next::Done) {
                Next::Done => return Ok(()),
                Next::Regular { region, p } => {
                    if self.t >= horizon {
                        continue;
                    }
                    let (seg, end) = match regular_arc(sys, cfg, region, p, self.t, horizon, o) {
                        Ok(r) => r,
                        Err(IntegrationError::StepUnderflow { point, .. }) => {
                            self.terminate(TerminalReason::StepUnderflow, point);
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    let end_point = seg.end;
                    self.push(seg);
                    match end {
                        RegularEnd::Horizon => {}
                        RegularEnd::LeftDomain => self.terminate(TerminalReason::LeftDomain, end_point),
                        RegularEnd::Event { curve, arrival } => {
                            self.next = Next::OnSigma { curve, p: end_point, arrival };
                        }
                    }
                }
                Next::OnSigma { curve, p, arrival } => {
                    let c = sys.curve(curve)?;
                    match handle_sigma_event(sys, curve, p, arrival, self.orbit.direction)? {
                        SigmaAction::Cross { side } => {
                            self.push(OrbitSegment::event(SegmentKind::CrossingEvent { curve }, self.t, p));
                            self.next = Next::Regular { region: c.region_on(side), p };
                        }
                        SigmaAction::Slide => {
                            self.next = Next::Slide { curve, p, class: ArcClass::Sliding, exit: None };
                        }
                        SigmaAction::Escape => self.next = Next::Encounter { curve, p },
                        SigmaAction::FoldExit { side } => {
                            self.orbit.branches.push(BranchChoice {
                                time: self.t,
                                point: p,
                                kind: ChoiceKind::SlidingExitAtTangency { side },
                            });
                            self.next = Next::Regular { region: c.region_on(side), p };
                        }
                        SigmaAction::Terminal(reason) => {
                            if reason == TerminalReason::DoubleTangency {
                                self.orbit.branches.push(BranchChoice {
                                    time: self.t,
                                    point: p,
                                    kind: ChoiceKind::DoubleTangencyStop,
                                });
                            }
                            self.terminate(reason, p);
                        }
                    }
                }
                Next::Encounter { curve, p } => {
                    if self.t >= horizon {
                        continue;
                    }
                    let enc = Encounter { curve, point: p, time: self.t, index: self.orbit.script.len() };
                    match decider.decide(&enc) {
                        Some(d) => self.apply(curve, p, d),
                        None => {
                            self.orbit.pending = Some(enc);
                            self.next = Next::Encounter { curve, p };
                            return Ok(());
                        }
                    }
                }
                Next::Slide { curve, p, class, exit } => {
                    if self.t >= horizon {
                        continue;
                    }
                    let c = sys.curve(curve)?;
                    let t_end = exit.map_or(horizon, |(d, _)| (self.t + d).min(horizon));
                    let (seg, end) = match sliding_arc(sys, cfg, c, p, class, self.t, t_end, o, exit.is_some()) {
                        Ok(r) => r,
                        Err(IntegrationError::StepUnderflow { point, .. }) => {
                            self.terminate(TerminalReason::StepUnderflow, point);
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    let q = seg.end;
                    self.push(seg);
                    match end {
                        SlideEnd::Time => {
                            if let (Some((_, side)), true) = (exit, self.t < horizon) {
                                self.next = Next::Depart { curve, p: q, side };
                            }
                        }
                        SlideEnd::Tangency(tp) => self.next = Next::OnSigma { curve, p: tp, arrival: Arrival::SlideEnd },
                        SlideEnd::PseudoEquilibrium => self.terminate(TerminalReason::PseudoEquilibrium, q),
                        SlideEnd::LeftDomain => self.terminate(TerminalReason::LeftDomain, q),
                    }
                }
                Next::Depart { curve, p, side } => {
                    let c = sys.curve(curve)?;
                    let l = o * sys.side_lie(c, side, p)? * side.sign();
                    let feasible = l > TANGENCY_TOL || (l.abs() <= TANGENCY_TOL && fold_visible(sys, c, side, p)?);
                    if !feasible {
                        self.terminate(TerminalReason::InfeasibleExit, p);
                        continue;
                    }
                    self.push(OrbitSegment::event(SegmentKind::EscapeDeparture { curve, side }, self.t, p));
                    self.next = Next::Regular { region: c.region_on(side), p };
                }
            }
        }
    }
}

/// Filippov orbit from `p` over `horizon` time units in `direction`, with
/// escaping encounters resolved by `policy`.
pub fn integrate_filippov(
    sys: &FilippovSystem,
    p: Point,
    horizon: f64,
    direction: Direction,
    policy: &BranchPolicy,
) -> Result<Orbit, IntegrationError> {
    integrate_filippov_with(sys, &IntegratorConfig::default(), p, horizon, direction, policy)
}

pub fn integrate_filippov_with(
    sys: &FilippovSystem,
    cfg: &IntegratorConfig,
    p: Point,
    horizon: f64,
    direction: Direction,
    policy: &BranchPolicy,
) -> Result<Orbit, IntegrationError> {
    let mut cur = Cursor::start(sys, p, horizon, direction)?;
    let mut decider = PolicyDecider::new(policy);
    cur.run(sys, cfg, &mut decider)?;
    Ok(cur.into_orbit())
}

/// The fork applied at every escaping encounter: for each dwell, exit up then
/// down; finally slide on.
pub fn fork_choices(dwell_grid: &[f64]) -> Vec<EscapeDecision> {
    let mut out = Vec::with_capacity(2 * dwell_grid.len() + 1);
    for &d in dwell_grid {
        out.push(EscapeDecision::Exit { side: Side::Positive, dwell: d });
        out.push(EscapeDecision::Exit { side: Side::Negative, dwell: d });
    }
    out.push(EscapeDecision::Slide);
    out
}

/// Forward branch enumeration with the default integrator settings. Returns
/// an empty list if `p` is not a valid start.
pub fn enumerate_branches(sys: &FilippovSystem, p: Point, horizon: f64, budget: usize, dwell_grid: &[f64]) -> Vec<Orbit> {
    enumerate_branches_with(sys, &IntegratorConfig::default(), p, horizon, Direction::Forward, budget, dwell_grid)
        .unwrap_or_default()
}

/// Breadth-first walk of the fork tree. A pending leaf is expanded only while
/// the total number of leaves stays within `budget`; leaves left unexpanded
/// end with [`TerminalReason::BranchPending`]. Results are ordered by their
/// fork indices.
pub fn enumerate_branches_with(
    sys: &FilippovSystem,
    cfg: &IntegratorConfig,
    p: Point,
    horizon: f64,
    direction: Direction,
    budget: usize,
    dwell_grid: &[f64],
) -> Result<Vec<Orbit>, IntegrationError> {
    let budget = budget.max(1);
    let choices = fork_choices(dwell_grid);
    let mut root = Cursor::start(sys, p, horizon, direction)?;
    root.run(sys, cfg, &mut Halt)?;
    let mut done: Vec<(Vec<usize>, Cursor)> = Vec::new();
    let mut frontier: Vec<(Vec<usize>, Cursor)> = Vec::new();
    if root.orbit.pending.is_some() {
        frontier.push((Vec::new(), root));
    } else {
        done.push((Vec::new(), root));
    }
    while !frontier.is_empty() {
        let mut expand = Vec::new();
        let mut leaves = done.len() + frontier.len();
        for (key, cur) in frontier.drain(..) {
            if leaves - 1 + choices.len() <= budget {
                leaves += choices.len() - 1;
                expand.push((key, cur));
            } else {
                done.push((key, cur));
            }
        }
        let children: Vec<Result<(Vec<usize>, Cursor), IntegrationError>> = expand
            .par_iter()
            .flat_map_iter(|(key, cur)| {
                choices.iter().enumerate().map(move |(i, d)| {
                    let mut child = cur.clone();
                    let (curve, at) = match child.next {
                        Next::Encounter { curve, p } => (curve, p),
                        _ => unreachable!("pending cursor"),
                    };
                    child.apply(curve, at, *d);
                    child.run(sys, cfg, &mut Halt)?;
                    let mut k = key.clone();
                    k.push(i);
                    Ok((k, child))
                })
            })
            .collect();
        for c in children {
            let (k, cur) = c?;
            if cur.orbit.pending.is_some() {
                frontier.push((k, cur));
            } else {
                done.push((k, cur));
            }
        }
    }
    done.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(done.into_iter().map(|(_, c)| c.into_orbit()).collect())
}
