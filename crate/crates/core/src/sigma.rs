//! Classification of switching-curve points, the sliding vector field, and
//! scans along a curve for tangencies and pseudo-equilibria.
//!
//! Throughout, `L+` and `L-` are the Lie derivatives `Y+ h` and `Y- h` of the
//! fields on the `h > 0` and `h < 0` sides. An `orientation` of `-1` evaluates
//! everything for the time-reversed system.

use serde::Serialize;
use thiserror::Error;

use crate::expr::EvalError;
use crate::system::{FilippovSystem, ModelError, Point, Side, SwitchingCurve, SIGMA_BAND};

/// Dead band on Lie derivatives below which a field counts as tangent.
pub const TANGENCY_TOL: f64 = 1e-9;
/// Root refinement target for Lie derivatives along a curve.
pub const ROOT_TOL: f64 = 1e-12;
/// Points closer than this are the same tangency / pseudo-equilibrium.
pub const DEDUP_DIST: f64 = 1e-8;
/// Sliding speed below which a point is a pseudo-equilibrium.
pub const PSEUDO_EQ_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SigmaError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("sliding field undefined at ({:.6}, {:.6}): L+ = {l_pos:e}, L- = {l_neg:e}", point[0], point[1])]
    UndefinedSliding { point: Point, l_pos: f64, l_neg: f64 },
    #[error("{what} on curve {curve} is not isolated near ({:.6}, {:.6})", point[0], point[1])]
    NotIsolated { curve: usize, point: Point, what: &'static str },
    #[error("resolution must be at least 2, got {0}")]
    Resolution(usize),
    #[error("curve {0} could not be traced")]
    Trace(usize),
}

impl From<EvalError> for SigmaError {
    fn from(e: EvalError) -> Self {
        SigmaError::Model(ModelError::Eval(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TangentSide {
    Positive,
    Negative,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "class")]
pub enum ClassKind {
    Crossing,
    Sliding,
    Escaping,
    /// `Regular` when one side is tangent, `Double` when both are.
    Tangency { double: bool, side: TangentSide },
    PseudoEquilibrium,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointClass {
    #[serde(flatten)]
    pub kind: ClassKind,
    pub l_pos: f64,
    pub l_neg: f64,
}

impl PointClass {
    pub fn is_sliding_like(&self) -> bool {
        matches!(self.kind, ClassKind::Sliding | ClassKind::Escaping | ClassKind::PseudoEquilibrium)
    }
}

/// Lie derivatives `(L+, L-)` at `p` with the given time orientation.
pub fn lie_pair(sys: &FilippovSystem, curve: &SwitchingCurve, p: Point, orientation: f64) -> Result<(f64, f64), EvalError> {
    Ok((
        orientation * sys.side_lie(curve, Side::Positive, p)?,
        orientation * sys.side_lie(curve, Side::Negative, p)?,
    ))
}

fn classify_lie(l_pos: f64, l_neg: f64) -> ClassKind {
    let tp = l_pos.abs() <= TANGENCY_TOL;
    let tn = l_neg.abs() <= TANGENCY_TOL;
    match (tp, tn) {
        (true, true) => ClassKind::Tangency { double: true, side: TangentSide::Both },
        (true, false) => ClassKind::Tangency { double: false, side: TangentSide::Positive },
        (false, true) => ClassKind::Tangency { double: false, side: TangentSide::Negative },
        _ if l_pos * l_neg > 0.0 => ClassKind::Crossing,
        _ if l_pos < 0.0 => ClassKind::Sliding,
        _ => ClassKind::Escaping,
    }
}

/// Classify a point of `curve` (which must satisfy `|h(p)| <= 1e-9`).
pub fn classify_point(sys: &FilippovSystem, curve_id: usize, p: Point) -> Result<PointClass, SigmaError> {
    classify_oriented(sys, curve_id, p, 1.0)
}

pub fn classify_oriented(sys: &FilippovSystem, curve_id: usize, p: Point, orientation: f64) -> Result<PointClass, SigmaError> {
    let curve = sys.curve(curve_id)?;
    let q = sys.domain.canonical(p);
    let h = curve.value(q)?;
    if h.abs() > SIGMA_BAND {
        return Err(ModelError::NotOnCurve { curve: curve_id, point: q, h }.into());
    }
    classify_unchecked(sys, curve, q, orientation)
}

pub(crate) fn classify_unchecked(
    sys: &FilippovSystem,
    curve: &SwitchingCurve,
    p: Point,
    orientation: f64,
) -> Result<PointClass, SigmaError> {
    let (l_pos, l_neg) = lie_pair(sys, curve, p, orientation)?;
    let mut kind = classify_lie(l_pos, l_neg);
    if matches!(kind, ClassKind::Sliding | ClassKind::Escaping) {
        let y1 = sys.side_field(curve, Side::Positive, p)?;
        let y2 = sys.side_field(curve, Side::Negative, p)?;
        let z = quotient_form(l_pos, l_neg, y1, y2, orientation);
        let scale = 1.0 + y1[0].hypot(y1[1]).max(y2[0].hypot(y2[1]));
        if z[0].hypot(z[1]) <= PSEUDO_EQ_TOL * scale {
            kind = ClassKind::PseudoEquilibrium;
        }
    }
    Ok(PointClass { kind, l_pos, l_neg })
}

fn quotient_form(l_pos: f64, l_neg: f64, y1: [f64; 2], y2: [f64; 2], orientation: f64) -> [f64; 2] {
    let d = l_neg - l_pos;
    let (a, b) = (orientation * y1[0], orientation * y1[1]);
    let (c, e) = (orientation * y2[0], orientation * y2[1]);
    [(l_neg * a - l_pos * c) / d, (l_neg * b - l_pos * e) / d]
}

/// Convex weight `λ = L- / (L- - L+)` of the positive-side field.
pub fn sliding_lambda(l_pos: f64, l_neg: f64) -> f64 {
    l_neg / (l_neg - l_pos)
}

/// Filippov sliding field `(L- Y+ - L+ Y-) / (L- - L+)`.
pub fn sliding_vector_field(sys: &FilippovSystem, curve_id: usize, p: Point) -> Result<[f64; 2], SigmaError> {
    sliding_field_oriented(sys, sys.curve(curve_id)?, sys.domain.canonical(p), 1.0)
}

pub(crate) fn sliding_field_oriented(
    sys: &FilippovSystem,
    curve: &SwitchingCurve,
    p: Point,
    orientation: f64,
) -> Result<[f64; 2], SigmaError> {
    let (l_pos, l_neg) = lie_pair(sys, curve, p, orientation)?;
    let crossing = l_pos * l_neg > 0.0 && l_pos.abs() > TANGENCY_TOL && l_neg.abs() > TANGENCY_TOL;
    if (l_neg - l_pos).abs() <= TANGENCY_TOL || crossing {
        return Err(SigmaError::UndefinedSliding { point: p, l_pos, l_neg });
    }
    let y1 = sys.side_field(curve, Side::Positive, p)?;
    let y2 = sys.side_field(curve, Side::Negative, p)?;
    Ok(quotient_form(l_pos, l_neg, y1, y2, orientation))
}

/// The same field written as `λ Y+ + (1 - λ) Y-`.
pub fn sliding_field_convex(sys: &FilippovSystem, curve_id: usize, p: Point) -> Result<([f64; 2], f64), SigmaError> {
    let curve = sys.curve(curve_id)?;
    let p = sys.domain.canonical(p);
    let (l_pos, l_neg) = lie_pair(sys, curve, p, 1.0)?;
    if (l_neg - l_pos).abs() <= TANGENCY_TOL {
        return Err(SigmaError::UndefinedSliding { point: p, l_pos, l_neg });
    }
    let lambda = sliding_lambda(l_pos, l_neg);
    let y1 = sys.side_field(curve, Side::Positive, p)?;
    let y2 = sys.side_field(curve, Side::Negative, p)?;
    Ok((
        [lambda * y1[0] + (1.0 - lambda) * y2[0], lambda * y1[1] + (1.0 - lambda) * y2[1]],
        lambda,
    ))
}

// ---------------------------------------------------------------------------
// Curve geometry
// ---------------------------------------------------------------------------

/// Unit tangent with the `h > 0` side on its left.
pub fn unit_tangent(curve: &SwitchingCurve, p: Point) -> Result<[f64; 2], EvalError> {
    let g = curve.gradient(p)?;
    let n = g[0].hypot(g[1]);
    Ok([g[1] / n, -g[0] / n])
}

/// Newton projection onto `h = 0` along the gradient.
pub fn project(sys: &FilippovSystem, curve: &SwitchingCurve, p: Point, iterations: usize) -> Result<Point, SigmaError> {
    let mut q = p;
    for _ in 0..iterations {
        let c = sys.domain.canonical(q);
        let h = curve.value(c)?;
        if h == 0.0 {
            break;
        }
        let g = curve.gradient(c)?;
        let g2 = g[0] * g[0] + g[1] * g[1];
        if g2.sqrt() < crate::system::MIN_GRADIENT {
            return Err(ModelError::IrregularCurve { curve: curve.id, point: c, norm: g2.sqrt() }.into());
        }
        let step = [h * g[0] / g2, h * g[1] / g2];
        q = [q[0] - step[0], q[1] - step[1]];
        if step[0].hypot(step[1]) < 1e-16 {
            break;
        }
    }
    Ok(sys.domain.canonical(q))
}

/// Point reached by moving `ds` along the curve from `p` (sign gives direction).
pub fn walk_along(sys: &FilippovSystem, curve: &SwitchingCurve, p: Point, ds: f64) -> Result<Point, SigmaError> {
    let t = unit_tangent(curve, p)?;
    project(sys, curve, [p[0] + ds * t[0], p[1] + ds * t[1]], 6)
}

/// One connected piece of a traced switching curve, in canonical coordinates.
#[derive(Debug, Clone)]
pub struct CurveComponent {
    pub points: Vec<Point>,
    pub closed: bool,
    pub length: f64,
}

fn find_seeds(sys: &FilippovSystem, curve: &SwitchingCurve, n: usize) -> Result<Vec<Point>, SigmaError> {
    let [x0, x1, y0, y1] = sys.domain.bounds;
    let node = |i: usize, j: usize| [x0 + (x1 - x0) * i as f64 / n as f64, y0 + (y1 - y0) * j as f64 / n as f64];
    let mut vals = vec![0.0; (n + 1) * (n + 1)];
    for i in 0..=n {
        for j in 0..=n {
            vals[i * (n + 1) + j] = curve.value(node(i, j))?;
        }
    }
    let mut seeds = Vec::new();
    let mut try_edge = |a: Point, ha: f64, b: Point, hb: f64| -> Result<(), SigmaError> {
        if ha == 0.0 {
            seeds.push(a);
        } else if ha * hb < 0.0 {
            let (mut lo, mut hi, mut hlo) = (a, b, ha);
            for _ in 0..60 {
                let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
                let hm = curve.value(mid)?;
                if hm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if hm * hlo < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    hlo = hm;
                }
            }
            seeds.push([0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])]);
        }
        Ok(())
    };
    for i in 0..=n {
        for j in 0..=n {
            let h = vals[i * (n + 1) + j];
            if i < n {
                try_edge(node(i, j), h, node(i + 1, j), vals[(i + 1) * (n + 1) + j])?;
            }
            if j < n {
                try_edge(node(i, j), h, node(i, j + 1), vals[i * (n + 1) + j + 1])?;
            }
        }
    }
    let mut out = Vec::with_capacity(seeds.len());
    for s in seeds {
        out.push(project(sys, curve, s, 20)?);
    }
    Ok(out)
}

/// Follow the curve from `start` in direction `dir` until it closes, leaves
/// the domain, or `max_steps` is reached.
fn trace_from(
    sys: &FilippovSystem,
    curve: &SwitchingCurve,
    start: Point,
    ds: f64,
    dir: f64,
    max_steps: usize,
) -> Result<(Vec<Point>, bool), SigmaError> {
    let mut pts = vec![start];
    let mut p = start;
    let mut travelled = 0.0;
    for _ in 0..max_steps {
        let t = unit_tangent(curve, p)?;
        let pred = [p[0] + dir * ds * t[0], p[1] + dir * ds * t[1]];
        // second-order predictor: average the tangent at the predicted point
        let t2 = unit_tangent(curve, sys.domain.canonical(pred))?;
        let tm = [t[0] + t2[0], t[1] + t2[1]];
        let nm = tm[0].hypot(tm[1]).max(1e-300);
        let raw = [p[0] + dir * ds * tm[0] / nm, p[1] + dir * ds * tm[1] / nm];
        if !sys.domain.contains(raw) {
            if let Some(b) = clip_to_domain(sys, curve, p, raw)? {
                pts.push(b);
            }
            return Ok((pts, false));
        }
        let q = project(sys, curve, raw, 8)?;
        if !sys.domain.contains(q) {
            if let Some(b) = clip_to_domain(sys, curve, p, q)? {
                pts.push(b);
            }
            return Ok((pts, false));
        }
        travelled += sys.domain.distance(p, q);
        if travelled > 2.5 * ds && sys.domain.distance(q, start) <= 1.01 * ds {
            return Ok((pts, true));
        }
        pts.push(q);
        p = q;
    }
    Ok((pts, false))
}

/// Last point of the chord `p -> q` inside the domain, if it still lies on the curve.
fn clip_to_domain(sys: &FilippovSystem, curve: &SwitchingCurve, p: Point, q: Point) -> Result<Option<Point>, SigmaError> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if sys.domain.contains([p[0] + mid * (q[0] - p[0]), p[1] + mid * (q[1] - p[1])]) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = [p[0] + lo * (q[0] - p[0]), p[1] + lo * (q[1] - p[1])];
    if lo <= 0.0 || sys.domain.distance(p, b) <= 1e-12 {
        return Ok(None);
    }
    let on = curve.value(b)?.abs() <= SIGMA_BAND;
    Ok(if on { Some(b) } else { None })
}

fn polyline_length(sys: &FilippovSystem, pts: &[Point], closed: bool) -> f64 {
    let mut l: f64 = pts.windows(2).map(|w| sys.domain.distance(w[0], w[1])).sum();
    if closed && pts.len() > 1 {
        l += sys.domain.distance(pts[pts.len() - 1], pts[0]);
    }
    l
}

fn trace_component(
    sys: &FilippovSystem,
    curve: &SwitchingCurve,
    seed: Point,
    ds: f64,
    max_steps: usize,
) -> Result<CurveComponent, SigmaError> {
    let (fwd, closed) = trace_from(sys, curve, seed, ds, 1.0, max_steps)?;
    let points = if closed {
        fwd
    } else {
        let (mut back, _) = trace_from(sys, curve, seed, ds, -1.0, max_steps)?;
        back.reverse();
        back.pop();
        back.extend(fwd);
        back
    };
    let length = polyline_length(sys, &points, closed);
    Ok(CurveComponent { points, closed, length })
}

/// Trace every connected component of `h = 0` with roughly `resolution`
/// steps per component.
pub fn trace_curve(sys: &FilippovSystem, curve_id: usize, resolution: usize) -> Result<Vec<CurveComponent>, SigmaError> {
    if resolution < 2 {
        return Err(SigmaError::Resolution(resolution));
    }
    let curve = sys.curve(curve_id)?;
    let seeds = find_seeds(sys, curve, 96)?;
    let coarse = sys.domain.diagonal() / 1024.0;
    let mut used = vec![false; seeds.len()];
    let mut out = Vec::new();
    for k in 0..seeds.len() {
        if used[k] {
            continue;
        }
        let rough = trace_component(sys, curve, seeds[k], coarse, 400_000)?;
        for (j, s) in seeds.iter().enumerate() {
            if !used[j] && rough.points.iter().any(|p| sys.domain.distance(*p, *s) <= 2.0 * coarse) {
                used[j] = true;
            }
        }
        used[k] = true;
        if rough.points.len() < 2 {
            continue;
        }
        let ds = (rough.length / resolution as f64).max(1e-9);
        let fine = trace_component(sys, curve, seeds[k], ds, 40 * resolution + 1000)?;
        if fine.points.len() >= 2 {
            out.push(fine);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Scans
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldVisibility {
    Visible,
    Invisible,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TangencyPoint {
    pub position: Point,
    pub curve: usize,
    pub side: TangentSide,
    /// Second Lie derivative `Y(Yh)` of the tangent field (positive side
    /// field when both are tangent).
    pub fold_indicator: f64,
    pub fold: FoldVisibility,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArcClass {
    Crossing,
    Sliding,
    Escaping,
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaArc {
    pub class: ArcClass,
    pub component: usize,
    pub start: Point,
    pub end: Point,
    pub length: f64,
    #[serde(skip)]
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaDecomposition {
    pub curve: usize,
    pub components: usize,
    pub arcs: Vec<SigmaArc>,
    pub tangencies: Vec<TangencyPoint>,
    pub pseudo_equilibria: Vec<Point>,
}

impl SigmaDecomposition {
    pub fn arcs_of(&self, class: ArcClass) -> impl Iterator<Item = &SigmaArc> {
        self.arcs.iter().filter(move |a| a.class == class)
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Point at parameter `s` on the chord from `a` to `b`, projected onto the curve.
fn chord_point(sys: &FilippovSystem, curve: &SwitchingCurve, a: Point, b: Point, s: f64) -> Result<Point, SigmaError> {
    let d = sys.domain.delta(a, b);
    project(sys, curve, [a[0] + s * d[0], a[1] + s * d[1]], 6)
}

/// Bisection for a sign change of `f` between chord endpoints `a`, `b`.
fn bisect_on_chord<F>(
    sys: &FilippovSystem,
    curve: &SwitchingCurve,
    a: Point,
    b: Point,
    fa: f64,
    f: &F,
) -> Result<Point, SigmaError>
where
    F: Fn(Point) -> Result<f64, SigmaError>,
{
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut flo = fa;
    let mut best = chord_point(sys, curve, a, b, 0.5)?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = chord_point(sys, curve, a, b, mid)?;
        let fm = f(p)?;
        best = p;
        if fm.abs() <= ROOT_TOL || hi - lo < 1e-17 {
            break;
        }
        if sign(fm) == sign(flo) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

struct Scan {
    tangencies: Vec<TangencyPoint>,
    arcs: Vec<SigmaArc>,
    pseudo: Vec<Point>,
}

fn push_unique(sys: &FilippovSystem, list: &mut Vec<Point>, p: Point) -> bool {
    if list.iter().any(|q| sys.domain.distance(*q, p) <= DEDUP_DIST) {
        return false;
    }
    list.push(p);
    true
}

fn tangency_at(sys: &FilippovSystem, curve: &SwitchingCurve, p: Point) -> Result<TangencyPoint, SigmaError> {
    let (lp, ln) = lie_pair(sys, curve, p, 1.0)?;
    let tp = lp.abs() <= ln.abs() || lp.abs() <= TANGENCY_TOL;
    let tn = ln.abs() < lp.abs() || ln.abs() <= TANGENCY_TOL;
    let side = match (tp && lp.abs() <= TANGENCY_TOL, tn && ln.abs() <= TANGENCY_TOL) {
        (true, true) => TangentSide::Both,
        _ if tp => TangentSide::Positive,
        _ => TangentSide::Negative,
    };
    let (fold_indicator, outward) = match side {
        TangentSide::Positive | TangentSide::Both => {
            let v = sys.side_second_lie(curve, Side::Positive, p)?;
            (v, v)
        }
        TangentSide::Negative => {
            let v = sys.side_second_lie(curve, Side::Negative, p)?;
            (v, -v)
        }
    };
    let fold = if outward.abs() <= TANGENCY_TOL {
        FoldVisibility::Degenerate
    } else if outward > 0.0 {
        FoldVisibility::Visible
    } else {
        FoldVisibility::Invisible
    };
    Ok(TangencyPoint { position: p, curve: curve.id, side, fold_indicator, fold })
}

fn arc_class(sys: &FilippovSystem, curve: &SwitchingCurve, pts: &[Point]) -> Result<ArcClass, SigmaError> {
    // majority over interior samples, robust against end points sitting on a tangency
    let mut counts = [0usize; 3];
    let inner: Vec<&Point> = if pts.len() > 2 { pts[1..pts.len() - 1].iter().collect() } else { pts.iter().collect() };
    for p in inner {
        let (lp, ln) = lie_pair(sys, curve, *p, 1.0)?;
        let k = if lp * ln > 0.0 {
            0
        } else if lp < 0.0 && ln > 0.0 {
            1
        } else if lp > 0.0 && ln < 0.0 {
            2
        } else {
            continue;
        };
        counts[k] += 1;
    }
    let best = (0..3).max_by_key(|&k| (counts[k], 3 - k)).unwrap_or(0);
    Ok([ArcClass::Crossing, ArcClass::Sliding, ArcClass::Escaping][best])
}

fn scan_component(
    sys: &FilippovSystem,
    curve: &SwitchingCurve,
    comp_index: usize,
    comp: &CurveComponent,
    want_pseudo: bool,
) -> Result<Scan, SigmaError> {
    let mut pts = comp.points.clone();
    if comp.closed {
        pts.push(pts[0]);
    }
    let lies: Vec<(f64, f64)> = pts.iter().map(|p| lie_pair(sys, curve, *p, 1.0)).collect::<Result<_, _>>()?;

    for which in 0..2 {
        let mut run = 0;
        for (k, l) in lies.iter().enumerate() {
            let v = if which == 0 { l.0 } else { l.1 };
            if v.abs() <= TANGENCY_TOL {
                run += 1;
                if run >= 3 {
                    return Err(SigmaError::NotIsolated { curve: curve.id, point: pts[k], what: "tangency" });
                }
            } else {
                run = 0;
            }
        }
    }

    // cut points: (index of sample before the root, root point)
    let mut cuts: Vec<(usize, Point)> = Vec::new();
    let mut roots: Vec<Point> = Vec::new();
    for k in 0..pts.len() - 1 {
        for which in 0..2 {
            let pick = |l: (f64, f64)| if which == 0 { l.0 } else { l.1 };
            let (fa, fb) = (pick(lies[k]), pick(lies[k + 1]));
            let root = if sign(fa) == 0 {
                if k == 0 && !comp.closed { Some(pts[0]) } else { None }
            } else if sign(fb) == 0 {
                Some(pts[k + 1])
            } else if sign(fa) != sign(fb) {
                let side = if which == 0 { Side::Positive } else { Side::Negative };
                let f = |p: Point| -> Result<f64, SigmaError> { Ok(sys.side_lie(curve, side, p)?) };
                Some(bisect_on_chord(sys, curve, pts[k], pts[k + 1], fa, &f)?)
            } else {
                None
            };
            if let Some(r) = root {
                if push_unique(sys, &mut roots, r) {
                    cuts.push((k, r));
                }
            }
        }
    }
    cuts.sort_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| {
            let da = sys.domain.distance(pts[a.0], a.1);
            let db = sys.domain.distance(pts[b.0], b.1);
            da.partial_cmp(&db).unwrap()
        })
    });
    let tangencies = roots
        .iter()
        .map(|r| tangency_at(sys, curve, *r))
        .collect::<Result<Vec<_>, _>>()?;

    // split the polyline at the cut points
    let mut pieces: Vec<Vec<Point>> = Vec::new();
    let mut current: Vec<Point> = vec![pts[0]];
    let mut ci = 0;
    for k in 0..pts.len() - 1 {
        while ci < cuts.len() && cuts[ci].0 == k {
            let r = cuts[ci].1;
            if sys.domain.distance(*current.last().unwrap(), r) > 0.0 {
                current.push(r);
            }
            if current.len() >= 2 {
                pieces.push(std::mem::take(&mut current));
            }
            current = vec![r];
            ci += 1;
        }
        if sys.domain.distance(*current.last().unwrap(), pts[k + 1]) > 0.0 {
            current.push(pts[k + 1]);
        }
    }
    if current.len() >= 2 {
        pieces.push(current);
    }
    let seam_cut = cuts.iter().any(|(_, r)| sys.domain.distance(*r, pts[0]) <= DEDUP_DIST);
    if comp.closed && pieces.len() > 1 && !seam_cut {
        // the seam is not a cut: join last and first pieces
        let first = pieces.remove(0);
        let last = pieces.last_mut().unwrap();
        last.extend(first.into_iter().skip(1));
    }

    let whole_loop = comp.closed && cuts.is_empty();
    let mut arcs = Vec::with_capacity(pieces.len());
    let mut pseudo = Vec::new();
    for piece in pieces {
        let class = arc_class(sys, curve, &piece)?;
        if want_pseudo && class != ArcClass::Crossing {
            scan_pseudo(sys, curve, &piece, whole_loop, &mut pseudo)?;
        }
        arcs.push(SigmaArc {
            class,
            component: comp_index,
            start: piece[0],
            end: *piece.last().unwrap(),
            length: polyline_length(sys, &piece, false),
            points: piece,
        });
    }
    Ok(Scan { tangencies, arcs, pseudo })
}

fn tangential_speed(sys: &FilippovSystem, curve: &SwitchingCurve, p: Point) -> Result<f64, SigmaError> {
    let z = sliding_field_oriented(sys, curve, p, 1.0)?;
    let t = unit_tangent(curve, p)?;
    Ok(z[0] * t[0] + z[1] * t[1])
}

fn scan_pseudo(
    sys: &FilippovSystem,
    curve: &SwitchingCurve,
    piece: &[Point],
    whole_loop: bool,
    out: &mut Vec<Point>,
) -> Result<(), SigmaError> {
    // end points of an arc are tangencies where the field may be undefined
    let inner = if whole_loop {
        piece
    } else if piece.len() > 2 {
        &piece[1..piece.len() - 1]
    } else {
        return Ok(());
    };
    let mut vals = Vec::with_capacity(inner.len());
    for p in inner {
        vals.push(tangential_speed(sys, curve, *p).unwrap_or(f64::NAN));
    }
    let mut run = 0;
    for (k, v) in vals.iter().enumerate() {
        if v.abs() <= TANGENCY_TOL {
            run += 1;
            if run >= 3 {
                return Err(SigmaError::NotIsolated { curve: curve.id, point: inner[k], what: "pseudo-equilibrium" });
            }
        } else {
            run = 0;
        }
    }
    for k in 0..vals.len().saturating_sub(1) {
        let (fa, fb) = (vals[k], vals[k + 1]);
        if !fa.is_finite() || !fb.is_finite() {
            continue;
        }
        let root = if sign(fb) == 0 {
            Some(inner[k + 1])
        } else if sign(fa) == 0 && k == 0 {
            Some(inner[0])
        } else if sign(fa) != 0 && sign(fa) != sign(fb) {
            let f = |p: Point| tangential_speed(sys, curve, p);
            Some(bisect_on_chord(sys, curve, inner[k], inner[k + 1], fa, &f)?)
        } else {
            None
        };
        if let Some(r) = root {
            push_unique(sys, out, r);
        }
    }
    Ok(())
}

fn scan(sys: &FilippovSystem, curve_id: usize, resolution: usize, want_pseudo: bool) -> Result<SigmaDecomposition, SigmaError> {
    let comps = trace_curve(sys, curve_id, resolution)?;
    let curve = sys.curve(curve_id)?;
    let mut out = SigmaDecomposition {
        curve: curve_id,
        components: comps.len(),
        arcs: Vec::new(),
        tangencies: Vec::new(),
        pseudo_equilibria: Vec::new(),
    };
    for (i, c) in comps.iter().enumerate() {
        let s = scan_component(sys, curve, i, c, want_pseudo)?;
        out.arcs.extend(s.arcs);
        for t in s.tangencies {
            if !out.tangencies.iter().any(|q| sys.domain.distance(q.position, t.position) <= DEDUP_DIST) {
                out.tangencies.push(t);
            }
        }
        for p in s.pseudo {
            push_unique(sys, &mut out.pseudo_equilibria, p);
        }
    }
    Ok(out)
}

/// Tangency points of the adjacent fields along `curve`.
pub fn find_tangency_points(sys: &FilippovSystem, curve_id: usize, resolution: usize) -> Result<Vec<TangencyPoint>, SigmaError> {
    Ok(scan(sys, curve_id, resolution, false)?.tangencies)
}

/// Zeros of the sliding field on sliding and escaping arcs.
pub fn find_pseudo_equilibria(sys: &FilippovSystem, curve_id: usize, resolution: usize) -> Result<Vec<Point>, SigmaError> {
    Ok(scan(sys, curve_id, resolution, true)?.pseudo_equilibria)
}

/// Partition of the curve into maximal arcs of constant class, separated by
/// tangency points.
pub fn sigma_decomposition(sys: &FilippovSystem, curve_id: usize, resolution: usize) -> Result<SigmaDecomposition, SigmaError> {
    scan(sys, curve_id, resolution, true)
}
