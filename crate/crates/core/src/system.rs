//! The piecewise-smooth system: domain, switching curves, regions and the
//! per-region vector fields, plus the geometric primitives built on them.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Params, PlanarField, ScalarField};

pub type Point = [f64; 2];

/// Half-width of the band treated as lying on a switching curve.
pub const SIGMA_BAND: f64 = 1e-9;
/// Smallest admissible gradient norm of a switching function on its zero set.
pub const MIN_GRADIENT: f64 = 1e-8;
/// Two curves closer than this (in |h|) at one sample are considered intersecting.
pub const DISJOINT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid domain bounds {0:?}")]
    InvalidDomain([f64; 4]),
    #[error("curve {curve} references unknown region {region}")]
    UnknownRegion { curve: usize, region: i64 },
    #[error("curve {0} has the same region on both sides")]
    SameSideRegions(usize),
    #[error("region {region} references unknown curve {curve}")]
    UnknownCurve { region: i64, curve: usize },
    #[error("duplicate id {0}")]
    DuplicateId(i64),
    #[error("curves {a} and {b} intersect near ({:.6}, {:.6})", point[0], point[1])]
    CurvesIntersect { a: usize, b: usize, point: Point },
    #[error("point ({:.6}, {:.6}) belongs to {count} regions", point[0], point[1])]
    AmbiguousMembership { point: Point, count: usize },
    #[error("region {0} is empty on the domain")]
    EmptyRegion(i64),
    #[error("curve {curve} has |grad h| = {norm:e} at ({:.6}, {:.6}); 0 is not a regular value", point[0], point[1])]
    IrregularCurve { curve: usize, point: Point, norm: f64 },
    #[error("point ({:.6}, {:.6}) left the domain", .0[0], .0[1])]
    LeftDomain(Point),
    #[error("point ({:.6}, {:.6}) is not on curve {curve} (h = {h:e})", point[0], point[1])]
    NotOnCurve { curve: usize, point: Point, h: f64 },
    #[error("no curve with id {0}")]
    NoSuchCurve(usize),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    PlaneRect,
    FlatTorus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub kind: DomainKind,
    /// `[x_min, x_max, y_min, y_max]`
    pub bounds: [f64; 4],
}

impl Domain {
    pub fn new(kind: DomainKind, bounds: [f64; 4]) -> Result<Self, ModelError> {
        let [x0, x1, y0, y1] = bounds;
        if !(bounds.iter().all(|v| v.is_finite()) && x1 > x0 && y1 > y0) {
            return Err(ModelError::InvalidDomain(bounds));
        }
        Ok(Domain { kind, bounds })
    }

    pub fn torus(bounds: [f64; 4]) -> Self {
        Domain::new(DomainKind::FlatTorus, bounds).expect("valid bounds")
    }

    pub fn plane(bounds: [f64; 4]) -> Self {
        Domain::new(DomainKind::PlaneRect, bounds).expect("valid bounds")
    }

    pub fn is_torus(&self) -> bool {
        self.kind == DomainKind::FlatTorus
    }

    pub fn width(&self) -> f64 {
        self.bounds[1] - self.bounds[0]
    }

    pub fn height(&self) -> f64 {
        self.bounds[3] - self.bounds[2]
    }

    /// Canonical coordinates: wrapped into the fundamental cell on the torus,
    /// unchanged on the plane.
    pub fn canonical(&self, p: Point) -> Point {
        if !self.is_torus() {
            return p;
        }
        let wrap = |v: f64, lo: f64, w: f64| {
            let mut r = (v - lo).rem_euclid(w);
            if r >= w {
                r = 0.0;
            }
            lo + r
        };
        [
            wrap(p[0], self.bounds[0], self.width()),
            wrap(p[1], self.bounds[2], self.height()),
        ]
    }

    pub fn contains(&self, p: Point) -> bool {
        if self.is_torus() {
            return p[0].is_finite() && p[1].is_finite();
        }
        let [x0, x1, y0, y1] = self.bounds;
        p[0] >= x0 && p[0] <= x1 && p[1] >= y0 && p[1] <= y1
    }

    /// Displacement `b - a`, using the shortest representative on the torus.
    pub fn delta(&self, a: Point, b: Point) -> [f64; 2] {
        let mut d = [b[0] - a[0], b[1] - a[1]];
        if self.is_torus() {
            let (w, h) = (self.width(), self.height());
            d[0] -= w * (d[0] / w).round();
            d[1] -= h * (d[1] / h).round();
        }
        d
    }

    pub fn distance(&self, a: Point, b: Point) -> f64 {
        let d = self.delta(a, b);
        d[0].hypot(d[1])
    }

    /// Largest distance between two points of the domain.
    pub fn diameter(&self) -> f64 {
        if self.is_torus() {
            (0.5 * self.width()).hypot(0.5 * self.height())
        } else {
            self.width().hypot(self.height())
        }
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }
}

/// The side of a switching curve: `Positive` is `h > 0`, `Negative` is `h < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Positive,
    Negative,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Positive => 1.0,
            Side::Negative => -1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Positive => Side::Negative,
            Side::Negative => Side::Positive,
        }
    }

    pub fn of(v: f64) -> Side {
        if v >= 0.0 {
            Side::Positive
        } else {
            Side::Negative
        }
    }
}

/// Lie derivative expressions of one adjacent field along a curve.
#[derive(Debug, Clone)]
pub(crate) struct LieData {
    pub first: ScalarField,
    pub first_grad: (ScalarField, ScalarField),
}

#[derive(Debug, Clone)]
pub struct SwitchingCurve {
    pub id: usize,
    pub h: ScalarField,
    pub grad_h: (ScalarField, ScalarField),
    pub positive_region: i64,
    pub negative_region: i64,
    pub(crate) lie: [Option<LieData>; 2],
}

impl SwitchingCurve {
    pub fn new(id: usize, h: ScalarField, positive_region: i64, negative_region: i64) -> Self {
        let grad_h = h.gradient();
        SwitchingCurve { id, h, grad_h, positive_region, negative_region, lie: [None, None] }
    }

    pub fn region_on(&self, side: Side) -> i64 {
        match side {
            Side::Positive => self.positive_region,
            Side::Negative => self.negative_region,
        }
    }

    pub fn value(&self, p: Point) -> Result<f64, EvalError> {
        self.h.eval(p[0], p[1])
    }

    pub fn gradient(&self, p: Point) -> Result<[f64; 2], EvalError> {
        Ok([self.grad_h.0.eval(p[0], p[1])?, self.grad_h.1.eval(p[0], p[1])?])
    }
}

#[derive(Debug, Clone)]
pub struct RegionSpec {
    pub id: i64,
    pub field: PlanarField,
    /// Conjunction of `(curve id, required side)` conditions.
    pub membership: Vec<(usize, Side)>,
}

/// Speed factor vanishing at a finite set of points:
/// `g(p) = prod_j min(1, |p - T_j|^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedFactor {
    pub zeros: Vec<Point>,
}

impl SpeedFactor {
    pub fn value(&self, domain: &Domain, p: Point) -> f64 {
        self.zeros.iter().fold(1.0, |acc, t| {
            let d = domain.delta(*t, p);
            acc * (d[0] * d[0] + d[1] * d[1]).min(1.0)
        })
    }
}

/// Result of locating a point relative to the switching manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Region(i64),
    OnSigma(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldValue {
    Vector([f64; 2]),
    SigmaPoint(usize),
}

/// A planar Filippov system. Immutable after construction.
#[derive(Debug, Clone)]
pub struct FilippovSystem {
    pub domain: Domain,
    pub curves: Vec<SwitchingCurve>,
    pub regions: Vec<RegionSpec>,
    pub params: Params,
    pub speed: Option<Arc<SpeedFactor>>,
    region_index: BTreeMap<i64, usize>,
    curve_index: BTreeMap<usize, usize>,
}

impl FilippovSystem {
    /// Build and validate a system. Validation samples a 256x256 grid plus
    /// 10^4 random points.
    pub fn new(
        domain: Domain,
        curves: Vec<SwitchingCurve>,
        regions: Vec<RegionSpec>,
        params: Params,
    ) -> Result<Self, ModelError> {
        let sys = Self::assemble(domain, curves, regions, params)?;
        sys.validate_by_sampling(256, 10_000)?;
        Ok(sys)
    }

    /// Build without the sampling checks (structural checks still run).
    pub fn new_unchecked(
        domain: Domain,
        curves: Vec<SwitchingCurve>,
        regions: Vec<RegionSpec>,
        params: Params,
    ) -> Result<Self, ModelError> {
        Self::assemble(domain, curves, regions, params)
    }

    fn assemble(
        domain: Domain,
        mut curves: Vec<SwitchingCurve>,
        regions: Vec<RegionSpec>,
        params: Params,
    ) -> Result<Self, ModelError> {
        let mut region_index = BTreeMap::new();
        for (i, r) in regions.iter().enumerate() {
            if region_index.insert(r.id, i).is_some() {
                return Err(ModelError::DuplicateId(r.id));
            }
        }
        let mut curve_index = BTreeMap::new();
        for (i, c) in curves.iter().enumerate() {
            if curve_index.insert(c.id, i).is_some() {
                return Err(ModelError::DuplicateId(c.id as i64));
            }
        }
        for c in curves.iter_mut() {
            for side in [Side::Positive, Side::Negative] {
                let rid = c.region_on(side);
                let Some(&ri) = region_index.get(&rid) else {
                    return Err(ModelError::UnknownRegion { curve: c.id, region: rid });
                };
                let first = regions[ri].field.lie(&c.h);
                let first_grad = first.gradient();
                c.lie[side_slot(side)] = Some(LieData { first, first_grad });
            }
            if c.positive_region == c.negative_region {
                return Err(ModelError::SameSideRegions(c.id));
            }
        }
        for r in &regions {
            for (cid, _) in &r.membership {
                if !curve_index.contains_key(cid) {
                    return Err(ModelError::UnknownCurve { region: r.id, curve: *cid });
                }
            }
        }
        Ok(FilippovSystem { domain, curves, regions, params, speed: None, region_index, curve_index })
    }

    /// Sampling checks: curves pairwise disjoint, regular value, every
    /// off-manifold point in exactly one region, every region nonempty.
    pub fn validate_by_sampling(&self, grid: usize, random: usize) -> Result<(), ModelError> {
        let [x0, x1, y0, y1] = self.domain.bounds;
        let n = self.curves.len();
        let node = |i: usize, j: usize| -> Point {
            [x0 + (x1 - x0) * i as f64 / grid as f64, y0 + (y1 - y0) * j as f64 / grid as f64]
        };
        // h at grid nodes, row-major over (i, j)
        let mut nodes = vec![0.0; (grid + 1) * (grid + 1) * n];
        for i in 0..=grid {
            for j in 0..=grid {
                let p = node(i, j);
                for (k, c) in self.curves.iter().enumerate() {
                    nodes[((i * (grid + 1)) + j) * n + k] = c.value(p)?;
                }
            }
        }
        let at = |i: usize, j: usize, k: usize| nodes[((i * (grid + 1)) + j) * n + k];
        let changes = |i: usize, j: usize, k: usize| {
            let v = [at(i, j, k), at(i + 1, j, k), at(i, j + 1, k), at(i + 1, j + 1, k)];
            v.iter().any(|h| *h >= 0.0) && v.iter().any(|h| *h < 0.0)
        };
        let cell = (x1 - x0).hypot(y1 - y0) / grid as f64;
        let mut near: Vec<Vec<Point>> = vec![Vec::new(); n];
        for i in 0..grid {
            for j in 0..grid {
                let centre = [x0 + (x1 - x0) * (i as f64 + 0.5) / grid as f64, y0 + (y1 - y0) * (j as f64 + 0.5) / grid as f64];
                let active: Vec<usize> = (0..n).filter(|&k| changes(i, j, k)).collect();
                for &k in &active {
                    if near[k].len() < 256 {
                        near[k].push(centre);
                    }
                }
                for (ai, &a) in active.iter().enumerate() {
                    for &b in &active[ai + 1..] {
                        if let Some(q) = self.common_zero(a, b, centre)? {
                            if self.domain.distance(q, centre) <= 2.0 * cell {
                                return Err(ModelError::CurvesIntersect { a: self.curves[a].id, b: self.curves[b].id, point: q });
                            }
                        }
                    }
                }
            }
        }

        let mut pts = Vec::with_capacity((grid + 1) * (grid + 1) + random);
        for i in 0..grid {
            for j in 0..grid {
                pts.push([x0 + (x1 - x0) * (i as f64 + 0.5) / grid as f64, y0 + (y1 - y0) * (j as f64 + 0.5) / grid as f64]);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f111);
        for _ in 0..random {
            pts.push([rng.gen_range(x0..x1), rng.gen_range(y0..y1)]);
        }
        let mut seen = vec![false; self.regions.len()];
        let mut hv = vec![0.0; n];
        for p in pts {
            for (k, c) in self.curves.iter().enumerate() {
                hv[k] = c.value(p)?;
                if hv[k].abs() < 1e-3 && near[k].len() < 512 {
                    near[k].push(p);
                }
            }
            if hv.iter().any(|h| h.abs() <= SIGMA_BAND) {
                continue;
            }
            let owners = self.owners(&hv);
            if owners.len() != 1 {
                return Err(ModelError::AmbiguousMembership { point: p, count: owners.len() });
            }
            seen[owners[0]] = true;
        }
        for (k, starts) in near.iter().enumerate() {
            for &p in starts {
                self.project_checked(k, p)?;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(ModelError::EmptyRegion(self.regions[i].id));
        }
        Ok(())
    }

    /// Newton projection onto curve `k` that fails if the gradient degenerates.
    fn project_checked(&self, k: usize, mut p: Point) -> Result<Point, ModelError> {
        let c = &self.curves[k];
        for _ in 0..80 {
            let h = c.value(p)?;
            let g = c.gradient(p)?;
            let g2 = g[0] * g[0] + g[1] * g[1];
            let norm = g2.sqrt();
            if norm < MIN_GRADIENT {
                return Err(ModelError::IrregularCurve { curve: c.id, point: p, norm });
            }
            if h.abs() / norm <= 1e-15 {
                break;
            }
            p = [p[0] - h * g[0] / g2, p[1] - h * g[1] / g2];
            if !p[0].is_finite() || !p[1].is_finite() {
                break;
            }
        }
        Ok(p)
    }

    /// Newton iteration for `h_a = h_b = 0` started at `p`.
    fn common_zero(&self, a: usize, b: usize, mut p: Point) -> Result<Option<Point>, ModelError> {
        let (ca, cb) = (&self.curves[a], &self.curves[b]);
        for _ in 0..40 {
            let (ha, hb) = (ca.value(p)?, cb.value(p)?);
            if ha.abs() < 1e-10 && hb.abs() < 1e-10 {
                return Ok(Some(p));
            }
            let (ga, gb) = (ca.gradient(p)?, cb.gradient(p)?);
            let det = ga[0] * gb[1] - ga[1] * gb[0];
            if det.abs() < 1e-300 {
                return Ok(None);
            }
            let dx = (ha * gb[1] - hb * ga[1]) / det;
            let dy = (ga[0] * hb - gb[0] * ha) / det;
            p = [p[0] - dx, p[1] - dy];
            if !p[0].is_finite() || !p[1].is_finite() {
                return Ok(None);
            }
        }
        Ok(None)
    }

    fn owners(&self, hv: &[f64]) -> Vec<usize> {
        self.regions
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                r.membership.iter().all(|(cid, side)| {
                    let h = hv[self.curve_index[cid]];
                    Side::of(h) == *side
                })
            })
            .map(|(i, _)| i)
            .collect()
    }

    pub fn curve(&self, id: usize) -> Result<&SwitchingCurve, ModelError> {
        self.curve_index.get(&id).map(|&i| &self.curves[i]).ok_or(ModelError::NoSuchCurve(id))
    }

    pub fn region(&self, id: i64) -> Option<&RegionSpec> {
        self.region_index.get(&id).map(|&i| &self.regions[i])
    }

    /// Copy of this system with every field multiplied by `factor`.
    pub fn with_speed_factor(&self, factor: SpeedFactor) -> FilippovSystem {
        let mut s = self.clone();
        s.speed = Some(Arc::new(factor));
        s
    }

    pub fn speed_at(&self, p: Point) -> f64 {
        self.speed.as_ref().map_or(1.0, |g| g.value(&self.domain, p))
    }

    /// Field of region `id` at `p` (no region check), scaled by the speed factor.
    pub fn region_field(&self, id: i64, p: Point) -> Result<[f64; 2], EvalError> {
        let r = &self.regions[self.region_index[&id]];
        let q = self.domain.canonical(p);
        let v = r.field.eval(q[0], q[1])?;
        let g = self.speed_at(q);
        Ok([g * v[0], g * v[1]])
    }

    pub fn region_of(&self, p: Point) -> Result<Location, ModelError> {
        if !self.domain.contains(p) {
            return Err(ModelError::LeftDomain(p));
        }
        let q = self.domain.canonical(p);
        let mut hv = Vec::with_capacity(self.curves.len());
        for c in &self.curves {
            let h = c.value(q)?;
            if h.abs() <= SIGMA_BAND {
                return Ok(Location::OnSigma(c.id));
            }
            hv.push(h);
        }
        let owners = self.owners(&hv);
        if owners.len() != 1 {
            return Err(ModelError::AmbiguousMembership { point: q, count: owners.len() });
        }
        Ok(Location::Region(self.regions[owners[0]].id))
    }

    pub fn field_at(&self, p: Point) -> Result<FieldValue, ModelError> {
        match self.region_of(p)? {
            Location::OnSigma(c) => Ok(FieldValue::SigmaPoint(c)),
            Location::Region(r) => Ok(FieldValue::Vector(self.region_field(r, p)?)),
        }
    }

    /// `∇h(p) · Y(p)` for the field of the region on `side` of `curve`,
    /// scaled by the speed factor.
    pub fn side_lie(&self, curve: &SwitchingCurve, side: Side, p: Point) -> Result<f64, EvalError> {
        let q = self.domain.canonical(p);
        let l = curve.lie[side_slot(side)].as_ref().expect("assembled").first.eval(q[0], q[1])?;
        Ok(self.speed_at(q) * l)
    }

    /// Second Lie derivative `Y(Yh)` of the unscaled side field.
    pub fn side_second_lie(&self, curve: &SwitchingCurve, side: Side, p: Point) -> Result<f64, EvalError> {
        let q = self.domain.canonical(p);
        let lie = curve.lie[side_slot(side)].as_ref().expect("assembled");
        let gx = lie.first_grad.0.eval(q[0], q[1])?;
        let gy = lie.first_grad.1.eval(q[0], q[1])?;
        let r = &self.regions[self.region_index[&curve.region_on(side)]];
        let v = r.field.eval(q[0], q[1])?;
        Ok(gx * v[0] + gy * v[1])
    }

    pub fn side_field(&self, curve: &SwitchingCurve, side: Side, p: Point) -> Result<[f64; 2], EvalError> {
        self.region_field(curve.region_on(side), p)
    }

    /// Which side of every curve a region lies on, if the region is
    /// adjacent to that curve.
    pub fn region_side(&self, curve: &SwitchingCurve, region: i64) -> Option<Side> {
        if curve.positive_region == region {
            Some(Side::Positive)
        } else if curve.negative_region == region {
            Some(Side::Negative)
        } else {
            None
        }
    }
}

pub(crate) fn side_slot(side: Side) -> usize {
    match side {
        Side::Positive => 0,
        Side::Negative => 1,
    }
}

/// `∇h(p) · Y(p)` for an arbitrary field, using the symbolic gradient of `h`.
pub fn lie_derivative(
    domain: &Domain,
    field: &PlanarField,
    curve: &SwitchingCurve,
    p: Point,
) -> Result<f64, EvalError> {
    let q = domain.canonical(p);
    let g = curve.gradient(q)?;
    let v = field.eval(q[0], q[1])?;
    Ok(g[0] * v[0] + g[1] * v[1])
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn plane() -> Domain {
        Domain::plane([-2.0, 2.0, -2.0, 2.0])
    }

    #[test]
    fn region_lookup_examples() {
        let sys = two_region(plane(), "y", ["1", "-1"], ["1", "1"], &[]);
        assert_eq!(sys.region_of([0.3, 0.5]).unwrap(), Location::Region(1));
        assert_eq!(sys.region_of([0.3, -0.5]).unwrap(), Location::Region(2));
        assert_eq!(sys.region_of([0.3, 0.0]).unwrap(), Location::OnSigma(0));
        assert_eq!(sys.region_of([0.3, -1e-12]).unwrap(), Location::OnSigma(0));
        assert!(matches!(sys.region_of([5.0, 0.0]), Err(ModelError::LeftDomain(_))));
    }

    #[test]
    fn lie_derivative_examples() {
        let params = params(&[]);
        let d = plane();
        let flat = SwitchingCurve::new(0, ScalarField::parse("y", params.clone()).unwrap(), 1, 2);
        let ab = PlanarField::parse("0.7", "-1.3", params.clone()).unwrap();
        assert_eq!(lie_derivative(&d, &ab, &flat, [0.4, 0.0]).unwrap(), -1.3);

        let circle = SwitchingCurve::new(0, ScalarField::parse("x^2 + y^2 - 1", params.clone()).unwrap(), 1, 2);
        let rot = PlanarField::parse("-y", "x", params.clone()).unwrap();
        assert_eq!(lie_derivative(&d, &rot, &circle, [1.0, 0.0]).unwrap(), 0.0);
        let ex = PlanarField::parse("1", "0", params).unwrap();
        assert_eq!(lie_derivative(&d, &ex, &circle, [1.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn field_lookup_examples() {
        let sys = two_region(plane(), "y", ["1", "-1"], ["1", "1"], &[]);
        assert_eq!(sys.field_at([0.0, 1.0]).unwrap(), FieldValue::Vector([1.0, -1.0]));
        assert_eq!(sys.field_at([0.0, 0.0]).unwrap(), FieldValue::SigmaPoint(0));
        assert!(matches!(sys.field_at([0.0, 3.0]), Err(ModelError::LeftDomain(_))));
    }

    #[test]
    fn torus_canonicalization_is_periodic() {
        let d = Domain::torus([0.0, 1.0, 0.0, 1.0]);
        let sys = two_region(d, "sin(tau*y)", ["1", "-1"], ["1", "1"], &[("tau", std::f64::consts::TAU)]);
        for &p in &[[0.375, 0.25], [0.75, 0.875], [0.125, 0.625]] {
            let shifted = [p[0] + 1.0, p[1] - 3.0];
            assert_eq!(sys.region_of(p).unwrap(), sys.region_of(shifted).unwrap());
            let c = &sys.curves[0];
            assert_eq!(
                sys.side_lie(c, Side::Positive, p).unwrap(),
                sys.side_lie(c, Side::Positive, d.canonical(shifted)).unwrap()
            );
        }
        assert_eq!(d.canonical([-1e-18, 1.0]), [0.0, 0.0]);
        assert!((d.distance([0.95, 0.5], [0.05, 0.5]) - 0.1).abs() < 1e-12);
        assert!((d.diameter() - 0.5f64.hypot(0.5)).abs() < 1e-15);
    }

    #[test]
    fn load_checks_reject_bad_models() {
        let params = params(&[]);
        let c0 = SwitchingCurve::new(0, ScalarField::parse("y", params.clone()).unwrap(), 1, 2);
        let c1 = SwitchingCurve::new(1, ScalarField::parse("x", params.clone()).unwrap(), 1, 2);
        let f = PlanarField::parse("1", "0", params.clone()).unwrap();
        let regions = vec![
            RegionSpec { id: 1, field: f.clone(), membership: vec![(0, Side::Positive)] },
            RegionSpec { id: 2, field: f.clone(), membership: vec![(0, Side::Negative)] },
        ];
        let err = FilippovSystem::new(plane(), vec![c0.clone(), c1], regions.clone(), params.clone()).unwrap_err();
        assert!(matches!(err, ModelError::CurvesIntersect { a: 0, b: 1, .. }), "{err}");

        let same = SwitchingCurve::new(0, ScalarField::parse("y", params.clone()).unwrap(), 1, 1);
        assert!(matches!(
            FilippovSystem::new(plane(), vec![same], regions.clone(), params.clone()),
            Err(ModelError::SameSideRegions(0))
        ));

        let overlapping = vec![
            RegionSpec { id: 1, field: f.clone(), membership: vec![] },
            RegionSpec { id: 2, field: f.clone(), membership: vec![(0, Side::Negative)] },
        ];
        assert!(matches!(
            FilippovSystem::new(plane(), vec![c0.clone()], overlapping, params.clone()),
            Err(ModelError::AmbiguousMembership { .. })
        ));

        let singular = SwitchingCurve::new(0, ScalarField::parse("y^2", params.clone()).unwrap(), 1, 2);
        let err = FilippovSystem::new(plane(), vec![singular], regions, params).unwrap_err();
        assert!(matches!(err, ModelError::IrregularCurve { .. }), "{err}");
    }
}
