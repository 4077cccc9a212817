//! Saturation, transitivity and sensitivity probes.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{disk_grid, policy_label, DiagnosticsConfig, Disk, COMPARE_STEP, REVALIDATE_TOL};
use crate::integrator::{
    enumerate_branches_with, integrate_filippov_with, BranchPolicy, Direction, EscapeDecision, IntegratorConfig, Orbit,
};
use crate::system::{Domain, FilippovSystem, Point, Side};

/// Hit flags on an `n x n` grid of cells over the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCoverage {
    pub resolution: usize,
    pub bounds: [f64; 4],
    hits: Vec<bool>,
}

impl GridCoverage {
    pub fn new(domain: &Domain, resolution: usize) -> Self {
        let n = resolution.max(1);
        GridCoverage { resolution: n, bounds: domain.bounds, hits: vec![false; n * n] }
    }

    fn cell(&self, p: Point) -> Option<usize> {
        let [x0, x1, y0, y1] = self.bounds;
        let n = self.resolution;
        let fx = (p[0] - x0) / (x1 - x0);
        let fy = (p[1] - y0) / (y1 - y0);
        if !(0.0..=1.0).contains(&fx) || !(0.0..=1.0).contains(&fy) {
            return None;
        }
        let i = ((fx * n as f64) as usize).min(n - 1);
        let j = ((fy * n as f64) as usize).min(n - 1);
        Some(j * n + i)
    }

    pub fn mark(&mut self, p: Point) {
        if let Some(k) = self.cell(p) {
            self.hits[k] = true;
        }
    }

    /// Mark every cell met by the chord `a -> b` (minimum image on the torus).
    pub fn mark_chord(&mut self, domain: &Domain, a: Point, b: Point) {
        let d = domain.delta(a, b);
        let cell = (self.bounds[1] - self.bounds[0]).min(self.bounds[3] - self.bounds[2]) / self.resolution as f64;
        let steps = (d[0].hypot(d[1]) / (0.25 * cell)).ceil() as usize + 1;
        for k in 0..=steps {
            let s = k as f64 / steps as f64;
            self.mark(domain.canonical([a[0] + s * d[0], a[1] + s * d[1]]));
        }
    }

    pub fn mark_orbit(&mut self, domain: &Domain, orbit: &Orbit) {
        let mut prev: Option<Point> = None;
        for (_, p, _) in orbit.samples() {
            match prev {
                Some(q) => self.mark_chord(domain, q, p),
                None => self.mark(p),
            }
            prev = Some(p);
        }
    }

    pub fn merge(&mut self, other: &GridCoverage) {
        for (a, b) in self.hits.iter_mut().zip(&other.hits) {
            *a |= *b;
        }
    }

    pub fn is_hit(&self, ix: usize, iy: usize) -> bool {
        self.hits[iy * self.resolution + ix]
    }

    pub fn hit_cells(&self) -> usize {
        self.hits.iter().filter(|h| **h).count()
    }

    pub fn total_cells(&self) -> usize {
        self.hits.len()
    }

    pub fn coverage(&self) -> f64 {
        self.hit_cells() as f64 / self.total_cells() as f64
    }

    /// Every cell hit here is also hit in `other`.
    pub fn is_subset_of(&self, other: &GridCoverage) -> bool {
        self.hits.iter().zip(&other.hits).all(|(a, b)| !*a || *b)
    }

    /// CSV with columns `ix,iy,x,y,hit`; `x, y` are cell centers.
    pub fn to_csv(&self) -> String {
        let n = self.resolution;
        let [x0, x1, y0, y1] = self.bounds;
        let mut out = String::from("ix,iy,x,y,hit\n");
        for iy in 0..n {
            for ix in 0..n {
                let x = x0 + (ix as f64 + 0.5) / n as f64 * (x1 - x0);
                let y = y0 + (iy as f64 + 0.5) / n as f64 * (y1 - y0);
                let _ = writeln!(out, "{ix},{iy},{x},{y},{}", u8::from(self.is_hit(ix, iy)));
            }
        }
        out
    }
}

/// Union of forward and backward orbits from every seed under every policy,
/// rasterized on a `resolution x resolution` grid.
pub fn saturate(
    sys: &FilippovSystem,
    cfg: &IntegratorConfig,
    seeds: &[Point],
    horizon: f64,
    policies: &[BranchPolicy],
    resolution: usize,
) -> GridCoverage {
    let jobs: Vec<(Point, &BranchPolicy, Direction)> = seeds
        .iter()
        .flat_map(|s| policies.iter().flat_map(move |p| [(*s, p, Direction::Forward), (*s, p, Direction::Backward)]))
        .collect();
    jobs.par_iter()
        .map(|(s, p, dir)| {
            let mut g = GridCoverage::new(&sys.domain, resolution);
            g.mark(sys.domain.canonical(*s));
            match integrate_filippov_with(sys, cfg, *s, horizon, *dir, p) {
                Ok(o) => g.mark_orbit(&sys.domain, &o),
                Err(e) => log::debug!("saturation seed ({}, {}) skipped: {e}", s[0], s[1]),
            }
            g
        })
        .reduce(
            || GridCoverage::new(&sys.domain, resolution),
            |mut a, b| {
                a.merge(&b);
                a
            },
        )
}

#[derive(Debug, Clone, Serialize)]
pub struct TransitivityHit {
    pub seed: Point,
    pub hit_time: f64,
    pub orbit: Orbit,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransitivityResult {
    pub u: Disk,
    pub v: Disk,
    pub found: Option<TransitivityHit>,
    pub seeds_tried: usize,
    pub orbits_explored: usize,
    /// Set when nothing was found: a negative result is only a statement
    /// about the budget.
    pub inconclusive: bool,
}

/// Search for an orbit from `u` that enters `v`. Seeds form a grid in `u`
/// (center first); each seed's fork tree is walked with `budget` leaves.
pub fn transitivity_probe(
    sys: &FilippovSystem,
    u: &Disk,
    v: &Disk,
    budget: usize,
    cfg: &DiagnosticsConfig,
) -> TransitivityResult {
    let mut explored = 0;
    let seeds = disk_grid(u, cfg.transitivity_seeds);
    for (k, s) in seeds.iter().enumerate() {
        let orbits = match enumerate_branches_with(
            sys,
            &cfg.integrator,
            *s,
            cfg.transitivity_horizon,
            Direction::Forward,
            budget,
            &cfg.dwell_grid,
        ) {
            Ok(o) => o,
            Err(e) => {
                log::debug!("transitivity seed ({}, {}) skipped: {e}", s[0], s[1]);
                continue;
            }
        };
        explored += orbits.len();
        let hit = orbits.into_iter().find_map(|o| v.first_entry(&sys.domain, &o).map(|t| (t, o)));
        if let Some((hit_time, orbit)) = hit {
            return TransitivityResult {
                u: *u,
                v: *v,
                found: Some(TransitivityHit { seed: *s, hit_time, orbit }),
                seeds_tried: k + 1,
                orbits_explored: explored,
                inconclusive: false,
            };
        }
    }
    TransitivityResult { u: *u, v: *v, found: None, seeds_tried: seeds.len(), orbits_explored: explored, inconclusive: true }
}

/// Positions at `0, dt, 2 dt, ...` up to the orbit's duration.
pub fn positions_on_grid(domain: &Domain, orbit: &Orbit, dt: f64) -> Vec<Point> {
    let mut out = Vec::new();
    let mut prev: Option<(f64, Point)> = None;
    let mut k = 0usize;
    for (t, p, _) in orbit.samples() {
        while k as f64 * dt <= t {
            let tk = k as f64 * dt;
            let q = match prev {
                Some((t0, p0)) if t > t0 => {
                    let d = domain.delta(p0, p);
                    let s = (tk - t0) / (t - t0);
                    domain.canonical([p0[0] + s * d[0], p0[1] + s * d[1]])
                }
                _ => p,
            };
            out.push(q);
            k += 1;
        }
        prev = Some((t, p));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyRecord {
    pub policy: BranchPolicy,
    pub label: String,
    pub script: Vec<EscapeDecision>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityWitness {
    pub x: Point,
    pub y: Point,
    pub policy_x: PolicyRecord,
    pub policy_y: PolicyRecord,
    pub time: f64,
    pub separation: f64,
    pub r: f64,
    /// Separation recomputed by replaying both recorded scripts.
    pub revalidated_separation: f64,
    pub revalidated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityResult {
    pub disk: Disk,
    pub r: f64,
    pub witness: Option<SensitivityWitness>,
    pub pairs_tried: usize,
    pub inconclusive: bool,
}

fn sensitivity_policies(cfg: &DiagnosticsConfig) -> Vec<BranchPolicy> {
    let max_dwell = cfg.dwell_grid.iter().cloned().fold(0.0, f64::max);
    vec![
        BranchPolicy::ExitImmediatelyUp,
        BranchPolicy::ExitImmediatelyDown,
        BranchPolicy::SlideUntilTangency,
        BranchPolicy::DwellThenExit { dwell: 0.5 * max_dwell, side: Side::Positive },
        BranchPolicy::Random { seed: cfg.seed, max_dwell: max_dwell.max(0.1) },
    ]
}

/// Candidate `(x, policy index, y, policy index)` in search order: the
/// center paired with itself under distinct policies, then random pairs.
fn sensitivity_candidates(disk: &Disk, n_policies: usize, budget: usize, seed: u64) -> Vec<(Point, usize, Point, usize)> {
    let mut out = Vec::new();
    for i in 0..n_policies {
        for j in i + 1..n_policies {
            out.push((disk.center, i, disk.center, j));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e45_1717);
    let point = |rng: &mut ChaCha8Rng| {
        let a = rng.gen::<f64>() * std::f64::consts::TAU;
        let r = 0.999 * disk.radius * rng.gen::<f64>().sqrt();
        [disk.center[0] + r * a.cos(), disk.center[1] + r * a.sin()]
    };
    while out.len() < budget {
        let x = point(&mut rng);
        let y = point(&mut rng);
        let i = rng.gen_range(0..n_policies);
        let j = rng.gen_range(0..n_policies);
        out.push((x, i, y, j));
    }
    out.truncate(budget);
    out
}

/// Endpoints of both policies integrated exactly to time `t`.
fn separation_at(
    sys: &FilippovSystem,
    cfg: &IntegratorConfig,
    x: Point,
    px: &BranchPolicy,
    y: Point,
    py: &BranchPolicy,
    t: f64,
) -> Option<(f64, Orbit, Orbit)> {
    let a = integrate_filippov_with(sys, cfg, x, t, Direction::Forward, px).ok()?;
    let b = integrate_filippov_with(sys, cfg, y, t, Direction::Forward, py).ok()?;
    if a.duration() < t - 1e-12 || b.duration() < t - 1e-12 {
        return None;
    }
    Some((sys.domain.distance(a.end_point(), b.end_point()), a, b))
}

/// Search the disk for two orbits (possibly from the same point under
/// different policies) that separate by more than `r`.
pub fn sensitivity_probe(
    sys: &FilippovSystem,
    disk: &Disk,
    r: f64,
    budget: usize,
    cfg: &DiagnosticsConfig,
) -> SensitivityResult {
    let policies = sensitivity_policies(cfg);
    let candidates = sensitivity_candidates(disk, policies.len(), budget.max(1), cfg.seed);
    let horizon = cfg.sensitivity_horizon;
    let icfg = &cfg.integrator;
    let evaluate = |(x, i, y, j): &(Point, usize, Point, usize)| -> Option<SensitivityWitness> {
        let a = integrate_filippov_with(sys, icfg, *x, horizon, Direction::Forward, &policies[*i]).ok()?;
        let b = integrate_filippov_with(sys, icfg, *y, horizon, Direction::Forward, &policies[*j]).ok()?;
        let pa = positions_on_grid(&sys.domain, &a, COMPARE_STEP);
        let pb = positions_on_grid(&sys.domain, &b, COMPARE_STEP);
        for (k, (p, q)) in pa.iter().zip(&pb).enumerate() {
            if sys.domain.distance(*p, *q) <= r {
                continue;
            }
            let t = k as f64 * COMPARE_STEP;
            let (d, oa, ob) = separation_at(sys, icfg, *x, &policies[*i], *y, &policies[*j], t)?;
            if d <= r {
                continue;
            }
            let replay = |o: &Orbit| BranchPolicy::Scripted { choices: o.script.clone(), then: None };
            let (d2, _, _) = separation_at(sys, icfg, *x, &replay(&oa), *y, &replay(&ob), t)?;
            return Some(SensitivityWitness {
                x: *x,
                y: *y,
                policy_x: PolicyRecord { policy: policies[*i].clone(), label: policy_label(&policies[*i]), script: oa.script },
                policy_y: PolicyRecord { policy: policies[*j].clone(), label: policy_label(&policies[*j]), script: ob.script },
                time: t,
                separation: d,
                r,
                revalidated_separation: d2,
                revalidated: d2 > r && (d2 - d).abs() <= REVALIDATE_TOL,
            });
        }
        None
    };
    // Evaluate in chunks so the first witness in candidate order wins.
    let mut tried = 0;
    for chunk in candidates.chunks(16) {
        let results: Vec<Option<SensitivityWitness>> = chunk.par_iter().map(evaluate).collect();
        for (k, w) in results.into_iter().enumerate() {
            if let Some(w) = w {
                return SensitivityResult { disk: *disk, r, witness: Some(w), pairs_tried: tried + k + 1, inconclusive: false };
            }
        }
        tried += chunk.len();
    }
    SensitivityResult { disk: *disk, r, witness: None, pairs_tried: tried, inconclusive: true }
}
