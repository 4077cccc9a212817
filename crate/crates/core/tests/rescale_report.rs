mod common;

use common::{shipped, two_region};
use filippov_core::diagnostics::{chaos_report, rescale_tangency_freeze, Verdict};
use filippov_core::integrator::{integrate_filippov_with, BranchPolicy, Direction, IntegratorConfig};
use filippov_core::sigma::find_tangency_points;
use filippov_core::system::Location;
use filippov_core::{FilippovSystem, Point};
use proptest::prelude::*;

/// Region 1 field `(1, x)` is tangent to `y = 0` only at the origin.
fn fold_at_origin() -> FilippovSystem {
    two_region("plane_rect", [-2.0, 2.0, -2.0, 2.0], "y", ["1", "x"], ["1", "1"]).system
}

/// Raw integrator samples with steps of at most `h_max`.
fn trace(sys: &FilippovSystem, start: Point, horizon: f64, h_max: f64) -> Vec<Point> {
    let cfg = IntegratorConfig { h_max, ..IntegratorConfig::default() };
    let o = integrate_filippov_with(sys, &cfg, start, horizon, Direction::Forward, &BranchPolicy::ExitImmediatelyUp).unwrap();
    o.samples().map(|(_, p, _)| p).collect()
}

fn point_to_polyline(p: Point, line: &[Point]) -> f64 {
    line.windows(2)
        .map(|w| {
            let d = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
            let v = [p[0] - w[0][0], p[1] - w[0][1]];
            let dd = d[0] * d[0] + d[1] * d[1];
            let s = if dd > 0.0 { ((v[0] * d[0] + v[1] * d[1]) / dd).clamp(0.0, 1.0) } else { 0.0 };
            (v[0] - s * d[0]).hypot(v[1] - s * d[1])
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn single_tangency_is_frozen() {
    let sys = fold_at_origin();
    let t = find_tangency_points(&sys, 0, 2000).unwrap();
    assert_eq!(t.len(), 1);
    assert!(t[0].position[0].abs() < 1e-9);
    let g = rescale_tangency_freeze(&sys, 2000).unwrap();
    assert_eq!(g.speed_at(t[0].position), 0.0);
    for id in [1, 2] {
        let v = g.region_field(id, t[0].position).unwrap();
        assert!(v[0].hypot(v[1]) <= 1e-12);
    }
}

#[test]
fn no_tangency_means_no_change() {
    let s = shipped("rotation_annuli");
    let g = rescale_tangency_freeze(&s.system, 2000).unwrap();
    assert!(g.speed.is_none());
    for p in [[0.3, -0.2], [0.0, 0.9], [-0.7, 0.1]] {
        assert_eq!(g.region_field(1, p).unwrap(), s.system.region_field(1, p).unwrap());
    }
}

#[test]
fn regular_traces_keep_their_point_set() {
    let sys = fold_at_origin();
    let g = rescale_tangency_freeze(&sys, 2000).unwrap();
    let start = [0.5, 0.5];
    let a = trace(&sys, start, 1.0, 1e-3);
    let x_end = a.last().unwrap()[0];
    let b: Vec<Point> = trace(&g, start, 4.0, 1e-3).into_iter().take_while(|p| p[0] <= x_end).collect();
    assert!(b.last().unwrap()[0] > x_end - 1e-2);
    // integral curve of (1, x): y = y0 + (x^2 - x0^2) / 2
    for p in a.iter().chain(&b) {
        assert!((p[1] - (0.5 + 0.5 * (p[0] * p[0] - 0.25))).abs() <= 1e-8);
    }
    let h_ab = a.iter().map(|p| point_to_polyline(*p, &b)).fold(0.0, f64::max);
    let h_ba = b.iter().map(|p| point_to_polyline(*p, &a)).fold(0.0, f64::max);
    // the clipped tail of a is within one rescaled step of b's end
    assert!(h_ba <= 1e-6, "{h_ba}");
    assert!(h_ab <= 1e-2, "{h_ab}");
    let inner: Vec<&Point> = a.iter().filter(|p| p[0] <= b.last().unwrap()[0]).collect();
    let h_inner = inner.iter().map(|p| point_to_polyline(**p, &b)).fold(0.0, f64::max);
    assert!(h_inner <= 1e-6, "{h_inner}");
}

#[test]
fn chaotic_tangencies_become_equilibria() {
    let s = shipped("chaotic_torus");
    let g = rescale_tangency_freeze(&s.system, 2000).unwrap();
    let t = find_tangency_points(&s.system, 0, 2000).unwrap();
    assert_eq!(t.len(), 4);
    for tp in &t {
        for id in [1, 2] {
            let v = g.region_field(id, tp.position).unwrap();
            assert!(v[0].hypot(v[1]) <= 1e-12, "{:?}", tp.position);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn rescaled_directions_are_parallel(x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let s = shipped("chaotic_torus");
        let g = rescale_tangency_freeze(&s.system, 400).unwrap();
        let t = find_tangency_points(&s.system, 0, 400).unwrap();
        let p = [x, y];
        prop_assume!(t.iter().all(|tp| s.system.domain.distance(tp.position, p) > 0.1));
        let Ok(Location::Region(id)) = s.system.region_of(p) else { return Ok(()); };
        let v = s.system.region_field(id, p).unwrap();
        let w = g.region_field(id, p).unwrap();
        let dot = v[0] * w[0] + v[1] * w[1];
        let cross = v[0] * w[1] - v[1] * w[0];
        prop_assert!(dot > 0.0);
        prop_assert!(cross.atan2(dot).abs() <= 1e-9);
    }
}

#[test]
fn rotation_report_is_not_chaotic() {
    let s = shipped("rotation_annuli");
    let r = chaos_report(&s.system, &s.name, &s.diagnostics).unwrap();
    assert_eq!(r.verdict, Verdict::NotChaotic);
    assert!(!r.hypothesis.present);
    assert!(r.hypothesis.note.contains("hypothesis absent"));
    assert!(r.saturation.is_none() && r.periodic.is_none());
    // transitivity and sensitivity still run
    assert_eq!(r.transitivity.total, s.diagnostics.transitivity_pairs);
    assert!(r.transitivity.found < r.transitivity.total);
    assert_eq!(r.transitivity.label.as_deref(), Some("inconclusive at budget"));
    assert!(r.sensitivity.witness.is_none());
    assert!(r.failed.contains(&"hypothesis".to_string()));
}

#[test]
fn report_json_is_reproducible() {
    let s = shipped("rotation_annuli");
    let a = serde_json::to_string(&chaos_report(&s.system, &s.name, &s.diagnostics).unwrap()).unwrap();
    let b = serde_json::to_string(&chaos_report(&s.system, &s.name, &s.diagnostics).unwrap()).unwrap();
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["verdict"], "not_chaotic");
}
