mod common;

use std::collections::BTreeSet;

use common::{shipped, single_region, two_region};
use filippov_core::diagnostics::{
    decompose_all, saturate, sensitivity_probe, sigma_seeds, transitivity_probe, DiagnosticsConfig, Disk, Interpretation,
};
use filippov_core::integrator::{BranchPolicy, IntegratorConfig};
use filippov_core::Point;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn single_trace_marks_exactly_its_cells() {
    let s = single_region("plane_rect", [-1.0, 1.0, -1.0, 1.0], ["1", "0"]);
    let seed = [0.013, 0.03];
    let g = saturate(&s.system, &IntegratorConfig::default(), &[seed], 0.45, &[BranchPolicy::ExitImmediatelyUp], 20);
    // the trace is the segment x in [seed - 0.45, seed + 0.45] at fixed y
    let cell = |v: f64| ((v + 1.0) / 0.1).floor() as usize;
    let expected: BTreeSet<(usize, usize)> =
        (0..=9000).map(|k| (cell(seed[0] - 0.45 + 0.9 * k as f64 / 9000.0), cell(seed[1]))).collect();
    let mut got = BTreeSet::new();
    for ix in 0..20 {
        for iy in 0..20 {
            if g.is_hit(ix, iy) {
                got.insert((ix, iy));
            }
        }
    }
    assert_eq!(got, expected);
    assert!((g.coverage() - expected.len() as f64 / 400.0).abs() < 1e-15);
}

#[test]
fn belt_saturation_covers_the_torus() {
    let s = shipped("sliding_belt_torus");
    let cfg = &s.diagnostics;
    let d = decompose_all(&s.system, cfg.decomposition_resolution).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds = sigma_seeds(&s.system, &d, Interpretation::SlidingAndEscaping, cfg.saturation_seeds, &mut rng);
    let g = saturate(&s.system, &cfg.integrator, &seeds, 200.0, &cfg.saturation_policies, 32);
    assert!(g.coverage() >= 0.99, "coverage {}", g.coverage());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn saturation_is_monotone_in_the_seed_set(pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..6), k in 1usize..6) {
        let s = shipped("sliding_belt_torus");
        let b: Vec<Point> = pts.iter().map(|(x, y)| [*x, *y]).collect();
        let a = &b[..k.min(b.len() - 1)];
        let policies = [BranchPolicy::ExitImmediatelyUp, BranchPolicy::Random { seed: 3, max_dwell: 0.3 }];
        let ga = saturate(&s.system, &IntegratorConfig::default(), a, 5.0, &policies, 16);
        let gb = saturate(&s.system, &IntegratorConfig::default(), &b, 5.0, &policies, 16);
        prop_assert!(ga.is_subset_of(&gb));
        prop_assert!(ga.coverage() <= gb.coverage());
    }
}

#[test]
fn transitivity_along_one_regular_arc() {
    let s = single_region("plane_rect", [-1.0, 1.0, -1.0, 1.0], ["1", "0"]);
    let u = Disk::new([-0.5, 0.1], 0.05);
    let v = Disk::new([0.2, 0.1], 0.05);
    let r = transitivity_probe(&s.system, &u, &v, 10, &DiagnosticsConfig::default());
    let hit = r.found.expect("found");
    assert_eq!(r.seeds_tried, 1);
    assert_eq!(hit.seed, u.center);
    assert!((hit.hit_time - 0.65).abs() < 1e-9, "{}", hit.hit_time);
    assert!(u.first_entry(&s.system.domain, &hit.orbit).is_some());
    assert!(v.first_entry(&s.system.domain, &hit.orbit).is_some());
}

#[test]
fn rotation_annuli_are_not_connected() {
    let s = shipped("rotation_annuli");
    let u = Disk::new([0.3, 0.0], 0.05);
    let v = Disk::new([0.0, 0.8], 0.05);
    let r = transitivity_probe(&s.system, &u, &v, s.diagnostics.transitivity_budget, &s.diagnostics);
    assert!(r.found.is_none() && r.inconclusive);
    assert!(r.seeds_tried > 1);
}

#[test]
fn escaping_branches_separate_at_twice_the_time() {
    // escaping everywhere on y = 0, sliding field (1, 0)
    let s = two_region("plane_rect", [-2.0, 2.0, -2.0, 2.0], "y", ["1", "1"], ["1", "-1"]);
    let disk = Disk::new([0.0, 0.0], 0.01);
    let r = 0.1;
    let res = sensitivity_probe(&s.system, &disk, r, 20, &DiagnosticsConfig::default());
    let w = res.witness.expect("witness");
    assert_eq!(w.x, w.y);
    assert_ne!(w.policy_x.label, w.policy_y.label);
    assert!(w.separation > r && w.revalidated);
    // up goes to (t, t), down to (t, -t)
    assert!((w.separation - 2.0 * w.time).abs() < 1e-6, "{} vs {}", w.separation, w.time);
    assert!(w.separation < 2.0 * (0.5 * r + 0.011));
    assert!((w.revalidated_separation - w.separation).abs() <= 1e-6);
}

#[test]
fn escaping_equilibria_split_vertically() {
    // anti-parallel unit vertical fields: every point of y = 0 is an escaping pseudo-equilibrium
    let s = two_region("plane_rect", [-2.0, 2.0, -2.0, 2.0], "y", ["0", "1"], ["0", "-1"]);
    let disk = Disk::new([0.3, 0.0], 0.01);
    let res = sensitivity_probe(&s.system, &disk, 0.1, 20, &DiagnosticsConfig::default());
    let w = res.witness.expect("witness");
    assert!((w.separation - 2.0 * w.time).abs() < 1e-6);
    assert!(w.revalidated);
}

#[test]
fn rotation_is_not_sensitive() {
    let s = shipped("rotation_annuli");
    let disk = Disk::new([0.5, 0.0], 0.01);
    let res = sensitivity_probe(&s.system, &disk, 0.05, 60, &s.diagnostics);
    assert!(res.witness.is_none() && res.inconclusive);
    assert_eq!(res.pairs_tried, 60);
}
