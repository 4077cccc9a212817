//! Command dispatch for the `filippov` binary.
//!
//! Exit codes: 0 on success (and on a chaotic verdict), 1 when a diagnostic
//! comes out negative or inconclusive, 2 on any error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use filippov_core::diagnostics::{
    assemble_closed_orbits, build_segment_graph, chaos_report, decompose_all, random_disk, saturate, sigma_seeds, Verdict,
    WindowKind,
};
use filippov_core::integrator::{integrate_filippov_with, BranchPolicy, Direction, Orbit};
use filippov_core::portrait::{render_portrait, PortraitData, PortraitSpec};
use filippov_core::scenario::{load_scenario, Scenario};
use filippov_core::sigma::sigma_decomposition;
use filippov_core::{Point, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

/// Version of every JSON artifact written by the commands.
pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "filippov", version, about = "Simulate and probe planar Filippov systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum PolicyName {
    ExitImmediatelyUp,
    ExitImmediatelyDown,
    SlideUntilTangency,
    DwellThenExit,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    Up,
    Down,
}

#[derive(Debug, clap::Args)]
pub struct PolicyArgs {
    /// Branch policy at escaping encounters.
    #[arg(long, value_enum, default_value = "exit_immediately_up")]
    pub policy: PolicyName,
    /// Dwell time for `dwell_then_exit`.
    #[arg(long, default_value_t = 0.1)]
    pub dwell: f64,
    /// Exit side for `dwell_then_exit`.
    #[arg(long, value_enum, default_value = "up")]
    pub side: SideArg,
    /// Seed for the `random` policy.
    #[arg(long = "policy-seed", default_value_t = 0)]
    pub policy_seed: u64,
    /// Largest dwell drawn by the `random` policy.
    #[arg(long = "max-dwell", default_value_t = 0.5)]
    pub max_dwell: f64,
}

impl PolicyArgs {
    pub fn policy(&self) -> BranchPolicy {
        match self.policy {
            PolicyName::ExitImmediatelyUp => BranchPolicy::ExitImmediatelyUp,
            PolicyName::ExitImmediatelyDown => BranchPolicy::ExitImmediatelyDown,
            PolicyName::SlideUntilTangency => BranchPolicy::SlideUntilTangency,
            PolicyName::DwellThenExit => BranchPolicy::DwellThenExit {
                dwell: self.dwell,
                side: if self.side == SideArg::Up { Side::Positive } else { Side::Negative },
            },
            PolicyName::Random => BranchPolicy::Random { seed: self.policy_seed, max_dwell: self.max_dwell },
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose a switching curve into crossing, sliding and escaping arcs.
    Classify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        curve: usize,
        #[arg(long, default_value_t = 2000)]
        resolution: usize,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate one Filippov orbit.
    Orbit {
        #[arg(long)]
        scenario: PathBuf,
        /// Initial point `x,y`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        start: Point,
        #[arg(long)]
        horizon: f64,
        #[arg(long, value_enum, default_value = "forward")]
        direction: DirectionArg,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Sample trace as CSV (`t,x,y,segment_kind,segment_index`).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Segment summary as JSON (stdout when omitted).
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Draw the switching manifold and optional orbits as SVG.
    Portrait {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Orbit starting points `x,y` (repeatable).
        #[arg(long = "start", value_parser = parse_point, allow_hyphen_values = true)]
        starts: Vec<Point>,
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = 2000)]
        resolution: usize,
        #[arg(long, default_value_t = 600.0)]
        width: f64,
        #[arg(long, default_value_t = 600.0)]
        height: f64,
    },
    /// Grid coverage of the saturation of the sliding/escaping set.
    Saturate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Number of seeds on the sliding/escaping arcs.
        #[arg(long)]
        seeds: Option<usize>,
        /// Explicit seed points `x,y` (repeatable); replaces the arc seeds.
        #[arg(long = "start", value_parser = parse_point, allow_hyphen_values = true)]
        starts: Vec<Point>,
        #[arg(long)]
        resolution: Option<usize>,
        /// Coverage grid as CSV (`ix,iy,x,y,hit`).
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full chaos report.
    Diagnose {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed orbits through the base anchor, one per random window.
    Cycles {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of random windows; 0 asks for the quickest cycle.
        #[arg(long)]
        windows: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Segment graph in DOT format.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
}

pub fn parse_point(s: &str) -> Result<Point, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("expected `x,y`, got `{s}`"));
    }
    let x = parts[0].parse::<f64>().map_err(|e| format!("bad x in `{s}`: {e}"))?;
    let y = parts[1].parse::<f64>().map_err(|e| format!("bad y in `{s}`: {e}"))?;
    if !(x.is_finite() && y.is_finite()) {
        return Err(format!("non-finite point `{s}`"));
    }
    Ok([x, y])
}

fn load(path: &Path) -> Result<Scenario> {
    let s = load_scenario(path).with_context(|| format!("loading scenario {}", path.display()))?;
    log::info!("loaded scenario `{}` from {}", s.name, path.display());
    Ok(s)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Write `value` as pretty JSON to `path`, or to `stdout` when absent.
fn emit_json(value: &serde_json::Value, path: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => write_file(p, &text),
        None => stdout.write_all(text.as_bytes()).context("writing stdout"),
    }
}

fn integrate(s: &Scenario, start: Point, horizon: f64, dir: Direction, policy: &BranchPolicy) -> Result<Orbit> {
    integrate_filippov_with(&s.system, &s.diagnostics.integrator, start, horizon, dir, policy)
        .with_context(|| format!("integrating from ({}, {})", start[0], start[1]))
}

/// Run a parsed command; returns the exit code.
pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Classify { scenario, curve, resolution, out } => {
            let s = load(&scenario)?;
            let d = sigma_decomposition(&s.system, curve, resolution)?;
            let v = json!({
                "schema_version": ARTIFACT_SCHEMA_VERSION,
                "scenario": s.name,
                "resolution": resolution,
                "decomposition": d,
            });
            emit_json(&v, out.as_deref(), stdout)?;
            Ok(0)
        }
        Command::Orbit { scenario, start, horizon, direction, policy, csv, json } => {
            let s = load(&scenario)?;
            let dir = if direction == DirectionArg::Forward { Direction::Forward } else { Direction::Backward };
            let o = integrate(&s, start, horizon, dir, &policy.policy())?;
            if let Some(p) = &csv {
                write_file(p, &o.to_csv())?;
            }
            emit_json(&o.summary_json(), json.as_deref(), stdout)?;
            Ok(0)
        }
        Command::Portrait { scenario, out, starts, horizon, policy, resolution, width, height } => {
            let s = load(&scenario)?;
            let decomps = decompose_all(&s.system, resolution)?;
            let orbits = starts
                .iter()
                .map(|p| integrate(&s, *p, horizon, Direction::Forward, &policy.policy()))
                .collect::<Result<Vec<_>>>()?;
            let spec = PortraitSpec { width, height, title: s.name.clone(), ..PortraitSpec::default() };
            let data = PortraitData { domain: s.system.domain, decompositions: &decomps, orbits: &orbits };
            write_file(&out, &render_portrait(&spec, &data))?;
            Ok(0)
        }
        Command::Saturate { scenario, seed, horizon, seeds, starts, resolution, csv, out } => {
            let s = load(&scenario)?;
            let cfg = &s.diagnostics;
            let seed = seed.unwrap_or(cfg.seed);
            let horizon = horizon.unwrap_or(cfg.saturation_horizon);
            let resolution = resolution.unwrap_or(cfg.grid_resolution);
            let seed_points = if starts.is_empty() {
                let decomps = decompose_all(&s.system, cfg.decomposition_resolution)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                sigma_seeds(&s.system, &decomps, cfg.interpretation, seeds.unwrap_or(cfg.saturation_seeds), &mut rng)
            } else {
                starts
            };
            if seed_points.is_empty() {
                bail!("no seed points: the scenario has no sliding or escaping arcs; pass --start");
            }
            let g = saturate(&s.system, &cfg.integrator, &seed_points, horizon, &cfg.saturation_policies, resolution);
            if let Some(p) = &csv {
                write_file(p, &g.to_csv())?;
            }
            let passed = g.coverage() >= cfg.density_threshold;
            let v = json!({
                "schema_version": ARTIFACT_SCHEMA_VERSION,
                "scenario": s.name,
                "seed": seed,
                "seeds": seed_points,
                "horizon": horizon,
                "resolution": resolution,
                "hit_cells": g.hit_cells(),
                "total_cells": g.total_cells(),
                "coverage": g.coverage(),
                "threshold": cfg.density_threshold,
                "passed": passed,
            });
            emit_json(&v, out.as_deref(), stdout)?;
            Ok(if passed { 0 } else { 1 })
        }
        Command::Diagnose { scenario, seed, out } => {
            let s = load(&scenario)?;
            let mut cfg = s.diagnostics.clone();
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let r = chaos_report(&s.system, &s.name, &cfg)?;
            emit_json(&serde_json::to_value(&r)?, out.as_deref(), stdout)?;
            Ok(if r.verdict == Verdict::Chaotic { 0 } else { 1 })
        }
        Command::Cycles { scenario, seed, windows, out, dot } => {
            let s = load(&scenario)?;
            let mut cfg = s.diagnostics.clone();
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let n = windows.unwrap_or(cfg.windows);
            let decomps = decompose_all(&s.system, cfg.decomposition_resolution)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let disks: Vec<_> =
                (0..n).map(|_| (WindowKind::Random, random_disk(&s.system.domain, cfg.window_radius, &mut rng))).collect();
            let graph = build_segment_graph(&s.system, &decomps, &disks, &cfg)?;
            if let Some(p) = &dot {
                write_file(p, &graph.to_dot())?;
            }
            let window_ids: Vec<usize> = graph.nodes.iter().filter(|n| !n.is_point()).map(|n| n.id).collect();
            let records = match graph.base {
                Some(b) => assemble_closed_orbits(&s.system, &graph, b, &window_ids, &cfg),
                None => Vec::new(),
            };
            let complete = if n == 0 { !records.is_empty() } else { records.len() == window_ids.len() };
            let v = json!({
                "schema_version": ARTIFACT_SCHEMA_VERSION,
                "scenario": s.name,
                "seed": cfg.seed,
                "hypothesis_absent": graph.hypothesis_absent,
                "base": graph.base,
                "nodes": graph.nodes,
                "edges": graph.edges.len(),
                "windows": disks.iter().map(|(_, d)| d).collect::<Vec<_>>(),
                "cycles": records.iter().map(|r| json!({
                    "window": r.window,
                    "period": r.period,
                    "gap": r.gap,
                    "windows_visited": r.windows_visited,
                    "edges": r.edges,
                    "script": r.script,
                })).collect::<Vec<_>>(),
                "complete": complete,
            });
            emit_json(&v, out.as_deref(), stdout)?;
            Ok(if complete { 0 } else { 1 })
        }
    }
}

/// Parse `argv` (without the program name), run, and return the exit code.
/// Errors are reported on stderr.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_command_with(argv, &mut std::io::stdout())
}

pub fn run_command_with<I, T>(argv: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = std::iter::once(std::ffi::OsString::from("filippov")).chain(argv.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            2
        }
    }
}

/// `a: b: c` for an error chain, skipping causes already quoted by the
/// message above them.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !prev.is_empty() && prev.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
        prev = msg;
    }
    out
}
