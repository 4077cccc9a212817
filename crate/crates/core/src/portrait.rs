//! SVG phase portraits.
//!
//! Sliding arcs are drawn solid and thick, escaping arcs dashed and thick,
//! crossing arcs thin. Tangency points are open circles, pseudo-equilibria
//! filled dots. Orbits are thin paths. Every drawn item is one element whose
//! `class` names what it is; the legend uses `legend-*` classes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::integrator::{Orbit, SegmentKind};
use crate::sigma::{ArcClass, SigmaDecomposition};
use crate::system::{Domain, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortraitSpec {
    pub width: f64,
    pub height: f64,
    /// Space around the domain rectangle, in canvas units.
    pub margin: f64,
    pub title: String,
    pub draw_sigma: bool,
    pub draw_orbits: bool,
}

impl Default for PortraitSpec {
    fn default() -> Self {
        PortraitSpec { width: 600.0, height: 600.0, margin: 30.0, title: String::new(), draw_sigma: true, draw_orbits: true }
    }
}

#[derive(Debug, Clone)]
pub struct PortraitData<'a> {
    pub domain: Domain,
    pub decompositions: &'a [SigmaDecomposition],
    pub orbits: &'a [Orbit],
}

/// Affine map from the domain rectangle to the canvas (y axis flipped).
#[derive(Debug, Clone, Copy)]
pub struct CanvasMap {
    bounds: [f64; 4],
    origin: [f64; 2],
    size: [f64; 2],
}

impl CanvasMap {
    pub fn new(domain: &Domain, spec: &PortraitSpec) -> Self {
        CanvasMap {
            bounds: domain.bounds,
            origin: [spec.margin, spec.margin],
            size: [spec.width - 2.0 * spec.margin, spec.height - 2.0 * spec.margin],
        }
    }

    pub fn apply(&self, p: Point) -> [f64; 2] {
        let [x0, x1, y0, y1] = self.bounds;
        let u = (p[0] - x0) / (x1 - x0);
        let v = (p[1] - y0) / (y1 - y0);
        [self.origin[0] + u * self.size[0], self.origin[1] + (1.0 - v) * self.size[1]]
    }
}

fn num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Path data for a polyline, starting a new subpath wherever consecutive
/// points wrap around the torus.
fn path_data(domain: &Domain, map: &CanvasMap, points: &[Point]) -> String {
    let mut d = String::new();
    let mut prev: Option<Point> = None;
    for p in points {
        let q = map.apply(*p);
        let jump = prev.is_some_and(|a| {
            domain.is_torus() && ((p[0] - a[0]).abs() > 0.5 * domain.width() || (p[1] - a[1]).abs() > 0.5 * domain.height())
        });
        let cmd = if prev.is_none() || jump { 'M' } else { 'L' };
        if !d.is_empty() {
            d.push(' ');
        }
        let _ = write!(d, "{cmd}{},{}", num(q[0]), num(q[1]));
        prev = Some(*p);
    }
    d
}

fn arc_style(class: ArcClass) -> (&'static str, &'static str) {
    match class {
        ArcClass::Sliding => ("sigma-sliding", r##"stroke="#c0392b" stroke-width="4""##),
        ArcClass::Escaping => ("sigma-escaping", r##"stroke="#2471a3" stroke-width="4" stroke-dasharray="8 5""##),
        ArcClass::Crossing => ("sigma-crossing", r##"stroke="#555555" stroke-width="1""##),
    }
}

fn legend(out: &mut String, spec: &PortraitSpec) {
    let x = spec.margin;
    let y = spec.height - 0.35 * spec.margin;
    let items: [(&str, String); 5] = [
        ("sliding", format!(r##"<line class="legend-sliding" x1="0" y1="0" x2="20" y2="0" {}/>"##, arc_style(ArcClass::Sliding).1)),
        ("escaping", format!(r##"<line class="legend-escaping" x1="0" y1="0" x2="20" y2="0" {}/>"##, arc_style(ArcClass::Escaping).1)),
        ("crossing", format!(r##"<line class="legend-crossing" x1="0" y1="0" x2="20" y2="0" {}/>"##, arc_style(ArcClass::Crossing).1)),
        ("tangency", r##"<circle class="legend-tangency" cx="10" cy="0" r="4" fill="none" stroke="#000000" stroke-width="1.5"/>"##.into()),
        ("pseudo-equilibrium", r##"<circle class="legend-pseudo-equilibrium" cx="10" cy="0" r="3.5" fill="#000000"/>"##.into()),
    ];
    let _ = writeln!(out, r#"<g id="legend" font-family="sans-serif" font-size="10">"#);
    let step = (spec.width - 2.0 * spec.margin) / items.len() as f64;
    for (k, (label, mark)) in items.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<g transform="translate({},{})">{mark}<text x="24" y="3">{label}</text></g>"#,
            num(x + k as f64 * step),
            num(y)
        );
    }
    let _ = writeln!(out, "</g>");
}

/// Render a deterministic SVG 1.1 document.
pub fn render_portrait(spec: &PortraitSpec, data: &PortraitData) -> String {
    let map = CanvasMap::new(&data.domain, spec);
    let (w, h) = (num(spec.width), num(spec.height));
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(&spec.title));
    let _ = writeln!(out, r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>"##);
    let tl = map.apply([data.domain.bounds[0], data.domain.bounds[3]]);
    let br = map.apply([data.domain.bounds[1], data.domain.bounds[2]]);
    let _ = writeln!(
        out,
        r##"<rect class="domain" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#999999" stroke-width="0.5"/>"##,
        num(tl[0]),
        num(tl[1]),
        num(br[0] - tl[0]),
        num(br[1] - tl[1])
    );

    if spec.draw_orbits {
        let _ = writeln!(out, r#"<g id="orbits" fill="none">"#);
        for o in data.orbits {
            for s in &o.segments {
                let class = match s.kind {
                    SegmentKind::RegularArc { .. } => "orbit-regular",
                    SegmentKind::SlidingArc { .. } => "orbit-sliding",
                    _ => continue,
                };
                let pts: Vec<Point> = s.samples.iter().map(|(_, p)| *p).collect();
                if pts.len() < 2 {
                    continue;
                }
                let _ = writeln!(
                    out,
                    r##"<path class="{class}" d="{}" stroke="#2e8b57" stroke-width="1"/>"##,
                    path_data(&data.domain, &map, &pts)
                );
            }
        }
        let _ = writeln!(out, "</g>");
    }

    if spec.draw_sigma {
        let _ = writeln!(out, r#"<g id="sigma" fill="none">"#);
        for d in data.decompositions {
            for a in &d.arcs {
                let (class, style) = arc_style(a.class);
                let _ = writeln!(out, r#"<path class="{class}" d="{}" {style}/>"#, path_data(&data.domain, &map, &a.points));
            }
        }
        for d in data.decompositions {
            for t in &d.tangencies {
                let c = map.apply(t.position);
                let _ = writeln!(
                    out,
                    r##"<circle class="tangency" cx="{}" cy="{}" r="5" fill="none" stroke="#000000" stroke-width="1.5"/>"##,
                    num(c[0]),
                    num(c[1])
                );
            }
            for p in &d.pseudo_equilibria {
                let c = map.apply(*p);
                let _ = writeln!(out, r##"<circle class="pseudo-equilibrium" cx="{}" cy="{}" r="4" fill="#000000"/>"##, num(c[0]), num(c[1]));
            }
        }
        let _ = writeln!(out, "</g>");
    }

    legend(&mut out, spec);
    let _ = writeln!(out, "</svg>");
    out
}

/// Number of elements in `svg` with the given class.
pub fn count_class(svg: &str, class: &str) -> usize {
    svg.matches(&format!(r#"class="{class}""#)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::integrate_filippov;
    use crate::integrator::{BranchPolicy, Direction};
    use crate::sigma::sigma_decomposition;
    use crate::system::fixtures::{single_region, two_region};

    fn well_formed(svg: &str) -> roxmltree::Document<'_> {
        let doc = roxmltree::Document::parse(svg).expect("well-formed XML");
        let root = doc.root_element();
        assert_eq!(root.tag_name().name(), "svg");
        assert_eq!(root.tag_name().namespace(), Some("http://www.w3.org/2000/svg"));
        assert_eq!(root.attribute("version"), Some("1.1"));
        assert!(root.attribute("width").is_some() && root.attribute("height").is_some());
        doc
    }

    #[test]
    fn empty_data_draws_only_the_legend() {
        let spec = PortraitSpec::default();
        let data = PortraitData { domain: Domain::plane([0.0, 1.0, 0.0, 1.0]), decompositions: &[], orbits: &[] };
        let svg = render_portrait(&spec, &data);
        well_formed(&svg);
        assert_eq!(svg.matches("<path").count(), 0);
        assert_eq!(count_class(&svg, "tangency"), 0);
        assert_eq!(count_class(&svg, "legend-sliding"), 1);
        assert_eq!(count_class(&svg, "legend-pseudo-equilibrium"), 1);
    }

    #[test]
    fn one_regular_arc_maps_affinely() {
        let sys = single_region(Domain::plane([-1.0, 1.0, -2.0, 2.0]), ["1", "0"]);
        let o = integrate_filippov(&sys, [-0.5, 1.0], 1.0, Direction::Forward, &BranchPolicy::ExitImmediatelyUp).unwrap();
        let spec = PortraitSpec { width: 220.0, height: 420.0, margin: 10.0, ..PortraitSpec::default() };
        let data = PortraitData { domain: sys.domain, decompositions: &[], orbits: std::slice::from_ref(&o) };
        let svg = render_portrait(&spec, &data);
        let doc = well_formed(&svg);
        let paths: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("path")).collect();
        assert_eq!(paths.len(), 1);
        let d = paths[0].attribute("d").unwrap();
        // x: 10 + (x + 1) / 2 * 200; y: 10 + (1 - (y + 2) / 4) * 400
        assert!(d.starts_with("M60,110 "), "{d}");
        assert!(d.ends_with(" L160,110"), "{d}");
        assert_eq!(d.matches('M').count(), 1);
    }

    #[test]
    fn sliding_arc_and_tangency_counts() {
        // sliding on y = 0 for x < 0, tangency at the origin, crossing for x > 0
        let sys = two_region(Domain::plane([-1.0, 1.0, -1.0, 1.0]), "y", ["1", "x"], ["1", "1"], &[]);
        let d = sigma_decomposition(&sys, 0, 2000).unwrap();
        let data = PortraitData { domain: sys.domain, decompositions: std::slice::from_ref(&d), orbits: &[] };
        let svg = render_portrait(&PortraitSpec::default(), &data);
        well_formed(&svg);
        assert_eq!(count_class(&svg, "sigma-sliding"), 1);
        assert_eq!(count_class(&svg, "sigma-crossing"), 1);
        assert_eq!(count_class(&svg, "sigma-escaping"), 0);
        assert_eq!(count_class(&svg, "tangency"), 1);
        assert!(svg.contains(r#"class="sigma-sliding" d="#) && svg.contains(r#"stroke-width="4""#));
    }

    #[test]
    fn wrapped_paths_split_into_subpaths() {
        let dom = Domain::torus([0.0, 1.0, 0.0, 1.0]);
        let spec = PortraitSpec { width: 100.0, height: 100.0, margin: 0.0, ..PortraitSpec::default() };
        let d = path_data(&dom, &CanvasMap::new(&dom, &spec), &[[0.9, 0.5], [0.99, 0.5], [0.01, 0.5], [0.1, 0.5]]);
        assert_eq!(d, "M90,50 L99,50 M1,50 L10,50");
    }

    #[test]
    fn title_is_escaped() {
        let spec = PortraitSpec { title: "a<b & c".into(), ..PortraitSpec::default() };
        let data = PortraitData { domain: Domain::plane([0.0, 1.0, 0.0, 1.0]), decompositions: &[], orbits: &[] };
        let svg = render_portrait(&spec, &data);
        assert!(svg.contains("<title>a&lt;b &amp; c</title>"));
        well_formed(&svg);
    }
}
