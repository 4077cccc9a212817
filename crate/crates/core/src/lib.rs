//! Simulation and analysis of planar Filippov systems.
//!
//! The crate is organised bottom-up:
//!
//! - [`expr`]: expression parsing, evaluation and symbolic derivatives.
//! - [`system`]: domain, switching curves, regions and the piecewise field.
//! - [`sigma`]: classification of switching-curve points, the sliding
//!   vector field, tangencies and pseudo-equilibria.
//! - [`ode`]: Dormand–Prince stepping with dense output.
//! - [`integrator`]: event-driven Filippov orbits with explicit branch policies.
//! - [`diagnostics`]: saturation, transitivity, sensitivity, closed-orbit
//!   assembly and the tangency-freezing rescaled system.
//! - [`scenario`] and [`portrait`]: scenario files and SVG output.

pub mod diagnostics;
pub mod expr;
pub mod integrator;
pub mod ode;
pub mod portrait;
pub mod scenario;
pub mod sigma;
pub mod system;

pub use expr::{parse_expression, Expr, ExprError, PlanarField, ScalarField};
pub use system::{Domain, DomainKind, FilippovSystem, Point, Side};
