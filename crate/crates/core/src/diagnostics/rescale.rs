//! Time rescaling that freezes tangency points.

use super::DiagnosticsError;
use crate::sigma::find_tangency_points;
use crate::system::{FilippovSystem, SpeedFactor};

/// Multiply every field by `g(p) = prod_j min(1, |p - T_j|^2)` over all
/// tangency points `T_j`. Orbits keep their traces away from the `T_j`, which
/// become equilibria.
pub fn rescale_tangency_freeze(sys: &FilippovSystem, resolution: usize) -> Result<FilippovSystem, DiagnosticsError> {
    let mut zeros = Vec::new();
    for c in &sys.curves {
        zeros.extend(find_tangency_points(sys, c.id, resolution)?.into_iter().map(|t| t.position));
    }
    if zeros.is_empty() {
        return Ok(sys.clone());
    }
    Ok(sys.with_speed_factor(SpeedFactor { zeros }))
}
