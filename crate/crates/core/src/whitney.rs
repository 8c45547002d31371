//! Lowest-order Whitney forms on a triangle.
//!
//! Local numbering is 0-based: vertices 0, 1, 2 and edges
//! `0 = (0,1)`, `1 = (0,2)`, `2 = (1,2)`, each oriented from the lower to the
//! higher local vertex. Everything here is orientation-free with respect to
//! the global mesh; callers apply the local-to-global edge sign.

use crate::geom::Vec2;
use crate::mesh::{Bary, LOCAL_EDGES};

/// Whitney 0-form of local vertex `v`: `λ_v`.
pub fn eval_w0(lambda: &Bary, v: usize) -> f64 {
    lambda[v]
}

/// Vector proxy of the Whitney 1-form of local edge `(i, j)`:
/// `λᵢ∇λⱼ − λⱼ∇λᵢ` (m⁻¹).
pub fn eval_w1(gradients: &[Vec2; 3], lambda: &Bary, edge: usize) -> Vec2 {
    let [i, j] = LOCAL_EDGES[edge];
    gradients[j] * lambda[i] - gradients[i] * lambda[j]
}

/// Whitney 2-form of a triangle in 2-D: `1/A` on the face (m⁻²).
pub fn eval_w2(area: f64) -> f64 {
    1.0 / area
}

/// Exact line integral of the edge-`(i, j)` Whitney 1-form along the straight
/// segment from barycentric `start` to `end` inside one triangle:
/// `λᵢˢλⱼᶠ − λᵢᶠλⱼˢ`.
pub fn line_integral_w1(start: &Bary, end: &Bary, edge: usize) -> f64 {
    let [i, j] = LOCAL_EDGES[edge];
    start[i] * end[j] - end[i] * start[j]
}

/// [`line_integral_w1`] for all three local edges.
pub fn line_integrals_w1(start: &Bary, end: &Bary) -> [f64; 3] {
    [0, 1, 2].map(|e| line_integral_w1(start, end, e))
}
