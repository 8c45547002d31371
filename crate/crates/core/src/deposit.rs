//! Gather (edge/face DoFs to particle) and scatter (particle to vertex charge
//! and edge current), with straight displacements split at face boundaries.
//!
//! Scatter is charge conserving by construction: along each sub-segment the
//! edge currents of a face telescope to the change of the nodal charges, and
//! consecutive sub-segments share the exact same barycentric boundary point.

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::mesh::{Bary, Mesh, OPPOSITE_EDGE};
use crate::whitney::{eval_w1, line_integrals_w1};

/// `Σ eᵢ W¹ᵢ` over the three edges of `face`, with global signs (V/m).
pub fn gather_e(mesh: &Mesh, e: &[f64], face: usize, lambda: &Bary) -> Vec2 {
    let g = mesh.gradients(face);
    let mut out = Vec2::ZERO;
    for (k, fe) in mesh.face_edges(face).iter().enumerate() {
        out += eval_w1(g, lambda, k) * (f64::from(fe.sign) * e[fe.edge]);
    }
    out
}

/// `B_z = b_f / A_f` (Wb/m²).
pub fn gather_b(mesh: &Mesh, b: &[f64], face: usize) -> f64 {
    b[face] / mesh.area(face)
}

/// One piece of a displacement lying inside a single face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubSegment {
    pub face: usize,
    pub start: Bary,
    pub end: Bary,
}

/// A straight displacement cut into per-face pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentChain {
    pub segments: Vec<SubSegment>,
    /// Global boundary edge through which the path left the domain; the
    /// chain then stops on that edge.
    pub escaped: Option<usize>,
}

impl SegmentChain {
    pub fn final_face(&self) -> usize {
        self.segments.last().expect("chain is never empty").face
    }

    pub fn end_point(&self, mesh: &Mesh) -> Vec2 {
        let last = self.segments.last().expect("chain is never empty");
        mesh.point_at(last.face, &last.end)
    }

    pub fn hops(&self) -> usize {
        self.segments.len() - 1
    }
}

/// Splits `from → to` into sub-segments, starting in `start_face` (which must
/// contain `from`).
///
/// Exit points get their vanishing coordinate set to exactly zero and are
/// carried into the neighbor by vertex identity, so both faces see the same
/// nodal weights. A path through a vertex may produce zero-length pieces while
/// it turns around the vertex fan.
pub fn split_segment(mesh: &Mesh, start_face: usize, from: Vec2, to: Vec2) -> Result<SegmentChain> {
    let mut segments = Vec::new();
    let mut face = start_face;
    let mut start = mesh.barycentric(face, from);
    let mut entered: Option<usize> = None;
    let cap = 4 * mesh.num_faces() + 8;
    for _ in 0..cap {
        let end = mesh.barycentric(face, to);
        let Some((s, local)) = next_exit(mesh, face, &start, &end, entered) else {
            segments.push(SubSegment { face, start, end });
            return Ok(SegmentChain {
                segments,
                escaped: None,
            });
        };
        let k = OPPOSITE_EDGE[local];
        let mut exit = [0, 1, 2].map(|j| (start[j] + s * (end[j] - start[j])).max(0.0));
        exit[k] = 0.0;
        let sum: f64 = exit.iter().sum();
        exit.iter_mut().for_each(|l| *l /= sum);
        segments.push(SubSegment {
            face,
            start,
            end: exit,
        });

        let fe = mesh.face_edges(face)[local];
        let Some(nb) = mesh.face_neighbors(face)[local] else {
            return Ok(SegmentChain {
                segments,
                escaped: Some(fe.edge),
            });
        };
        let verts = mesh.face(face);
        let nb_verts = mesh.face(nb);
        start = nb_verts.map(|v| verts.iter().position(|&w| w == v).map_or(0.0, |j| exit[j]));
        entered = mesh.face_edges(nb).iter().position(|x| x.edge == fe.edge);
        face = nb;
    }
    Err(Error::Invariant(format!(
        "segment ({}, {}) → ({}, {}) did not terminate after {cap} faces",
        from.x, from.y, to.x, to.y
    )))
}

/// Exit parameter and local edge for the piece in `face`, never leaving back
/// through the edge just entered. At a vertex (several exits at `s ≈ 0`),
/// interior edges are preferred over boundary edges so the fan walk does not
/// report a false escape.
fn next_exit(
    mesh: &Mesh,
    face: usize,
    start: &Bary,
    end: &Bary,
    entered: Option<usize>,
) -> Option<(f64, usize)> {
    let mut end = *end;
    if let Some(le) = entered {
        let k = OPPOSITE_EDGE[le];
        end[k] = end[k].max(0.0);
    }
    let (s, local) = mesh.segment_exit_bary(face, start, &end);
    let local = local?;
    let is_boundary = |le: usize| mesh.face_neighbors(face)[le].is_none();
    if is_boundary(local) && s <= 4.0 * f64::EPSILON {
        let mut alt = end;
        alt[OPPOSITE_EDGE[local]] = 0.0;
        if let (s2, Some(l2)) = mesh.segment_exit_bary(face, start, &alt) {
            if !is_boundary(l2) && s2 <= 4.0 * f64::EPSILON {
                return Some((s2, l2));
            }
        }
    }
    Some((s, local))
}

/// Nodal charges `Q λᵢ` for the three vertices of `face`. The largest share
/// is taken as the remainder so the three add up to `Q` to rounding, even when
/// the computed `λ` sum is off by a few ulp.
pub fn charge_contributions(
    mesh: &Mesh,
    charge: f64,
    face: usize,
    lambda: &Bary,
) -> [(usize, f64); 3] {
    let v = mesh.face(face);
    let mut c = [0, 1, 2].map(|k| charge * lambda[k]);
    let big = (0..3)
        .max_by(|&a, &b| lambda[a].abs().total_cmp(&lambda[b].abs()))
        .unwrap();
    let (o1, o2) = ((big + 1) % 3, (big + 2) % 3);
    c[big] = charge - (c[o1] + c[o2]);
    [0, 1, 2].map(|k| (v[k], c[k]))
}

/// Adds `Q λᵢ` to the charge array `q`.
pub fn scatter_charge(mesh: &Mesh, charge: f64, face: usize, lambda: &Bary, q: &mut [f64]) {
    for (v, c) in charge_contributions(mesh, charge, face, lambda) {
        q[v] += c;
    }
}

/// Edge currents `(Q/Δt)(λᵢˢλⱼᶠ − λᵢᶠλⱼˢ)` of every sub-segment, with global
/// signs, in chain order.
pub fn current_contributions(
    mesh: &Mesh,
    charge: f64,
    chain: &SegmentChain,
    dt: f64,
) -> Vec<(usize, f64)> {
    let scale = charge / dt;
    let mut out = Vec::with_capacity(3 * chain.segments.len());
    for seg in &chain.segments {
        let li = line_integrals_w1(&seg.start, &seg.end);
        for (k, fe) in mesh.face_edges(seg.face).iter().enumerate() {
            out.push((fe.edge, f64::from(fe.sign) * scale * li[k]));
        }
    }
    out
}

/// Adds the chain's edge currents to `i`.
pub fn scatter_current(mesh: &Mesh, charge: f64, chain: &SegmentChain, dt: f64, i: &mut [f64]) {
    for (e, c) in current_contributions(mesh, charge, chain, dt) {
        i[e] += c;
    }
}
