//! Unstructured triangle mesh with the topology tables needed by the solver:
//! edges oriented from lower to higher vertex index, per-face edge signs,
//! face adjacency for walking point location, and the integer incidence
//! matrices `C` (face × edge curl) and `S̃` (vertex × edge dual divergence).

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geom::{twice_signed_area, Vec2};
use crate::sparse::IncidenceMatrix;

pub mod gen;
mod io;

pub use io::{load_mesh, parse_mesh, write_mesh};

/// Containment tolerance on barycentric coordinates.
pub const BARY_TOL: f64 = 1e-12;

/// Local edges as pairs of local vertex slots: e1 = (1,2), e2 = (1,3), e3 = (2,3).
pub const LOCAL_EDGES: [[usize; 2]; 3] = [[0, 1], [0, 2], [1, 2]];

/// Local edge opposite each local vertex.
pub const OPPOSITE_EDGE: [usize; 3] = [2, 1, 0];

/// Local vertex opposite each local edge.
pub const OPPOSITE_VERTEX: [usize; 3] = [2, 1, 0];

/// Sign of each local edge under counter-clockwise traversal 1→2→3→1,
/// relative to the local ascending pair.
const CCW_TRAVERSAL: [i8; 3] = [1, -1, 1];

pub type Bary = [f64; 3];

/// Global edge attached to a face slot, with the sign relating the local
/// ascending pair to the global low→high orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaceEdge {
    pub edge: usize,
    pub sign: i8,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Vec2>,
    edges: Vec<[usize; 2]>,
    faces: Vec<[usize; 3]>,
    areas: Vec<f64>,
    /// `2A` evaluated from each vertex's own sub-triangle, so that
    /// barycentrics are exactly 1 at the vertex.
    vertex_denoms: Vec<[f64; 3]>,
    gradients: Vec<[Vec2; 3]>,
    face_edges: Vec<[FaceEdge; 3]>,
    edge_faces: Vec<[Option<usize>; 2]>,
    face_neighbors: Vec<[Option<usize>; 3]>,
    boundary_edge: Vec<bool>,
    boundary_vertex: Vec<bool>,
    holes: usize,
}

impl Mesh {
    /// Builds a mesh from coordinates and vertex triples (0-based, any winding).
    ///
    /// `holes` is the number of holes in the domain; the Euler relation
    /// `V − E + F = 1 − holes` is checked against it.
    pub fn new(vertices: Vec<Vec2>, triangles: &[[usize; 3]], holes: usize) -> Result<Mesh> {
        let nv = vertices.len();
        if triangles.is_empty() {
            return Err(Error::Topology("mesh has no faces".into()));
        }
        let mut faces = Vec::with_capacity(triangles.len());
        let mut seen = HashMap::new();
        for (f, tri) in triangles.iter().enumerate() {
            let [a, b, c] = *tri;
            if let Some(v) = tri.iter().find(|&&v| v >= nv) {
                return Err(Error::Topology(format!(
                    "face {f} references vertex {v} of {nv}"
                )));
            }
            if a == b || b == c || a == c {
                return Err(Error::Topology(format!("face {f} repeats a vertex")));
            }
            let mut key = *tri;
            key.sort_unstable();
            if let Some(prev) = seen.insert(key, f) {
                return Err(Error::Topology(format!("face {f} duplicates face {prev}")));
            }
            let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
            let twice = twice_signed_area(pa, pb, pc);
            let scale = (pb - pa).norm().max((pc - pa).norm()).max((pc - pb).norm());
            if !(twice.abs() > 1e-14 * scale * scale) {
                return Err(Error::Topology(format!("face {f} has zero area")));
            }
            let mut t = if twice > 0.0 { [a, b, c] } else { [a, c, b] };
            let lo = (0..3).min_by_key(|&k| t[k]).unwrap();
            t.rotate_left(lo);
            faces.push(t);
        }

        let mut pairs: Vec<[usize; 2]> = faces
            .iter()
            .flat_map(|t| LOCAL_EDGES.map(|[i, j]| ordered(t[i], t[j])))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        let edges = pairs;
        let edge_index: HashMap<[usize; 2], usize> =
            edges.iter().enumerate().map(|(k, &e)| (e, k)).collect();

        let mut edge_faces = vec![[None, None]; edges.len()];
        let mut face_edges = Vec::with_capacity(faces.len());
        // Traversal direction each face imposes on each edge; two faces
        // sharing an edge must traverse it oppositely.
        let mut traversal = vec![0i8; edges.len()];
        for (f, t) in faces.iter().enumerate() {
            let mut fe = [FaceEdge { edge: 0, sign: 0 }; 3];
            for (k, [i, j]) in LOCAL_EDGES.into_iter().enumerate() {
                let e = edge_index[&ordered(t[i], t[j])];
                let sign = if t[i] < t[j] { 1 } else { -1 };
                fe[k] = FaceEdge { edge: e, sign };
                let dir = sign * CCW_TRAVERSAL[k];
                match edge_faces[e] {
                    [None, _] => {
                        edge_faces[e][0] = Some(f);
                        traversal[e] = dir;
                    }
                    [Some(_), None] => {
                        if traversal[e] == dir {
                            return Err(Error::Topology(format!(
                                "faces overlap across edge {:?}",
                                edges[e]
                            )));
                        }
                        edge_faces[e][1] = Some(f);
                    }
                    [Some(_), Some(_)] => {
                        return Err(Error::Topology(format!(
                            "edge {:?} borders more than two faces",
                            edges[e]
                        )));
                    }
                }
            }
            face_edges.push(fe);
        }

        let mut used = vec![false; nv];
        faces.iter().flatten().for_each(|&v| used[v] = true);
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::Topology(format!(
                "vertex {v} is not used by any face"
            )));
        }

        let boundary_edge: Vec<bool> = edge_faces.iter().map(|ef| ef[1].is_none()).collect();
        let mut boundary_vertex = vec![false; nv];
        for (e, &b) in boundary_edge.iter().enumerate() {
            if b {
                boundary_vertex[edges[e][0]] = true;
                boundary_vertex[edges[e][1]] = true;
            }
        }

        let face_neighbors = face_edges
            .iter()
            .enumerate()
            .map(|(f, fe)| {
                fe.map(|FaceEdge { edge, .. }| match edge_faces[edge] {
                    [Some(a), Some(b)] => Some(if a == f { b } else { a }),
                    _ => None,
                })
            })
            .collect();

        let mut areas = Vec::with_capacity(faces.len());
        let mut vertex_denoms = Vec::with_capacity(faces.len());
        let mut gradients = Vec::with_capacity(faces.len());
        for t in &faces {
            let p = t.map(|v| vertices[v]);
            let twice = twice_signed_area(p[0], p[1], p[2]);
            areas.push(0.5 * twice);
            vertex_denoms.push([0, 1, 2].map(|k| {
                let (a, b) = (p[(k + 1) % 3], p[(k + 2) % 3]);
                (b - a).cross(p[k] - a)
            }));
            // ∇λk = ẑ × (edge opposite k, traversed CCW) / 2A
            gradients
                .push([0, 1, 2].map(|k| (p[(k + 2) % 3] - p[(k + 1) % 3]).perp() * (1.0 / twice)));
        }

        let mesh = Mesh {
            vertices,
            edges,
            faces,
            areas,
            vertex_denoms,
            gradients,
            face_edges,
            edge_faces,
            face_neighbors,
            boundary_edge,
            boundary_vertex,
            holes,
        };
        let chi = mesh.euler_characteristic();
        if chi != 1 - holes as i64 {
            return Err(Error::Topology(format!(
                "Euler characteristic V - E + F = {chi}, expected {} for {holes} hole(s)",
                1 - holes as i64
            )));
        }
        Ok(mesh)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Vec2 {
        self.vertices[v]
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Face vertices, counter-clockwise, starting from the lowest index.
    pub fn face(&self, f: usize) -> [usize; 3] {
        self.faces[f]
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_points(&self, f: usize) -> [Vec2; 3] {
        self.faces[f].map(|v| self.vertices[v])
    }

    pub fn area(&self, f: usize) -> f64 {
        self.areas[f]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// `∇λ₁, ∇λ₂, ∇λ₃` on face `f` (m⁻¹).
    pub fn gradients(&self, f: usize) -> &[Vec2; 3] {
        &self.gradients[f]
    }

    pub fn face_edges(&self, f: usize) -> &[FaceEdge; 3] {
        &self.face_edges[f]
    }

    pub fn edge_faces(&self, e: usize) -> impl Iterator<Item = usize> + '_ {
        self.edge_faces[e].iter().flatten().copied()
    }

    pub fn face_neighbors(&self, f: usize) -> &[Option<usize>; 3] {
        &self.face_neighbors[f]
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.boundary_edge[e]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn interior_edges(&self) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&e| !self.boundary_edge[e])
            .collect()
    }

    pub fn interior_vertices(&self) -> Vec<usize> {
        (0..self.vertices.len())
            .filter(|&v| !self.boundary_vertex[v])
            .collect()
    }

    pub fn holes(&self) -> usize {
        self.holes
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.faces.len() as i64
    }

    /// Edge vector from the lower to the higher vertex index.
    pub fn edge_vector(&self, e: usize) -> Vec2 {
        let [a, b] = self.edges[e];
        self.vertices[b] - self.vertices[a]
    }

    /// Longest edge over the mesh.
    pub fn max_edge_length(&self) -> f64 {
        (0..self.edges.len())
            .map(|e| self.edge_vector(e).norm())
            .fold(0.0, f64::max)
    }

    pub fn min_edge_length(&self) -> f64 {
        (0..self.edges.len())
            .map(|e| self.edge_vector(e).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Discrete curl `C` (faces × edges) and dual divergence `S̃` (vertices × edges).
    ///
    /// `C[f,e] = +1` when the edge orientation agrees with the counter-clockwise
    /// boundary of `f`; `S̃[v,e] = +1` when `e` leaves `v`, `−1` when it enters.
    pub fn build_incidence(&self) -> IncidenceMatrices {
        let mut c = Vec::with_capacity(3 * self.faces.len());
        for (f, fe) in self.face_edges.iter().enumerate() {
            for (k, FaceEdge { edge, sign }) in fe.iter().enumerate() {
                c.push((f, *edge, sign * CCW_TRAVERSAL[k]));
            }
        }
        let mut s = Vec::with_capacity(2 * self.edges.len());
        for (e, &[a, b]) in self.edges.iter().enumerate() {
            s.push((a, e, 1i8));
            s.push((b, e, -1i8));
        }
        IncidenceMatrices {
            curl: IncidenceMatrix::from_triplets(self.faces.len(), self.edges.len(), &c),
            dual_div: IncidenceMatrix::from_triplets(self.vertices.len(), self.edges.len(), &s),
        }
    }

    /// Barycentric coordinates of `p` in face `f` from signed sub-triangle areas.
    pub fn barycentric(&self, f: usize, p: Vec2) -> Bary {
        let pts = self.face_points(f);
        let den = &self.vertex_denoms[f];
        [0, 1, 2].map(|k| {
            let (a, b) = (pts[(k + 1) % 3], pts[(k + 2) % 3]);
            (b - a).cross(p - a) / den[k]
        })
    }

    /// Cartesian point with barycentric coordinates `lambda` in face `f`.
    pub fn point_at(&self, f: usize, lambda: &Bary) -> Vec2 {
        let p = self.face_points(f);
        p[0] * lambda[0] + p[1] * lambda[1] + p[2] * lambda[2]
    }

    pub fn contains(&self, f: usize, p: Vec2) -> bool {
        self.barycentric(f, p).iter().all(|&l| l >= -BARY_TOL)
    }

    /// Finds a face containing `p` by walking across neighbors from `start`,
    /// always leaving through the edge opposite the most negative coordinate.
    pub fn locate(&self, start: usize, p: Vec2) -> Result<usize> {
        self.locate_counting(start, p).map(|(f, _)| f)
    }

    /// Like [`Mesh::locate`], also returning the number of hops taken.
    pub fn locate_counting(&self, start: usize, p: Vec2) -> Result<(usize, usize)> {
        let mut f = start;
        for hops in 0..=self.faces.len() {
            let lam = self.barycentric(f, p);
            let (k, &min) = lam
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            if min >= -BARY_TOL {
                return Ok((f, hops));
            }
            match self.face_neighbors[f][OPPOSITE_EDGE[k]] {
                Some(nb) => f = nb,
                None => {
                    return Err(Error::WalkEscaped {
                        x: p.x,
                        y: p.y,
                        last_face: f,
                    })
                }
            }
        }
        Err(Error::WalkEscaped {
            x: p.x,
            y: p.y,
            last_face: f,
        })
    }

    /// Parameter `s ∈ [0, 1]` at which the segment `from → to` first leaves face
    /// `f`, and the local edge it leaves through. `(1, None)` if it stays in
    /// the closed face.
    pub fn segment_exit(&self, f: usize, from: Vec2, to: Vec2) -> (f64, Option<usize>) {
        let ls = self.barycentric(f, from);
        let lf = self.barycentric(f, to);
        self.segment_exit_bary(f, &ls, &lf)
    }

    /// [`Mesh::segment_exit`] with both endpoints already in barycentric form.
    ///
    /// When two coordinates vanish at the same parameter (exit through a
    /// vertex), the edge with the smaller global index is chosen.
    pub fn segment_exit_bary(&self, f: usize, ls: &Bary, lf: &Bary) -> (f64, Option<usize>) {
        let mut best: Option<(f64, usize)> = None;
        for k in 0..3 {
            if lf[k] >= 0.0 {
                continue;
            }
            let start = ls[k].max(0.0);
            let s = start / (start - lf[k]);
            let edge = OPPOSITE_EDGE[k];
            best = match best {
                None => Some((s, edge)),
                Some((bs, be)) => {
                    let tie = (s - bs).abs() <= 4.0 * f64::EPSILON;
                    let global = |le: usize| self.face_edges[f][le].edge;
                    if (tie && global(edge) < global(be)) || (!tie && s < bs) {
                        Some((s, edge))
                    } else {
                        Some((bs, be))
                    }
                }
            };
        }
        match best {
            Some((s, e)) => (s, Some(e)),
            None => (1.0, None),
        }
    }
}

/// The two incidence matrices of the mesh complex.
#[derive(Clone, Debug)]
pub struct IncidenceMatrices {
    /// `C`: faces × edges.
    pub curl: IncidenceMatrix,
    /// `S̃`: vertices × edges.
    pub dual_div: IncidenceMatrix,
}

impl IncidenceMatrices {
    /// Nonzero entries of `S̃ Cᵀ`, computed in exact integer arithmetic.
    pub fn exact_sequence_defect(&self) -> Vec<(usize, usize, i64)> {
        self.dual_div.mul_transpose_exact(&self.curl)
    }
}

fn ordered(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> Mesh {
        Mesh::new(
            vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(1.0, 0.0),
                Vec2::new(0.0, 1.0),
            ],
            &[[0, 1, 2]],
            0,
        )
        .unwrap()
    }

    fn two_triangles() -> Mesh {
        Mesh::new(
            vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(1.0, 0.0),
                Vec2::new(0.0, 1.0),
                Vec2::new(1.0, 1.0),
            ],
            &[[0, 1, 2], [1, 3, 2]],
            0,
        )
        .unwrap()
    }

    #[test]
    fn reference_triangle_counts() {
        let m = reference();
        assert_eq!((m.num_vertices(), m.num_edges(), m.num_faces()), (3, 3, 1));
        assert_eq!(m.area(0), 0.5);
        assert_eq!(m.edges(), &[[0, 1], [0, 2], [1, 2]]);
    }

    #[test]
    fn two_triangles_share_one_interior_edge() {
        let m = two_triangles();
        let interior = m.interior_edges();
        assert_eq!(interior.len(), 1);
        assert_eq!(m.edges()[interior[0]], [1, 2]);
        assert_eq!(m.edge_faces(interior[0]).count(), 2);
        assert_eq!(
            (0..m.num_edges())
                .filter(|&e| m.is_boundary_edge(e))
                .count(),
            4
        );
    }

    #[test]
    fn repeated_triangle_rejected() {
        let v = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ];
        assert!(matches!(
            Mesh::new(v, &[[0, 1, 2], [2, 1, 0]], 0),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn zero_area_rejected() {
        let v = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0, 0.0),
        ];
        assert!(matches!(
            Mesh::new(v, &[[0, 1, 2]], 0),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn unused_vertex_rejected() {
        let v = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(5.0, 5.0),
        ];
        assert!(matches!(
            Mesh::new(v, &[[0, 1, 2]], 0),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn clockwise_input_normalized() {
        let v = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ];
        let m = Mesh::new(v, &[[0, 2, 1]], 0).unwrap();
        assert_eq!(m.face(0), [0, 1, 2]);
        assert!(m.area(0) > 0.0);
    }

    #[test]
    fn reference_curl_row() {
        let inc = reference().build_incidence();
        let row: Vec<i8> = (0..3).map(|e| inc.curl.get(0, e)).collect();
        assert_eq!(row, vec![1, -1, 1]);
        assert!(inc.exact_sequence_defect().is_empty());
    }

    #[test]
    fn dual_divergence_columns_sum_to_zero() {
        let inc = two_triangles().build_incidence();
        for e in 0..5 {
            let s: i32 = (0..4).map(|v| i32::from(inc.dual_div.get(v, e))).sum();
            assert_eq!(s, 0);
        }
        assert!(inc.exact_sequence_defect().is_empty());
    }

    #[test]
    fn barycentric_examples() {
        let m = reference();
        assert_eq!(m.barycentric(0, Vec2::new(0.0, 0.0)), [1.0, 0.0, 0.0]);
        let c = m.barycentric(0, Vec2::new(1.0 / 3.0, 1.0 / 3.0));
        for l in c {
            assert!((l - 1.0 / 3.0).abs() < 1e-15);
        }
        // Sub-triangle areas for (0.25, 0.25): A1 = 0.25, A2 = A3 = 0.125 over A = 0.5.
        let a = 0.5;
        let sub = |p: Vec2, q: Vec2, r: Vec2| 0.5 * twice_signed_area(p, q, r);
        let p = Vec2::new(0.25, 0.25);
        let [v0, v1, v2] = m.face_points(0);
        let oracle = [sub(p, v1, v2) / a, sub(v0, p, v2) / a, sub(v0, v1, p) / a];
        assert_eq!(oracle, [0.5, 0.25, 0.25]);
        assert_eq!(m.barycentric(0, p), oracle);
    }

    #[test]
    fn locate_cases() {
        let m = two_triangles();
        assert_eq!(m.locate_counting(0, Vec2::new(0.2, 0.2)).unwrap(), (0, 0));
        let f1 = m.locate_counting(0, Vec2::new(0.8, 0.8)).unwrap();
        assert_eq!(f1, (1, 1));
        match m.locate(0, Vec2::new(2.0, 2.0)) {
            Err(Error::WalkEscaped { last_face, .. }) => assert_eq!(last_face, 1),
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn segment_exit_cases() {
        let m = reference();
        let c = Vec2::new(1.0 / 3.0, 1.0 / 3.0);
        assert_eq!(m.segment_exit(0, c, Vec2::new(0.3, 0.3)), (1.0, None));
        // to lies on the hypotenuse: closed face keeps it.
        assert_eq!(m.segment_exit(0, c, Vec2::new(0.5, 0.5)), (1.0, None));
        // Centroid through the midpoint of e3 = (2,3) to (2/3, 2/3):
        // λ1(s) = 1/3 − s/3 vanishes at s = 1, λ1 at the end = −1/3 → s = 0.5.
        let (s, e) = m.segment_exit(0, c, Vec2::new(2.0 / 3.0, 2.0 / 3.0));
        assert!((s - 0.5).abs() < 1e-15);
        assert_eq!(e, Some(2));
    }

    #[test]
    fn vertex_exit_picks_smaller_global_edge() {
        let m = reference();
        // From the centroid straight out through vertex 2 at (1, 0).
        let c = Vec2::new(1.0 / 3.0, 1.0 / 3.0);
        let to = Vec2::new(1.0, 0.0) + (Vec2::new(1.0, 0.0) - c);
        let (s, e) = m.segment_exit(0, c, to);
        assert!((s - 0.5).abs() < 1e-15);
        // Edges at vertex 2 are [0,1] (global 0) and [1,2] (global 2).
        assert_eq!(m.face_edges(0)[e.unwrap()].edge, 0);
    }
}
