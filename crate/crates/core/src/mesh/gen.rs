//! Simple structured and perturbed meshes for tests, examples and scenarios.

use rand::seq::SliceRandom;
use rand::{Rng, RngExt};

use super::Mesh;
use crate::error::Result;
use crate::geom::{twice_signed_area, Vec2};

/// Tensor-product grid on the given coordinate lines, each quad split into two
/// triangles with the diagonal direction alternating in a checkerboard.
pub fn tensor_grid(xs: &[f64], ys: &[f64]) -> Result<Mesh> {
    let (nx, ny) = (xs.len() - 1, ys.len() - 1);
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for &y in ys {
        for &x in xs {
            vertices.push(Vec2::new(x, y));
        }
    }
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                tris.push([a, b, c]);
                tris.push([a, c, d]);
            } else {
                tris.push([a, b, d]);
                tris.push([b, c, d]);
            }
        }
    }
    Mesh::new(vertices, &tris, 0)
}

/// Uniform `nx × ny` grid on `[x0, x1] × [y0, y1]`.
pub fn rect_grid(nx: usize, ny: usize, x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Mesh> {
    tensor_grid(&linspace(x0, x1, nx), &linspace(y0, y1, ny))
}

pub fn linspace(a: f64, b: f64, cells: usize) -> Vec<f64> {
    (0..=cells)
        .map(|k| a + (b - a) * k as f64 / cells as f64)
        .collect()
}

/// Coordinates on `[-half_width, half_width]` symmetric about 0, with `2·cells`
/// intervals whose size grows geometrically from `min_spacing` at the center.
pub fn graded_axis(cells: usize, half_width: f64, min_spacing: f64) -> Vec<f64> {
    assert!(cells >= 1 && min_spacing * cells as f64 <= half_width);
    let span = |r: f64| -> f64 { (0..cells).map(|k| min_spacing * r.powi(k as i32)).sum() };
    let (mut lo, mut hi) = (1.0, 2.0);
    while span(hi) < half_width {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if span(mid) < half_width {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let ratio = 0.5 * (lo + hi);
    let mut pos = vec![0.0];
    let mut x = 0.0;
    for k in 0..cells {
        x += min_spacing * ratio.powi(k as i32);
        pos.push(x);
    }
    *pos.last_mut().unwrap() = half_width;
    let mut axis: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
    axis.extend_from_slice(&pos[1..]);
    axis
}

/// Moves every interior vertex by a uniform random offset of at most
/// `fraction` times its shortest incident edge, rejecting moves that would
/// shrink an incident triangle below a quarter of its area.
pub fn jitter<R: Rng + ?Sized>(mesh: &Mesh, fraction: f64, rng: &mut R) -> Result<Mesh> {
    let nv = mesh.num_vertices();
    let mut shortest = vec![f64::INFINITY; nv];
    for (e, &[a, b]) in mesh.edges().iter().enumerate() {
        let l = mesh.edge_vector(e).norm();
        shortest[a] = shortest[a].min(l);
        shortest[b] = shortest[b].min(l);
    }
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for (f, t) in mesh.faces().iter().enumerate() {
        for &v in t {
            incident[v].push(f);
        }
    }
    let mut pts = mesh.vertices().to_vec();
    for v in 0..nv {
        if mesh.is_boundary_vertex(v) {
            continue;
        }
        for _ in 0..20 {
            let r = fraction * shortest[v];
            let trial = pts[v] + Vec2::new(rng.random_range(-r..r), rng.random_range(-r..r));
            let ok = incident[v].iter().all(|&f| {
                let t = mesh.face(f);
                let p = t.map(|w| if w == v { trial } else { pts[w] });
                twice_signed_area(p[0], p[1], p[2]) > 0.5 * mesh.area(f)
            });
            if ok {
                pts[v] = trial;
                break;
            }
        }
    }
    Mesh::new(pts, mesh.faces(), mesh.holes())
}

/// Randomly renumbers vertices and reorders faces and their vertex lists.
pub fn relabel<R: Rng + ?Sized>(mesh: &Mesh, rng: &mut R) -> Result<Mesh> {
    let nv = mesh.num_vertices();
    let mut perm: Vec<usize> = (0..nv).collect();
    perm.shuffle(rng);
    let mut pts = vec![Vec2::ZERO; nv];
    for (old, &new) in perm.iter().enumerate() {
        pts[new] = mesh.vertex(old);
    }
    let mut tris: Vec<[usize; 3]> = mesh.faces().iter().map(|t| t.map(|v| perm[v])).collect();
    tris.shuffle(rng);
    for t in &mut tris {
        t.shuffle(rng);
    }
    Mesh::new(pts, &tris, mesh.holes())
}

/// Splits every triangle into four through its edge midpoints.
pub fn refine(mesh: &Mesh) -> Result<Mesh> {
    let nv = mesh.num_vertices();
    let mut pts = mesh.vertices().to_vec();
    for e in 0..mesh.num_edges() {
        let [a, b] = mesh.edges()[e];
        pts.push((mesh.vertex(a) + mesh.vertex(b)) * 0.5);
    }
    let mut tris = Vec::with_capacity(4 * mesh.num_faces());
    for f in 0..mesh.num_faces() {
        let [a, b, c] = mesh.face(f);
        let fe = mesh.face_edges(f);
        let (ab, ac, bc) = (nv + fe[0].edge, nv + fe[1].edge, nv + fe[2].edge);
        tris.extend_from_slice(&[[a, ab, ac], [ab, b, bc], [ac, bc, c], [ab, bc, ac]]);
    }
    Mesh::new(pts, &tris, mesh.holes())
}

/// Jittered, relabelled grid on the unit square with `2..=max_cells` cells per side.
pub fn random_mesh<R: Rng + ?Sized>(rng: &mut R, max_cells: usize) -> Result<Mesh> {
    let nx = rng.random_range(2..=max_cells);
    let ny = rng.random_range(2..=max_cells);
    let base = rect_grid(nx, ny, 0.0, 1.0, 0.0, 1.0)?;
    let shaken = jitter(&base, 0.3, rng)?;
    relabel(&shaken, rng)
}
