//! Galerkin discrete Hodge star matrices.
//!
//! `[★ε]ᵢⱼ = ∫ ε W¹ᵢ·W¹ⱼ dA` couples edges sharing a face; `[★μ⁻¹]` is
//! diagonal in 2-D because each face 2-form is `1/A` on its own face only.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::CsrMatrix;
use crate::whitney::eval_w1;
use crate::{EPS0, MU0};

/// Relative symmetry tolerance used by [`verify_spd`].
pub const SYMMETRY_TOL: f64 = 1e-14;

/// Piecewise-constant material data, one value per face.
#[derive(Clone, Debug, PartialEq)]
pub struct Materials {
    pub eps: Vec<f64>,
    pub mu: Vec<f64>,
}

impl Materials {
    pub fn uniform(num_faces: usize, eps: f64, mu: f64) -> Self {
        Materials {
            eps: vec![eps; num_faces],
            mu: vec![mu; num_faces],
        }
    }

    pub fn vacuum(num_faces: usize) -> Self {
        Self::uniform(num_faces, EPS0, MU0)
    }
}

#[derive(Clone, Debug)]
pub struct HodgeOperators {
    pub star_eps: CsrMatrix,
    pub star_mu_inv: CsrMatrix,
    pub materials: Materials,
}

impl HodgeOperators {
    pub fn assemble(mesh: &Mesh, materials: Materials) -> Result<Self> {
        Ok(HodgeOperators {
            star_eps: assemble_star_eps(mesh, &materials.eps)?,
            star_mu_inv: assemble_star_mu_inv(mesh, &materials.mu)?,
            materials,
        })
    }
}

/// Local 3×3 edge mass matrix of face `f` with unit material, in local edge
/// numbering and local orientation. Uses the edge-midpoint rule, exact for
/// the quadratic integrands on an affine triangle.
pub fn local_edge_mass(mesh: &Mesh, f: usize) -> [[f64; 3]; 3] {
    const MIDPOINTS: [[f64; 3]; 3] = [[0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]];
    let g = mesh.gradients(f);
    let w = mesh.area(f) / 3.0;
    let mut m = [[0.0; 3]; 3];
    for lam in &MIDPOINTS {
        let basis = [0, 1, 2].map(|e| eval_w1(g, lam, e));
        for a in 0..3 {
            for b in 0..3 {
                m[a][b] += w * basis[a].dot(basis[b]);
            }
        }
    }
    m
}

fn check_positive(values: &[f64], n: usize, name: &str) -> Result<()> {
    if values.len() != n {
        return Err(Error::Material(format!(
            "{name} has {} entries for {n} faces",
            values.len()
        )));
    }
    if let Some((f, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
    {
        return Err(Error::Material(format!(
            "{name} on face {f} is {v}, must be positive"
        )));
    }
    Ok(())
}

/// Assembles `[★ε]` (N_e × N_e). Local matrices are computed in parallel and
/// scattered in face order, so the result does not depend on thread count.
pub fn assemble_star_eps(mesh: &Mesh, eps: &[f64]) -> Result<CsrMatrix> {
    check_positive(eps, mesh.num_faces(), "permittivity")?;
    let locals: Vec<[[f64; 3]; 3]> = (0..mesh.num_faces())
        .into_par_iter()
        .map(|f| local_edge_mass(mesh, f))
        .collect();
    let mut trips = Vec::with_capacity(9 * mesh.num_faces());
    for (f, m) in locals.iter().enumerate() {
        let fe = mesh.face_edges(f);
        for a in 0..3 {
            for b in 0..3 {
                let s = f64::from(fe[a].sign * fe[b].sign);
                trips.push((fe[a].edge, fe[b].edge, eps[f] * s * m[a][b]));
            }
        }
    }
    let n = mesh.num_edges();
    Ok(CsrMatrix::from_triplets(n, n, &trips))
}

/// Assembles `[★μ⁻¹]` (N_f × N_f), diagonal with entries `1/(μ_f A_f)`.
pub fn assemble_star_mu_inv(mesh: &Mesh, mu: &[f64]) -> Result<CsrMatrix> {
    check_positive(mu, mesh.num_faces(), "permeability")?;
    let d: Vec<f64> = (0..mesh.num_faces())
        .map(|f| 1.0 / (mu[f] * mesh.area(f)))
        .collect();
    Ok(CsrMatrix::from_diagonal(&d))
}

/// True when `m` is square, symmetric to [`SYMMETRY_TOL`] relative, and admits
/// a Cholesky factorization.
pub fn verify_spd(m: &CsrMatrix) -> bool {
    m.nrows() == m.ncols() && m.asymmetry() <= SYMMETRY_TOL && m.envelope_cholesky().is_some()
}
