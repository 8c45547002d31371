//! Leap-frog Maxwell stepper on edge (`e`) and face (`b`) degrees of freedom.
//!
//! ```text
//! b^{n+1/2} = b^{n-1/2} − Δt C e^n
//! [★ε] e^{n+1} = [★ε] e^n + Δt (Cᵀ [★μ⁻¹] b^{n+1/2} − i^{n+1/2})
//! ```
//!
//! Boundary edges are perfect electric conductors: their `e` stays zero and
//! they are removed from the mass solve.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hodge::HodgeOperators;
use crate::mesh::{IncidenceMatrices, Mesh};
use crate::sparse::{conjugate_gradient, dot, norm2, CgStats, CsrMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Time step (s).
    pub dt: f64,
    pub cg_rel_tol: f64,
    pub cg_max_iter: usize,
    pub courant_safety: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 1e-10,
            cg_rel_tol: 1e-12,
            cg_max_iter: 10_000,
            courant_safety: 0.9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Scenario(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.cg_rel_tol > 0.0 && self.cg_rel_tol < 1.0) {
            return Err(Error::Scenario(format!(
                "cg_rel_tol must be in (0, 1), got {}",
                self.cg_rel_tol
            )));
        }
        if self.cg_max_iter == 0 {
            return Err(Error::Scenario("cg_max_iter must be positive".into()));
        }
        if !(self.courant_safety > 0.0) {
            return Err(Error::Scenario("courant_safety must be positive".into()));
        }
        Ok(())
    }
}

/// Field degrees of freedom with their time levels. Levels are stored doubled:
/// `e_level2 = 2n` for `eⁿ`, `b_level2 = 2n ± 1` for `b^{n±1/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    /// Edge voltages (V) at integer steps.
    pub e: Vec<f64>,
    /// Face fluxes (Wb) at half-integer steps.
    pub b: Vec<f64>,
    /// Edge currents (A) at half-integer steps.
    pub i: Vec<f64>,
    pub e_level2: i64,
    pub b_level2: i64,
}

impl FieldState {
    /// Zero fields with `e⁰` and `b^{-1/2}`.
    pub fn zeros(mesh: &Mesh) -> Self {
        FieldState {
            e: vec![0.0; mesh.num_edges()],
            b: vec![0.0; mesh.num_faces()],
            i: vec![0.0; mesh.num_edges()],
            e_level2: 0,
            b_level2: -1,
        }
    }

    pub fn check_finite(&self, step: u64) -> Result<()> {
        if !self.e.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { what: "e", step });
        }
        if !self.b.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { what: "b", step });
        }
        if !self.i.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { what: "i", step });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CourantEstimate {
    /// Largest generalized eigenvalue of `(Cᵀ[★μ⁻¹]C, [★ε])` (s⁻²).
    pub lambda_max: f64,
    /// `2/√λ_max` (s).
    pub dt_c: f64,
    pub iterations: usize,
}

/// Assembled operators plus the PEC-reduced mass matrix.
#[derive(Clone, Debug)]
pub struct MaxwellSystem {
    pub incidence: IncidenceMatrices,
    pub hodge: HodgeOperators,
    /// Edges carrying unknowns (interior edges).
    free: Vec<usize>,
    mass_free: CsrMatrix,
}

impl MaxwellSystem {
    pub fn new(mesh: &Mesh, hodge: HodgeOperators) -> Self {
        let incidence = mesh.build_incidence();
        let free = mesh.interior_edges();
        let mass_free = hodge.star_eps.principal_submatrix(&free);
        MaxwellSystem {
            incidence,
            hodge,
            free,
            mass_free,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.incidence.curl.ncols()
    }

    pub fn num_faces(&self) -> usize {
        self.incidence.curl.nrows()
    }

    pub fn free_edges(&self) -> &[usize] {
        &self.free
    }

    /// `b ← b − Δt C e`.
    pub fn step_b(&self, fields: &mut FieldState, dt: f64) {
        assert_eq!(
            fields.b_level2,
            fields.e_level2 - 1,
            "b must trail e by half a step"
        );
        step_b(&self.incidence.curl, &fields.e, &mut fields.b, dt);
        fields.b_level2 += 2;
    }

    /// Solves `[★ε] e^{n+1} = [★ε] eⁿ + Δt (Cᵀ[★μ⁻¹]b − i)` on the free edges.
    ///
    /// The unknown is the increment `e^{n+1} − eⁿ` starting from zero, which is
    /// the warm start from `eⁿ`; the CG tolerance is thus relative to the
    /// increment's right-hand side rather than to `[★ε] eⁿ`.
    pub fn step_e(&self, fields: &mut FieldState, cfg: &SolverConfig) -> Result<CgStats> {
        assert_eq!(
            fields.b_level2,
            fields.e_level2 + 1,
            "b must lead e by half a step"
        );
        let stats = self.solve_e(&mut fields.e, &fields.b, &fields.i, cfg)?;
        fields.e_level2 += 2;
        Ok(stats)
    }

    fn solve_e(&self, e: &mut [f64], b: &[f64], i: &[f64], cfg: &SolverConfig) -> Result<CgStats> {
        let h = self.hodge.star_mu_inv.apply(b);
        let mut curl_h = vec![0.0; self.num_edges()];
        self.incidence.curl.tmul_vec(&h, &mut curl_h);
        let rhs: Vec<f64> = self
            .free
            .iter()
            .map(|&k| cfg.dt * (curl_h[k] - i[k]))
            .collect();
        let mut de = vec![0.0; self.free.len()];
        let stats = conjugate_gradient(
            &self.mass_free,
            &rhs,
            &mut de,
            cfg.cg_rel_tol,
            cfg.cg_max_iter,
        )?;
        for (&k, d) in self.free.iter().zip(de) {
            e[k] += d;
        }
        Ok(stats)
    }

    /// Stability limit `Δt_c = 2/√λ_max` of the PEC-constrained system, by
    /// power iteration on `[★ε]⁻¹ Cᵀ[★μ⁻¹]C` with inner CG solves. A mesh without
    /// interior edges falls back to the unconstrained operator pair.
    pub fn estimate_courant(&self, cfg: &SolverConfig) -> Result<CourantEstimate> {
        let dofs: Vec<usize> = if self.free.is_empty() {
            (0..self.num_edges()).collect()
        } else {
            self.free.clone()
        };
        let mass = if self.free.is_empty() {
            self.hodge.star_eps.clone()
        } else {
            self.mass_free.clone()
        };
        let n = dofs.len();
        let mut full = vec![0.0; self.num_edges()];
        let mut curl = vec![0.0; self.num_faces()];
        let mut back = vec![0.0; self.num_edges()];
        let mut stiffness = |x: &[f64]| -> Vec<f64> {
            full.fill(0.0);
            for (&k, &v) in dofs.iter().zip(x) {
                full[k] = v;
            }
            self.incidence.curl.mul_vec(&full, &mut curl);
            let h = self.hodge.star_mu_inv.apply(&curl);
            self.incidence.curl.tmul_vec(&h, &mut back);
            dofs.iter().map(|&k| back[k]).collect()
        };

        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut z = vec![0.0; n];
        let mut prev = 0.0;
        const MAX_ITER: usize = 20_000;
        for it in 1..=MAX_ITER {
            let ax = stiffness(&x);
            let rq = dot(&x, &ax) / mass.bilinear(&x, &x);
            if it > 1 && (rq - prev).abs() <= 1e-8 * rq {
                return Ok(CourantEstimate {
                    lambda_max: rq,
                    dt_c: 2.0 / rq.sqrt(),
                    iterations: it,
                });
            }
            prev = rq;
            conjugate_gradient(&mass, &ax, &mut z, 1e-13, cfg.cg_max_iter)?;
            let nz = norm2(&z);
            if nz == 0.0 || !nz.is_finite() {
                return Err(Error::EstimateDiverged { iterations: it });
            }
            x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi = zi / nz);
            z.iter_mut().for_each(|zi| *zi /= nz);
        }
        Err(Error::EstimateDiverged {
            iterations: MAX_ITER,
        })
    }
}

/// `b ← b − Δt C e`.
pub fn step_b(curl: &crate::sparse::IncidenceMatrix, e: &[f64], b: &mut [f64], dt: f64) {
    let mut ce = vec![0.0; b.len()];
    curl.mul_vec(e, &mut ce);
    for (bk, c) in b.iter_mut().zip(ce) {
        *bk -= dt * c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::hodge::Materials;
    use crate::mesh::gen;
    use crate::sparse::IncidenceMatrix;

    fn system(mesh: &Mesh) -> MaxwellSystem {
        let h = HodgeOperators::assemble(mesh, Materials::vacuum(mesh.num_faces())).unwrap();
        MaxwellSystem::new(mesh, h)
    }

    #[test]
    fn zero_e_leaves_b() {
        let mesh = gen::rect_grid(3, 3, 0.0, 1.0, 0.0, 1.0).unwrap();
        let sys = system(&mesh);
        let mut f = FieldState::zeros(&mesh);
        f.b.iter_mut().enumerate().for_each(|(k, b)| *b = k as f64);
        let before = f.b.clone();
        sys.step_b(&mut f, 1e-10);
        assert_eq!(f.b, before);
    }

    #[test]
    fn gradient_e_has_zero_curl() {
        let mesh = gen::rect_grid(4, 3, 0.0, 1.0, 0.0, 1.0).unwrap();
        let inc = mesh.build_incidence();
        // G = −S̃ᵀ maps nodal potentials to edge differences φ_b − φ_a; C G = 0 exactly.
        let g: IncidenceMatrix = inc.dual_div.transpose();
        let g_neg: Vec<(usize, usize, i8)> = g.iter().map(|(r, c, v)| (r, c, -v)).collect();
        let g = IncidenceMatrix::from_triplets(g.nrows(), g.ncols(), &g_neg);
        let cg = inc.curl.mul_transpose_exact(&g.transpose());
        assert!(cg.is_empty());
        let phi: Vec<f64> = (0..mesh.num_vertices())
            .map(|v| (v as f64 * 0.7).sin())
            .collect();
        let mut e = vec![0.0; mesh.num_edges()];
        g.mul_vec(&phi, &mut e);
        let mut b = vec![1.0; mesh.num_faces()];
        step_b(&inc.curl, &e, &mut b, 1.0);
        for v in b {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_triangle_b_update() {
        let mesh = Mesh::new(
            vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(1.0, 0.0),
                Vec2::new(0.0, 1.0),
            ],
            &[[0, 1, 2]],
            0,
        )
        .unwrap();
        let inc = mesh.build_incidence();
        let mut b = vec![0.5];
        step_b(&inc.curl, &[1.0, 0.0, 0.0], &mut b, 1.0);
        assert_eq!(b, vec![0.5 - 1.0]);
    }

    #[test]
    fn e_fixed_point_without_sources() {
        let mesh = gen::rect_grid(4, 4, 0.0, 1.0, 0.0, 1.0).unwrap();
        let sys = system(&mesh);
        let mut f = FieldState::zeros(&mesh);
        for &k in sys.free_edges() {
            f.e[k] = (k as f64).cos();
        }
        f.b_level2 = 1;
        let before = f.e.clone();
        let stats = sys.step_e(&mut f, &SolverConfig::default()).unwrap();
        assert_eq!(stats.iterations, 0);
        assert_eq!(f.e, before);
    }

    #[test]
    fn current_cancelling_rhs_drives_e_to_zero() {
        let mesh = gen::rect_grid(4, 4, 0.0, 1.0, 0.0, 1.0).unwrap();
        let sys = system(&mesh);
        let cfg = SolverConfig::default();
        let mut f = FieldState::zeros(&mesh);
        for &k in sys.free_edges() {
            f.e[k] = 1.0 + (k as f64).sin();
        }
        let me = sys.hodge.star_eps.apply(&f.e);
        f.i = me.iter().map(|v| v / cfg.dt).collect();
        f.b_level2 = 1;
        let scale = norm2(&f.e);
        sys.step_e(&mut f, &cfg).unwrap();
        assert!(norm2(&f.e) <= 1e-12 * scale);
    }

    #[test]
    fn courant_decreases_under_refinement() {
        let coarse = gen::rect_grid(4, 4, 0.0, 1.0, 0.0, 1.0).unwrap();
        let fine = gen::refine(&coarse).unwrap();
        let cfg = SolverConfig::default();
        let a = system(&coarse).estimate_courant(&cfg).unwrap();
        let b = system(&fine).estimate_courant(&cfg).unwrap();
        assert!(b.dt_c < a.dt_c);
    }

    #[test]
    fn courant_single_triangle_is_finite() {
        let mesh = Mesh::new(
            vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(0.1, 0.0),
                Vec2::new(0.0, 0.1),
            ],
            &[[0, 1, 2]],
            0,
        )
        .unwrap();
        let est = system(&mesh)
            .estimate_courant(&SolverConfig::default())
            .unwrap();
        assert!(est.dt_c.is_finite() && est.dt_c > 0.0);
    }

    #[test]
    fn courant_scales_with_sqrt_eps() {
        let mesh = gen::rect_grid(5, 5, 0.0, 1.0, 0.0, 1.0).unwrap();
        let n = mesh.num_faces();
        let cfg = SolverConfig::default();
        let a = MaxwellSystem::new(
            &mesh,
            HodgeOperators::assemble(&mesh, Materials::uniform(n, crate::EPS0, crate::MU0))
                .unwrap(),
        )
        .estimate_courant(&cfg)
        .unwrap();
        let b = MaxwellSystem::new(
            &mesh,
            HodgeOperators::assemble(&mesh, Materials::uniform(n, 2.0 * crate::EPS0, crate::MU0))
                .unwrap(),
        )
        .estimate_courant(&cfg)
        .unwrap();
        let ratio = b.dt_c / a.dt_c;
        assert!((ratio - 2f64.sqrt()).abs() < 1e-6, "ratio {ratio}");
    }
}
