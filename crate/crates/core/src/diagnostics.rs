//! Per-step conservation checks: discrete continuity, Gauss's law, energy
//! balance and charge totals.

use std::io::Write;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::{dot, CsrMatrix, IncidenceMatrix};

/// `(q_next − q_prev)/Δt + S̃ i` per vertex (C/s).
pub fn continuity_residual(
    q_prev: &[f64],
    q_next: &[f64],
    i: &[f64],
    dual_div: &IncidenceMatrix,
    dt: f64,
) -> Vec<f64> {
    let mut div = vec![0.0; q_prev.len()];
    dual_div.mul_vec(i, &mut div);
    q_prev
        .iter()
        .zip(q_next)
        .zip(div)
        .map(|((a, b), d)| (b - a) / dt + d)
        .collect()
}

/// `S̃ [★ε] e`, the discrete flux out of each dual cell (C).
pub fn gauss_lhs(e: &[f64], dual_div: &IncidenceMatrix, star_eps: &CsrMatrix) -> Vec<f64> {
    let d = star_eps.apply(e);
    let mut out = vec![0.0; dual_div.nrows()];
    dual_div.mul_vec(&d, &mut out);
    out
}

/// `S̃ [★ε] e − q` per vertex (C). Rows of boundary vertices are included but
/// carry the conductor's surface charge and are excluded by
/// [`max_abs_interior`].
pub fn gauss_residual(
    e: &[f64],
    q: &[f64],
    dual_div: &IncidenceMatrix,
    star_eps: &CsrMatrix,
) -> Vec<f64> {
    let mut r = gauss_lhs(e, dual_div, star_eps);
    r.iter_mut().zip(q).for_each(|(r, q)| *r -= q);
    r
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_abs_interior(mesh: &Mesh, values: &[f64]) -> f64 {
    values
        .iter()
        .enumerate()
        .filter(|&(v, _)| !mesh.is_boundary_vertex(v))
        .fold(0.0, |m, (_, x)| m.max(x.abs()))
}

/// One step of the energy bookkeeping between `eⁿ` and `eⁿ⁺¹` (J).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyBalance {
    /// `½ eⁿ⁺¹ᵀ[★ε]eⁿ⁺¹`.
    pub we: f64,
    /// `½ b^{n+1/2}ᵀ[★μ⁻¹]b^{n+3/2}`.
    pub wm: f64,
    pub d_we: f64,
    pub d_wm: f64,
    /// `Δt ēᵀ i^{n+1/2}` with `ē = (eⁿ + eⁿ⁺¹)/2`.
    pub ps_dt: f64,
    pub residual: f64,
}

impl EnergyBalance {
    /// `|residual| / max(We + Wm, |Ps Δt|)`, zero when everything vanishes.
    pub fn relative_residual(&self) -> f64 {
        let scale = (self.we + self.wm).abs().max(self.ps_dt.abs());
        if scale == 0.0 {
            self.residual.abs()
        } else {
            self.residual.abs() / scale
        }
    }
}

/// Field levels needed for one energy-balance step.
#[derive(Clone, Copy, Debug)]
pub struct EnergyInputs<'a> {
    pub e_prev: &'a [f64],
    pub e_next: &'a [f64],
    /// `b^{n-1/2}`, `b^{n+1/2}`, `b^{n+3/2}`.
    pub b: [&'a [f64]; 3],
    pub i: &'a [f64],
}

/// Energy balance `ΔWe + ΔWm + Ps Δt` over one step.
///
/// The magnetic energy at integer step `n` is the staggered product
/// `½ b^{n-1/2}ᵀ[★μ⁻¹]b^{n+1/2}`; with it the leap-frog update satisfies the
/// balance exactly up to rounding and solver tolerance.
pub fn energy_balance(
    x: EnergyInputs<'_>,
    star_eps: &CsrMatrix,
    star_mu_inv: &CsrMatrix,
    dt: f64,
) -> EnergyBalance {
    let we = 0.5 * star_eps.quad_form(x.e_next);
    let k_mid = star_mu_inv.apply(x.b[1]);
    let wm = 0.5 * dot(x.b[2], &k_mid);
    let e_bar: Vec<f64> = x
        .e_prev
        .iter()
        .zip(x.e_next)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let ps_dt = dt * dot(&e_bar, x.i);
    // Differences are formed first so the increments do not cancel.
    let de: Vec<f64> = x.e_next.iter().zip(x.e_prev).map(|(a, b)| a - b).collect();
    let d_we = star_eps.bilinear(&e_bar, &de);
    let db: Vec<f64> = x.b[2].iter().zip(x.b[0]).map(|(a, b)| a - b).collect();
    let d_wm = 0.5 * dot(&db, &k_mid);
    EnergyBalance {
        we,
        wm,
        d_we,
        d_wm,
        ps_dt,
        residual: d_we + d_wm + ps_dt,
    }
}

/// Vertices whose Gauss residual is sampled every step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WatchList {
    vertices: Vec<usize>,
}

impl WatchList {
    /// `ids` are 0-based vertex indices.
    pub fn new(mesh: &Mesh, ids: &[usize]) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&v| v >= mesh.num_vertices()) {
            return Err(Error::UnknownVertex(bad));
        }
        Ok(WatchList {
            vertices: ids.to_vec(),
        })
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn sample(&self, step: u64, lhs: &[f64], q: &[f64]) -> Vec<WatchRow> {
        self.vertices
            .iter()
            .map(|&v| WatchRow {
                step,
                vertex: v,
                lhs: lhs[v],
                rhs: q[v],
                residual: lhs[v] - q[v],
            })
            .collect()
    }
}

/// One row of the watched-vertex Gauss table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WatchRow {
    pub step: u64,
    pub vertex: usize,
    /// `(S̃ [★ε] e)_v`.
    pub lhs: f64,
    /// `q_v`.
    pub rhs: f64,
    pub residual: f64,
}

pub const WATCH_HEADER: &str = "step,vertex,lhs,rhs,residual";

impl WatchRow {
    /// CSV row; the vertex is written 1-based, matching mesh files.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "{},{},{:e},{:e},{:e}",
            self.step,
            self.vertex + 1,
            self.lhs,
            self.rhs,
            self.residual
        )
    }
}

/// Everything checked after one step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: u64,
    /// Infinity norm over all vertices (C/s).
    pub continuity_residual_inf: f64,
    /// Infinity norm over interior vertices (C/s).
    pub continuity_residual_interior_inf: f64,
    /// Infinity norm of the Gauss residual over interior vertices (C).
    pub gauss_residual_inf: f64,
    pub max_abs_charge: f64,
    pub energy: EnergyBalance,
    pub total_charge: f64,
    /// `Σ Q` over alive particles.
    pub expected_charge: f64,
    /// Worst `|Σᵢ qᵢ − Q|` over single particles, in units of `ulp(Q)`.
    pub worst_particle_charge_ulps: f64,
    pub max_speed: f64,
    pub alive: usize,
    pub cg_iterations: usize,
    /// `S b = 0` holds trivially in 2-D.
    pub magnetic_gauss: bool,
    pub watched: Vec<WatchRow>,
}

pub const RECORD_HEADER: &str = "step,continuity_residual_inf,continuity_residual_interior_inf,\
gauss_residual_inf,max_abs_charge,We,Wm,dWe,dWm,Ps_dt,energy_balance_residual,total_charge,\
expected_charge,worst_particle_charge_ulps,max_speed,alive,cg_iterations,magnetic_gauss";

impl DiagnosticsRecord {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let e = &self.energy;
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e},{},{},{}",
            self.step,
            self.continuity_residual_inf,
            self.continuity_residual_interior_inf,
            self.gauss_residual_inf,
            self.max_abs_charge,
            e.we,
            e.wm,
            e.d_we,
            e.d_wm,
            e.ps_dt,
            e.residual,
            self.total_charge,
            self.expected_charge,
            self.worst_particle_charge_ulps,
            self.max_speed,
            self.alive,
            self.cg_iterations,
            self.magnetic_gauss,
        )
    }

    pub fn is_finite(&self) -> bool {
        let e = &self.energy;
        [
            self.continuity_residual_inf,
            self.gauss_residual_inf,
            e.we,
            e.wm,
            e.ps_dt,
            e.residual,
            self.total_charge,
            self.max_speed,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Spacing of doubles at `|x|`.
pub fn ulp(x: f64) -> f64 {
    let a = x.abs();
    f64::from_bits(a.to_bits() + 1) - a
}
