//! Non-relativistic particle update: implicit velocity step in `N`-matrix
//! form followed by the explicit position push.
//!
//! ```text
//! v^{n+1/2} = N⁻¹ Nᵀ v^{n-1/2} + (qΔt/m) N⁻¹ Eⁿ
//! r^{n+1}   = rⁿ + Δt v^{n+1/2}
//! ```

use std::sync::atomic::{AtomicBool, Ordering};

use crate::deposit::{split_segment, SegmentChain};
use crate::error::Result;
use crate::geom::Vec2;
use crate::mesh::Mesh;
use crate::C_LIGHT;

/// The non-relativistic warning is printed once per process.
static SPEED_WARNED: AtomicBool = AtomicBool::new(false);

/// Speeds above this fraction of `c` trigger a warning.
pub const NONRELATIVISTIC_WARN: f64 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    /// Charge (C).
    pub q: f64,
    /// Mass (kg).
    pub m: f64,
    /// Position (m) at integer steps.
    pub r: Vec2,
    /// Velocity (m/s) at half-integer steps.
    pub v: [f64; 3],
    /// Face containing `r`.
    pub cell: usize,
    pub alive: bool,
    pub species: usize,
    pub immobile: bool,
}

impl Particle {
    pub fn speed(&self) -> f64 {
        self.v.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// `N = I − (qΔt/2m)[B×]`, unitless.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NMatrix(pub [[f64; 3]; 3]);

/// Builds `N` from the magnetic field averaged over the two half steps.
pub fn build_n_matrix(q: f64, m: f64, dt: f64, b_prev: [f64; 3], b_next: [f64; 3]) -> NMatrix {
    let a = q * dt / (2.0 * m);
    let [bx, by, bz] = [0, 1, 2].map(|k| a * 0.5 * (b_prev[k] + b_next[k]));
    NMatrix([[1.0, -bz, by], [bz, 1.0, -bx], [-by, bx, 1.0]])
}

impl NMatrix {
    pub fn det(&self) -> f64 {
        let n = &self.0;
        n[0][0] * (n[1][1] * n[2][2] - n[1][2] * n[2][1])
            - n[0][1] * (n[1][0] * n[2][2] - n[1][2] * n[2][0])
            + n[0][2] * (n[1][0] * n[2][1] - n[1][1] * n[2][0])
    }

    /// Closed-form inverse via the adjugate.
    pub fn inverse(&self) -> [[f64; 3]; 3] {
        let n = &self.0;
        let d = self.det();
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
                let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
                inv[r][c] = (n[r1][c1] * n[r2][c2] - n[r1][c2] * n[r2][c1]) / d;
            }
        }
        inv
    }

    /// `N⁻¹ Nᵀ`, a rotation.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let inv = self.inverse();
        let n = &self.0;
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = (0..3).map(|k| inv[r][k] * n[c][k]).sum();
            }
        }
        out
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

/// `v ← N⁻¹Nᵀ v + (qΔt/m) N⁻¹ E`.
pub fn accelerate(p: &mut Particle, e_n: [f64; 3], n: &NMatrix, dt: f64) {
    let inv = n.inverse();
    let nt_v = [0, 1, 2].map(|r| n.0[0][r] * p.v[0] + n.0[1][r] * p.v[1] + n.0[2][r] * p.v[2]);
    let k = p.q * dt / p.m;
    let rot = mat_vec(&inv, nt_v);
    let kick = mat_vec(&inv, e_n);
    p.v = [0, 1, 2].map(|c| rot[c] + k * kick[c]);
    if p.speed() > NONRELATIVISTIC_WARN * C_LIGHT && !SPEED_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!(
            "particle speed {:.3e} m/s exceeds {NONRELATIVISTIC_WARN}c",
            p.speed()
        );
    }
}

/// A position update waiting to be deposited. Moving it into the current
/// scatter consumes it, so each push is deposited exactly once.
#[must_use = "a displacement must be handed to the current scatter"]
#[derive(Clone, Debug, PartialEq)]
pub struct Displacement {
    pub from: Vec2,
    pub to: Vec2,
    pub chain: SegmentChain,
}

/// `r ← r + Δt (vx, vy)`, tracking the containing face along the path.
/// A particle leaving the domain stops on the boundary and is deactivated.
pub fn push(p: &mut Particle, dt: f64, mesh: &Mesh) -> Result<Displacement> {
    let from = p.r;
    let target = from + Vec2::new(p.v[0], p.v[1]) * dt;
    let chain = split_segment(mesh, p.cell, from, target)?;
    p.cell = chain.final_face();
    if chain.escaped.is_some() {
        p.r = chain.end_point(mesh);
        p.alive = false;
    } else {
        p.r = target;
    }
    Ok(Displacement {
        from,
        to: p.r,
        chain,
    })
}
