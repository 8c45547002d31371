//! Scenario files, initial conditions and the per-step update sequence.
//!
//! One step, for fields at `eⁿ`, `b^{n-1/2}` and particles at `rⁿ`,
//! `v^{n-1/2}`:
//!
//! 1. `b^{n+1/2}` from the curl of `eⁿ`;
//! 2. gather `Eⁿ` at `rⁿ`;
//! 3. gather `B^{n-1/2}` and `B^{n+1/2}` at `rⁿ`;
//! 4. velocity update;
//! 5. position update;
//! 6. edge currents along each `rⁿ → rⁿ⁺¹` path;
//! 7. `eⁿ⁺¹` from the mass solve.
//!
//! Nodal charges are then rebuilt from the new positions and the
//! conservation diagnostics are evaluated.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ini::Ini;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::deposit::{charge_contributions, current_contributions, gather_b, gather_e};
use crate::diagnostics::{
    continuity_residual, energy_balance, gauss_lhs, max_abs, max_abs_interior, ulp,
    DiagnosticsRecord, EnergyInputs, WatchList, RECORD_HEADER, WATCH_HEADER,
};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::hodge::{HodgeOperators, Materials};
use crate::maxwell::{self, CourantEstimate, FieldState, MaxwellSystem, SolverConfig};
use crate::mesh::{load_mesh, Mesh};
use crate::output::{write_fields, write_particles, AtomicFile, FIELD_HEADER, PARTICLE_HEADER};
use crate::pusher::{accelerate, build_n_matrix, push, Displacement, Particle};
use crate::{EPS0, MU0};

/// Where a species' particles start.
#[derive(Clone, Debug, PartialEq)]
pub enum Placement {
    Points(Vec<Vec2>),
    /// Uniform in a disk, by rejection sampling.
    Disk {
        center: Vec2,
        radius: f64,
    },
    /// Same positions as the named, earlier species.
    SameAs(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum VelocityInit {
    /// One velocity shared by all particles, or one per particle.
    Fixed(Vec<[f64; 3]>),
    /// Gaussian in-plane components with standard deviation `thermal_speed`,
    /// `v_z = 0`.
    Maxwellian { thermal_speed: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeciesConfig {
    pub name: String,
    pub charge: f64,
    pub mass: f64,
    pub immobile: bool,
    pub count: usize,
    pub placement: Placement,
    pub velocity: VelocityInit,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    /// Snapshot cadence in steps; 0 disables snapshots.
    pub every: u64,
    pub particles: bool,
    pub fields: bool,
    /// Watched vertices, 0-based.
    pub watch: Vec<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            every: 0,
            particles: true,
            fields: false,
            watch: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub mesh_path: PathBuf,
    pub eps_r: f64,
    pub mu_r: f64,
    /// Static external `B_z` (Wb/m²).
    pub bz: f64,
    pub species: Vec<SpeciesConfig>,
    /// Time step (s); `None` means `courant_safety · Δt_c`.
    pub dt: Option<f64>,
    pub steps: u64,
    /// Treat configured velocities as `v⁰` and rotate them back half a step.
    pub half_step_backpush: bool,
    pub output: OutputConfig,
    pub cg_rel_tol: f64,
    pub cg_max_iter: usize,
    pub courant_safety: f64,
    pub allow_unstable: bool,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses scenario text; relative mesh paths resolve against the
    /// directory of `path`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let ini = Ini::load_from_str_noescape(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line,
            msg: e.msg.into_owned(),
        })?;
        let p = Parser { ini: &ini, path };
        for (name, _) in ini.iter() {
            match name {
                Some("mesh" | "materials" | "fields" | "time" | "output" | "solver") => {}
                Some(s) if s.starts_with("species.") => {}
                None => p.check_keys(None, &[])?,
                Some(other) => return Err(p.err(format!("unknown section [{other}]"))),
            }
        }

        p.check_keys(Some("mesh"), &["path"])?;
        let mesh_rel = p.req("mesh", "path")?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mesh_path = base.join(mesh_rel);

        p.check_keys(Some("materials"), &["eps_r", "mu_r"])?;
        let eps_r = p.opt_f64("materials", "eps_r")?.unwrap_or(1.0);
        let mu_r = p.opt_f64("materials", "mu_r")?.unwrap_or(1.0);

        p.check_keys(Some("fields"), &["bz"])?;
        let bz = p.opt_f64("fields", "bz")?.unwrap_or(0.0);

        p.check_keys(Some("time"), &["dt", "steps", "half_step_backpush"])?;
        let dt = p.opt_f64("time", "dt")?;
        let steps = p.opt_parse::<u64>("time", "steps")?.unwrap_or(0);
        let half_step_backpush = p.opt_switch("time", "half_step_backpush")?.unwrap_or(false);

        p.check_keys(Some("output"), &["every", "particles", "fields", "watch"])?;
        let defaults = OutputConfig::default();
        let watch = match p.get("output", "watch") {
            Some(list) => list
                .split_whitespace()
                .map(|t| match t.parse::<usize>() {
                    Ok(id) if id >= 1 => Ok(id - 1),
                    _ => Err(p.err(format!("[output] watch: `{t}` is not a 1-based vertex id"))),
                })
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        let output = OutputConfig {
            every: p.opt_parse("output", "every")?.unwrap_or(defaults.every),
            particles: p
                .opt_switch("output", "particles")?
                .unwrap_or(defaults.particles),
            fields: p.opt_switch("output", "fields")?.unwrap_or(defaults.fields),
            watch,
        };

        p.check_keys(
            Some("solver"),
            &[
                "cg_rel_tol",
                "cg_max_iter",
                "courant_safety",
                "allow_unstable",
            ],
        )?;
        let sd = SolverConfig::default();
        let cg_rel_tol = p.opt_f64("solver", "cg_rel_tol")?.unwrap_or(sd.cg_rel_tol);
        let cg_max_iter = p
            .opt_parse("solver", "cg_max_iter")?
            .unwrap_or(sd.cg_max_iter);
        let courant_safety = p
            .opt_f64("solver", "courant_safety")?
            .unwrap_or(sd.courant_safety);
        let allow_unstable = p.opt_switch("solver", "allow_unstable")?.unwrap_or(false);

        let mut names: Vec<&str> = ini
            .sections()
            .flatten()
            .filter(|s| s.starts_with("species."))
            .collect();
        names.sort_by_key(|s| (s.len(), *s));
        names.dedup();
        let mut species: Vec<SpeciesConfig> = Vec::new();
        for sec in names {
            let s = p.species(sec, &species)?;
            species.push(s);
        }

        let sc = Scenario {
            mesh_path,
            eps_r,
            mu_r,
            bz,
            species,
            dt,
            steps,
            half_step_backpush,
            output,
            cg_rel_tol,
            cg_max_iter,
            courant_safety,
            allow_unstable,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if !(self.eps_r > 0.0 && self.mu_r > 0.0) {
            return bad(format!(
                "eps_r and mu_r must be positive, got {} and {}",
                self.eps_r, self.mu_r
            ));
        }
        if !self.bz.is_finite() {
            return bad("bz must be finite".into());
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("dt must be positive, got {dt}"));
            }
        }
        SolverConfig {
            dt: self.dt.unwrap_or(1.0),
            cg_rel_tol: self.cg_rel_tol,
            cg_max_iter: self.cg_max_iter,
            courant_safety: self.courant_safety,
        }
        .validate()?;
        for s in &self.species {
            if !(s.mass > 0.0 && s.mass.is_finite()) {
                return bad(format!("species {}: mass must be positive", s.name));
            }
            if !s.charge.is_finite() {
                return bad(format!("species {}: charge must be finite", s.name));
            }
        }
        Ok(())
    }

    /// Replaces every species seed by one derived from `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        for (k, s) in self.species.iter_mut().enumerate() {
            s.seed = seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        }
    }
}

struct Parser<'a> {
    ini: &'a Ini,
    path: &'a Path,
}

impl Parser<'_> {
    fn err(&self, msg: String) -> Error {
        Error::Scenario(format!("{}: {msg}", self.path.display()))
    }

    fn check_keys(&self, section: Option<&str>, allowed: &[&str]) -> Result<()> {
        for props in self.ini.section_all(section) {
            for (k, _) in props.iter() {
                if !allowed.contains(&k) {
                    let sec = section.unwrap_or("(top level)");
                    return Err(self.err(format!("unknown key `{k}` in [{sec}]")));
                }
            }
        }
        Ok(())
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.ini
            .section(Some(section))
            .and_then(|p| p.get(key))
            .map(str::trim)
    }

    fn req(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key)
            .ok_or_else(|| self.err(format!("missing `{key}` in [{section}]")))
    }

    fn opt_parse<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| self.err(format!("[{section}] {key}: cannot parse `{v}`"))),
        }
    }

    fn opt_f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        self.opt_parse(section, key)
    }

    fn opt_switch(&self, section: &str, key: &str) -> Result<Option<bool>> {
        match self.get(section, key) {
            None => Ok(None),
            Some("on" | "true" | "yes" | "1") => Ok(Some(true)),
            Some("off" | "false" | "no" | "0") => Ok(Some(false)),
            Some(v) => Err(self.err(format!("[{section}] {key}: expected on/off, got `{v}`"))),
        }
    }

    fn numbers(&self, section: &str, key: &str, text: &str, width: usize) -> Result<Vec<Vec<f64>>> {
        text.split(',')
            .map(|item| {
                let v: Vec<f64> = item
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| self.err(format!("[{section}] {key}: bad number in `{item}`")))?;
                if v.len() != width {
                    return Err(self.err(format!(
                        "[{section}] {key}: expected {width} numbers in `{item}`"
                    )));
                }
                Ok(v)
            })
            .collect()
    }

    fn species(&self, sec: &str, earlier: &[SpeciesConfig]) -> Result<SpeciesConfig> {
        const KEYS: [&str; 13] = [
            "name",
            "charge",
            "mass",
            "immobile",
            "count",
            "positions",
            "disk_center",
            "disk_radius",
            "positions_from",
            "velocity",
            "thermal_speed",
            "seed",
            "distribution",
        ];
        self.check_keys(Some(sec), &KEYS)?;
        let name = self
            .get(sec, "name")
            .unwrap_or(&sec["species.".len()..])
            .to_string();
        let charge = self
            .opt_f64(sec, "charge")?
            .ok_or_else(|| self.err(format!("missing `charge` in [{sec}]")))?;
        let mass = self
            .opt_f64(sec, "mass")?
            .ok_or_else(|| self.err(format!("missing `mass` in [{sec}]")))?;
        let immobile = self.opt_switch(sec, "immobile")?.unwrap_or(false);
        let seed = self.opt_parse(sec, "seed")?.unwrap_or(0);
        let count_opt: Option<usize> = self.opt_parse(sec, "count")?;
        let distribution = self.get(sec, "distribution");

        let (placement, count) = if let Some(other) = self.get(sec, "positions_from") {
            let src = earlier.iter().find(|s| s.name == other).ok_or_else(|| {
                self.err(format!(
                    "[{sec}] positions_from: no earlier species `{other}`"
                ))
            })?;
            if count_opt.is_some_and(|c| c != src.count) {
                return Err(self.err(format!("[{sec}] count differs from species `{other}`")));
            }
            (Placement::SameAs(other.to_string()), src.count)
        } else if distribution == Some("disk") {
            let c = self.numbers(sec, "disk_center", self.req(sec, "disk_center")?, 2)?;
            if c.len() != 1 {
                return Err(self.err(format!("[{sec}] disk_center must be one point")));
            }
            let radius: f64 = self
                .opt_f64(sec, "disk_radius")?
                .filter(|r| *r > 0.0)
                .ok_or_else(|| self.err(format!("[{sec}] disk needs a positive disk_radius")))?;
            let count = count_opt.ok_or_else(|| self.err(format!("[{sec}] disk needs `count`")))?;
            (
                Placement::Disk {
                    center: Vec2::new(c[0][0], c[0][1]),
                    radius,
                },
                count,
            )
        } else if distribution.is_none() || distribution == Some("points") {
            let pts: Vec<Vec2> = match self.get(sec, "positions") {
                Some(t) if !t.is_empty() => self
                    .numbers(sec, "positions", t, 2)?
                    .into_iter()
                    .map(|v| Vec2::new(v[0], v[1]))
                    .collect(),
                _ => Vec::new(),
            };
            if count_opt.is_some_and(|c| c != pts.len()) {
                return Err(self.err(format!(
                    "[{sec}] count does not match the number of positions"
                )));
            }
            let n = pts.len();
            (Placement::Points(pts), n)
        } else {
            return Err(self.err(format!(
                "[{sec}] unknown distribution `{}`",
                distribution.unwrap()
            )));
        };

        let velocity = match (
            self.get(sec, "velocity"),
            self.opt_f64(sec, "thermal_speed")?,
        ) {
            (Some(_), Some(_)) => {
                return Err(self.err(format!("[{sec}] give either velocity or thermal_speed")));
            }
            (None, Some(vt)) if vt >= 0.0 => VelocityInit::Maxwellian { thermal_speed: vt },
            (None, Some(vt)) => {
                return Err(self.err(format!("[{sec}] negative thermal_speed {vt}")))
            }
            (Some(t), None) => {
                let v: Vec<[f64; 3]> = self
                    .numbers(sec, "velocity", t, 3)?
                    .into_iter()
                    .map(|v| [v[0], v[1], v[2]])
                    .collect();
                if v.len() != 1 && v.len() != count {
                    return Err(self.err(format!(
                        "[{sec}] need 1 or {count} velocities, got {}",
                        v.len()
                    )));
                }
                VelocityInit::Fixed(v)
            }
            (None, None) => VelocityInit::Fixed(vec![[0.0; 3]]),
        };
        Ok(SpeciesConfig {
            name,
            charge,
            mass,
            immobile,
            count,
            placement,
            velocity,
            seed,
        })
    }
}

/// Standard normal pair by the Box–Muller transform.
fn box_muller<R: rand::Rng>(rng: &mut R) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = 2.0 * std::f64::consts::PI * u2;
    (r * t.cos(), r * t.sin())
}

/// Draws positions and velocities for every species, in species order.
pub fn sample_particles(mesh: &Mesh, species: &[SpeciesConfig]) -> Result<Vec<Particle>> {
    let mut out: Vec<Particle> = Vec::new();
    let mut positions: Vec<Vec<Vec2>> = Vec::new();
    for (k, s) in species.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let pos: Vec<Vec2> = match &s.placement {
            Placement::Points(p) => p.clone(),
            Placement::SameAs(name) => {
                positions[species.iter().position(|o| &o.name == name).unwrap()].clone()
            }
            Placement::Disk { center, radius } => {
                let mut v = Vec::with_capacity(s.count);
                while v.len() < s.count {
                    let x = rng.random_range(-1.0..=1.0);
                    let y = rng.random_range(-1.0..=1.0);
                    if x * x + y * y <= 1.0 {
                        v.push(*center + Vec2::new(x, y) * *radius);
                    }
                }
                v
            }
        };
        let mut hint = 0;
        for (j, &r) in pos.iter().enumerate() {
            let cell = mesh.locate(hint, r).map_err(|_| {
                Error::Initialization(format!(
                    "species {}: particle {j} at ({}, {}) is outside the mesh",
                    s.name, r.x, r.y
                ))
            })?;
            hint = cell;
            let v = match &s.velocity {
                VelocityInit::Fixed(v) => v[if v.len() == 1 { 0 } else { j }],
                VelocityInit::Maxwellian { thermal_speed } => {
                    let (a, b) = box_muller(&mut rng);
                    [a * thermal_speed, b * thermal_speed, 0.0]
                }
            };
            out.push(Particle {
                q: s.charge,
                m: s.mass,
                r,
                v,
                cell,
                alive: true,
                species: k,
                immobile: s.immobile,
            });
        }
        positions.push(pos);
    }
    Ok(out)
}

/// Charges `Σ_p Q_p λ(r_p)` of the given particles, accumulated in order.
pub fn nodal_charge<'a>(
    mesh: &Mesh,
    particles: impl IntoIterator<Item = &'a Particle>,
) -> Vec<f64> {
    let mut q = vec![0.0; mesh.num_vertices()];
    for p in particles {
        for (v, c) in charge_contributions(mesh, p.q, p.cell, &mesh.barycentric(p.cell, p.r)) {
            q[v] += c;
        }
    }
    q
}

/// Limits checked on every record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Continuity, relative to `max|Q|/Δt`.
    pub continuity: f64,
    /// Gauss residual at interior vertices, relative to `max|q|`.
    pub gauss: f64,
    /// Energy-balance residual, relative to `max(We + Wm, |Ps Δt|)`.
    pub energy: f64,
    /// Per-particle charge total, in ulps of `Q`.
    pub charge_ulps: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            continuity: 1e-12,
            gauss: 1e-10,
            energy: 1e-9,
            charge_ulps: 4.0,
        }
    }
}

/// Complete simulation state between steps: `eⁿ`, `b^{n-1/2}`, `rⁿ`,
/// `v^{n-1/2}` and `qⁿ`.
#[derive(Clone, Debug)]
pub struct SimulationState {
    pub mesh: Mesh,
    pub system: MaxwellSystem,
    pub solver: SolverConfig,
    pub fields: FieldState,
    pub particles: Vec<Particle>,
    pub q: Vec<f64>,
    pub step: u64,
    pub watch: WatchList,
    pub tolerances: Tolerances,
    pub courant: Option<CourantEstimate>,
}

impl SimulationState {
    /// Builds a state from parts. `bz` is folded into `b` as `b_f = A_f B_z`;
    /// `e⁰ = 0`. Fails if the initial charges violate Gauss's law.
    pub fn new(
        mesh: Mesh,
        materials: Materials,
        solver: SolverConfig,
        particles: Vec<Particle>,
        bz: f64,
    ) -> Result<Self> {
        solver.validate()?;
        let hodge = HodgeOperators::assemble(&mesh, materials)?;
        let system = MaxwellSystem::new(&mesh, hodge);
        let mut fields = FieldState::zeros(&mesh);
        fields
            .b
            .iter_mut()
            .zip(mesh.areas())
            .for_each(|(b, a)| *b = a * bz);
        let q = nodal_charge(&mesh, particles.iter().filter(|p| p.alive));
        let state = SimulationState {
            mesh,
            system,
            solver,
            fields,
            particles,
            q,
            step: 0,
            watch: WatchList::default(),
            tolerances: Tolerances::default(),
            courant: None,
        };
        state.check_initial_gauss()?;
        Ok(state)
    }

    fn check_initial_gauss(&self) -> Result<()> {
        let lhs = gauss_lhs(
            &self.fields.e,
            &self.system.incidence.dual_div,
            &self.system.hodge.star_eps,
        );
        let res: Vec<f64> = lhs.iter().zip(&self.q).map(|(l, q)| l - q).collect();
        let worst = max_abs_interior(&self.mesh, &res);
        let scale = self.particles.iter().fold(0.0f64, |m, p| m.max(p.q.abs()));
        if worst > 1e-12 * scale {
            return Err(Error::Initialization(format!(
                "initial fields and charges violate Gauss's law (residual {worst:.3e} C); \
                 place each charge on top of an opposite partner"
            )));
        }
        Ok(())
    }

    /// Rotates configured `v⁰` back to `v^{-1/2}` with a half step of the
    /// velocity update at `r⁰`.
    pub fn half_step_backpush(&mut self) {
        let half = -0.5 * self.solver.dt;
        let (mesh, fields) = (&self.mesh, &self.fields);
        for p in self.particles.iter_mut().filter(|p| p.alive && !p.immobile) {
            let lam = mesh.barycentric(p.cell, p.r);
            let e = gather_e(mesh, &fields.e, p.cell, &lam);
            let bz = gather_b(mesh, &fields.b, p.cell);
            let n = build_n_matrix(p.q, p.m, half, [0.0, 0.0, bz], [0.0, 0.0, bz]);
            accelerate(p, [e.x, e.y, 0.0], &n, half);
        }
    }

    pub fn dt(&self) -> f64 {
        self.solver.dt
    }

    /// Advances one full step and evaluates the diagnostics.
    pub fn run_step(&mut self) -> Result<DiagnosticsRecord> {
        let n = self.step;
        let dt = self.solver.dt;
        assert_eq!(
            self.fields.e_level2,
            2 * n as i64,
            "time level of e out of sync"
        );
        let b_prev = self.fields.b.clone();
        let e_prev = self.fields.e.clone();

        // (1)
        self.system.step_b(&mut self.fields, dt);

        // (2)–(5)
        let (mesh, fields) = (&self.mesh, &self.fields);
        let moved: Vec<Option<Displacement>> = self
            .particles
            .par_iter_mut()
            .with_min_len(64)
            .map(|p| {
                if !p.alive || p.immobile {
                    return Ok(None);
                }
                let lam = mesh.barycentric(p.cell, p.r);
                let e = gather_e(mesh, &fields.e, p.cell, &lam);
                let b_old = gather_b(mesh, &b_prev, p.cell);
                let b_new = gather_b(mesh, &fields.b, p.cell);
                let nm = build_n_matrix(p.q, p.m, dt, [0.0, 0.0, b_old], [0.0, 0.0, b_new]);
                accelerate(p, [e.x, e.y, 0.0], &nm, dt);
                push(p, dt, mesh).map(Some)
            })
            .collect::<Result<_>>()?;

        // (6)
        let charges: Vec<f64> = self.particles.iter().map(|p| p.q).collect();
        let absorbed: Vec<bool> = moved
            .iter()
            .map(|d| d.as_ref().is_some_and(|d| d.chain.escaped.is_some()))
            .collect();
        let currents: Vec<Vec<(usize, f64)>> = moved
            .into_par_iter()
            .with_min_len(64)
            .zip(charges.par_iter())
            .map(|(d, &q)| d.map(|d| deposit(mesh, q, d, dt)).unwrap_or_default())
            .collect();
        let i = &mut self.fields.i;
        i.fill(0.0);
        for contrib in &currents {
            for &(e, c) in contrib {
                i[e] += c;
            }
        }

        // (7)
        let cg = self.system.step_e(&mut self.fields, &self.solver)?;
        self.step += 1;
        self.fields.check_finite(self.step)?;
        if let Some(k) = self
            .particles
            .iter()
            .position(|p| !(p.r.is_finite() && p.v.iter().all(|c| c.is_finite())))
        {
            log::error!("particle {k} became non-finite at step {}", self.step);
            return Err(Error::NonFinite {
                what: "particle state",
                step: self.step,
            });
        }

        // Charge and diagnostics at n + 1.
        let mesh = &self.mesh;
        let shares: Vec<[(usize, f64); 3]> = self
            .particles
            .par_iter()
            .with_min_len(256)
            .map(|p| charge_contributions(mesh, p.q, p.cell, &mesh.barycentric(p.cell, p.r)))
            .collect();
        let mut q_next = vec![0.0; mesh.num_vertices()];
        let mut q_through = vec![0.0; mesh.num_vertices()];
        let mut worst_ulps: f64 = 0.0;
        for ((p, s), &gone) in self.particles.iter().zip(&shares).zip(&absorbed) {
            if !(p.alive || gone) {
                continue;
            }
            for &(v, c) in s {
                q_through[v] += c;
                if p.alive {
                    q_next[v] += c;
                }
            }
            let total = s[0].1 + s[1].1 + s[2].1;
            worst_ulps = worst_ulps.max((total - p.q).abs() / ulp(p.q));
        }

        let inc = &self.system.incidence;
        let cont = continuity_residual(&self.q, &q_through, &self.fields.i, &inc.dual_div, dt);
        let lhs = gauss_lhs(&self.fields.e, &inc.dual_div, &self.system.hodge.star_eps);
        let gres: Vec<f64> = lhs.iter().zip(&q_next).map(|(l, q)| l - q).collect();
        let mut b_ahead = self.fields.b.clone();
        maxwell::step_b(&inc.curl, &self.fields.e, &mut b_ahead, dt);
        let energy = energy_balance(
            EnergyInputs {
                e_prev: &e_prev,
                e_next: &self.fields.e,
                b: [&b_prev, &self.fields.b, &b_ahead],
                i: &self.fields.i,
            },
            &self.system.hodge.star_eps,
            &self.system.hodge.star_mu_inv,
            dt,
        );
        let alive: Vec<&Particle> = self.particles.iter().filter(|p| p.alive).collect();
        let record = DiagnosticsRecord {
            step: self.step,
            continuity_residual_inf: max_abs(&cont),
            continuity_residual_interior_inf: max_abs_interior(mesh, &cont),
            gauss_residual_inf: max_abs_interior(mesh, &gres),
            max_abs_charge: max_abs(&q_next),
            energy,
            total_charge: q_next.iter().sum(),
            expected_charge: alive.iter().map(|p| p.q).sum(),
            worst_particle_charge_ulps: worst_ulps,
            max_speed: alive.iter().map(|p| p.speed()).fold(0.0, f64::max),
            alive: alive.len(),
            cg_iterations: cg.iterations,
            magnetic_gauss: true,
            watched: self.watch.sample(self.step, &lhs, &q_next),
        };
        self.q = q_next;
        if !record.is_finite() {
            return Err(Error::NonFinite {
                what: "diagnostics",
                step: self.step,
            });
        }
        Ok(record)
    }

    /// Descriptions of every tolerance the record exceeds.
    pub fn violations(&self, r: &DiagnosticsRecord) -> Vec<String> {
        let t = &self.tolerances;
        let mut out = Vec::new();
        let q_max = self.particles.iter().fold(0.0f64, |m, p| m.max(p.q.abs()));
        let cont_scale = q_max / self.solver.dt;
        if r.continuity_residual_inf > t.continuity * cont_scale {
            out.push(format!(
                "step {}: continuity residual {:.3e} C/s",
                r.step, r.continuity_residual_inf
            ));
        }
        let g_scale = if r.max_abs_charge > 0.0 {
            r.max_abs_charge
        } else {
            q_max
        };
        if r.gauss_residual_inf > t.gauss * g_scale {
            out.push(format!(
                "step {}: Gauss residual {:.3e} C",
                r.step, r.gauss_residual_inf
            ));
        }
        if r.energy.relative_residual() > t.energy {
            out.push(format!(
                "step {}: energy balance residual {:.3e} (relative)",
                r.step,
                r.energy.relative_residual()
            ));
        }
        if r.worst_particle_charge_ulps > t.charge_ulps {
            out.push(format!(
                "step {}: particle charge total off by {} ulp",
                r.step, r.worst_particle_charge_ulps
            ));
        }
        out
    }
}

/// Turns a pushed path into edge currents, consuming it.
fn deposit(mesh: &Mesh, charge: f64, d: Displacement, dt: f64) -> Vec<(usize, f64)> {
    current_contributions(mesh, charge, &d.chain, dt)
}

/// Loads the mesh, builds operators, fixes `Δt` and samples particles.
pub fn initialize(scenario: &Scenario) -> Result<SimulationState> {
    scenario.validate()?;
    let mesh = load_mesh(&scenario.mesh_path)?;
    let nf = mesh.num_faces();
    let materials = Materials::uniform(nf, scenario.eps_r * EPS0, scenario.mu_r * MU0);
    let hodge = HodgeOperators::assemble(&mesh, materials.clone())?;
    let system = MaxwellSystem::new(&mesh, hodge);
    let mut solver = SolverConfig {
        dt: 1.0,
        cg_rel_tol: scenario.cg_rel_tol,
        cg_max_iter: scenario.cg_max_iter,
        courant_safety: scenario.courant_safety,
    };
    let courant = system.estimate_courant(&solver)?;
    solver.dt = match scenario.dt {
        Some(dt) => {
            if dt > courant.dt_c && !scenario.allow_unstable {
                return Err(Error::Scenario(format!(
                    "dt = {dt:.4e} s exceeds the stability limit {:.4e} s; use allow_unstable to force it",
                    courant.dt_c
                )));
            }
            dt
        }
        None => scenario.courant_safety * courant.dt_c,
    };
    log::info!("dt_c = {:.5e} s, dt = {:.5e} s", courant.dt_c, solver.dt);
    let watch = WatchList::new(&mesh, &scenario.output.watch)?;
    let particles = sample_particles(&mesh, &scenario.species)?;
    let mut state = SimulationState::new(mesh, materials, solver, particles, scenario.bz)?;
    state.watch = watch;
    state.courant = Some(courant);
    if scenario.half_step_backpush {
        state.half_step_backpush();
    }
    Ok(state)
}

/// Options for [`run`] that do not live in the scenario file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub strict: bool,
    pub steps: Option<u64>,
}

/// Summary of a finished run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub steps: u64,
    pub dt: f64,
    pub dt_c: Option<f64>,
    pub particles: usize,
    pub particles_alive: usize,
    pub total_charge: f64,
    pub max_continuity_residual: f64,
    pub max_gauss_residual: f64,
    pub max_energy_relative_residual: f64,
    pub max_particle_charge_ulps: f64,
    pub max_cg_iterations: usize,
    pub violations: usize,
    pub first_violation: Option<String>,
    pub wall_time_s: f64,
}

struct Outputs {
    diagnostics: AtomicFile,
    watch: AtomicFile,
    particles: Option<AtomicFile>,
    fields: Option<AtomicFile>,
}

impl Outputs {
    fn open(dir: &Path, cfg: &OutputConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = |f: &mut AtomicFile, h: &str| -> Result<()> {
            use std::io::Write;
            writeln!(f.writer(), "{h}").map_err(|e| Error::io(dir, e))
        };
        let mut diagnostics = AtomicFile::create(dir.join("diagnostics.csv"))?;
        header(&mut diagnostics, RECORD_HEADER)?;
        let mut watch = AtomicFile::create(dir.join("watch.csv"))?;
        header(&mut watch, WATCH_HEADER)?;
        let mut particles = None;
        let mut fields = None;
        if cfg.every > 0 && cfg.particles {
            let mut f = AtomicFile::create(dir.join("particles.csv"))?;
            header(&mut f, PARTICLE_HEADER)?;
            particles = Some(f);
        }
        if cfg.every > 0 && cfg.fields {
            let mut f = AtomicFile::create(dir.join("fields.csv"))?;
            header(&mut f, FIELD_HEADER)?;
            fields = Some(f);
        }
        Ok(Outputs {
            diagnostics,
            watch,
            particles,
            fields,
        })
    }

    fn snapshot(&mut self, state: &SimulationState, dir: &Path) -> Result<()> {
        if let Some(f) = &mut self.particles {
            write_particles(f.writer(), state.step, &state.particles)
                .map_err(|e| Error::io(dir, e))?;
        }
        if let Some(f) = &mut self.fields {
            write_fields(f.writer(), state.step, &state.mesh, &state.fields)
                .map_err(|e| Error::io(dir, e))?;
        }
        Ok(())
    }

    fn record(&mut self, r: &DiagnosticsRecord, dir: &Path) -> Result<()> {
        r.write_csv(self.diagnostics.writer())
            .map_err(|e| Error::io(dir, e))?;
        for row in &r.watched {
            row.write_csv(self.watch.writer())
                .map_err(|e| Error::io(dir, e))?;
        }
        Ok(())
    }

    fn commit(self) -> Result<()> {
        self.diagnostics.commit()?;
        self.watch.commit()?;
        if let Some(f) = self.particles {
            f.commit()?;
        }
        if let Some(f) = self.fields {
            f.commit()?;
        }
        Ok(())
    }
}

/// Writes the current particles and fields next to the other outputs.
pub fn dump_state(state: &SimulationState, dir: &Path, tag: &str) -> Result<()> {
    crate::output::write_atomic(dir.join(format!("{tag}_particles.csv")), |w| {
        use std::io::Write;
        writeln!(w, "{PARTICLE_HEADER}")?;
        write_particles(w, state.step, &state.particles)
    })?;
    crate::output::write_atomic(dir.join(format!("{tag}_fields.csv")), |w| {
        use std::io::Write;
        writeln!(w, "{FIELD_HEADER}")?;
        write_fields(w, state.step, &state.mesh, &state.fields)
    })
}

/// Runs a scenario to completion, streaming diagnostics and snapshots into
/// `opts.out_dir` when given. In strict mode the first tolerance violation
/// stops the run with [`Error::Invariant`].
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    let clock = Instant::now();
    let mut state = initialize(scenario)?;
    let steps = opts.steps.unwrap_or(scenario.steps);
    let mut outputs = match &opts.out_dir {
        Some(dir) => Some(Outputs::open(dir, &scenario.output)?),
        None => None,
    };
    let dir = opts.out_dir.clone().unwrap_or_default();
    if let Some(o) = &mut outputs {
        o.snapshot(&state, &dir)?;
    }
    let mut report = RunReport {
        dt: state.dt(),
        dt_c: state.courant.map(|c| c.dt_c),
        particles: state.particles.len(),
        ..RunReport::default()
    };
    let mut failure = None;
    for _ in 0..steps {
        let rec = match state.run_step() {
            Ok(r) => r,
            Err(e) => {
                if opts.out_dir.is_some() {
                    dump_state(&state, &dir, "abort")?;
                }
                failure = Some(e);
                break;
            }
        };
        report.steps = rec.step;
        report.max_continuity_residual = report
            .max_continuity_residual
            .max(rec.continuity_residual_inf);
        report.max_gauss_residual = report.max_gauss_residual.max(rec.gauss_residual_inf);
        report.max_energy_relative_residual = report
            .max_energy_relative_residual
            .max(rec.energy.relative_residual());
        report.max_particle_charge_ulps = report
            .max_particle_charge_ulps
            .max(rec.worst_particle_charge_ulps);
        report.max_cg_iterations = report.max_cg_iterations.max(rec.cg_iterations);
        report.total_charge = rec.total_charge;
        let bad = state.violations(&rec);
        if let Some(o) = &mut outputs {
            o.record(&rec, &dir)?;
            if scenario.output.every > 0 && rec.step % scenario.output.every == 0 {
                o.snapshot(&state, &dir)?;
            }
        }
        if !bad.is_empty() {
            for b in &bad {
                log::warn!("{b}");
            }
            report.violations += bad.len();
            report.first_violation.get_or_insert_with(|| bad[0].clone());
            if opts.strict {
                failure = Some(Error::Invariant(bad.join("; ")));
                break;
            }
        }
    }
    report.particles_alive = state.particles.iter().filter(|p| p.alive).count();
    report.wall_time_s = clock.elapsed().as_secs_f64();
    if let Some(o) = outputs {
        o.commit()?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
