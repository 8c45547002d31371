//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Every reference value is computed here from
//! vertex coordinates and particle states, not from the engine's own
//! diagnostics.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wpic::deposit::{charge_contributions, gather_e, scatter_current, split_segment};
use wpic::diagnostics::ulp;
use wpic::engine::{initialize, Scenario, SimulationState};
use wpic::geom::Vec2;
use wpic::hodge::{verify_spd, HodgeOperators, Materials};
use wpic::maxwell::{FieldState, MaxwellSystem, SolverConfig};
use wpic::mesh::gen::random_mesh;
use wpic::mesh::{load_mesh, Bary, Mesh};
use wpic::whitney::line_integral_w1;

const LOCAL: [[usize; 2]; 3] = [[0, 1], [0, 2], [1, 2]];

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> Scenario {
    Scenario::load(root().join("scenarios").join(name)).unwrap()
}

fn mesh_file(name: &str) -> Mesh {
    load_mesh(root().join("scenarios/meshes").join(name)).unwrap()
}

// Reference geometry, written out from the vertex coordinates.

fn bary_of(p: [Vec2; 3], x: Vec2) -> Bary {
    let d = (p[1] - p[0]).cross(p[2] - p[0]);
    [
        (p[1] - x).cross(p[2] - x) / d,
        (p[2] - x).cross(p[0] - x) / d,
        (p[0] - x).cross(p[1] - x) / d,
    ]
}

fn grads_of(p: [Vec2; 3]) -> [Vec2; 3] {
    let d = (p[1] - p[0]).cross(p[2] - p[0]);
    [
        Vec2::new(p[1].y - p[2].y, p[2].x - p[1].x) * (1.0 / d),
        Vec2::new(p[2].y - p[0].y, p[0].x - p[2].x) * (1.0 / d),
        Vec2::new(p[0].y - p[1].y, p[1].x - p[0].x) * (1.0 / d),
    ]
}

fn point_of(p: [Vec2; 3], l: &Bary) -> Vec2 {
    p[0] * l[0] + p[1] * l[1] + p[2] * l[2]
}

fn random_bary<R: Rng>(rng: &mut R) -> Bary {
    let (a, b): (f64, f64) = (rng.random(), rng.random());
    let (a, b) = if a + b > 1.0 {
        (1.0 - a, 1.0 - b)
    } else {
        (a, b)
    };
    [1.0 - a - b, a, b]
}

/// Nodal charge of the selected particles at their current positions.
fn reference_charge(mesh: &Mesh, s: &SimulationState, pick: &[bool]) -> Vec<f64> {
    let mut q = vec![0.0; mesh.num_vertices()];
    for (p, _) in s.particles.iter().zip(pick).filter(|(_, &k)| k) {
        let l = bary_of(mesh.face_points(p.cell), p.r);
        for (v, lv) in mesh.face(p.cell).into_iter().zip(l) {
            q[v] += p.q * lv;
        }
    }
    q
}

fn inf(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Default)]
struct RunStats {
    steps: u64,
    gauss_interior: f64,
    gauss_watched: f64,
    continuity: f64,
    energy: f64,
    charge_ulps: f64,
    speed_dev: f64,
    path: Vec<Vec2>,
    crossings: usize,
    pushes: usize,
    elapsed: Duration,
}

/// Steps a scenario and checks each step against the reference quantities.
fn run_checked(mut sc: Scenario, steps: u64) -> RunStats {
    sc.steps = steps;
    let t0 = Instant::now();
    let mut s = initialize(&sc).unwrap();
    let dt = s.dt();
    let q_abs = inf(s.particles.iter().map(|p| p.q));
    let speeds0: Vec<f64> = s.particles.iter().map(|p| p.speed()).collect();
    let interior = s.mesh.interior_vertices();
    let watched = s.watch.vertices().to_vec();
    let mut st = RunStats {
        steps,
        ..Default::default()
    };
    st.path.push(s.particles[0].r);
    let (ne, nv) = (s.mesh.num_edges(), s.mesh.num_vertices());
    let mut scratch_v = vec![0.0; nv];
    let mut ce = vec![0.0; s.mesh.num_faces()];

    for _ in 0..steps {
        let alive0: Vec<bool> = s.particles.iter().map(|p| p.alive).collect();
        let cells0: Vec<usize> = s.particles.iter().map(|p| p.cell).collect();
        let q0 = reference_charge(&s.mesh, &s, &alive0);
        let e0 = s.fields.e.clone();
        let b0 = s.fields.b.clone();
        s.run_step().unwrap();
        let (m, sys, f) = (&s.mesh, &s.system, &s.fields);

        // Per-particle charge shares.
        for p in s.particles.iter().filter(|p| p.alive) {
            let sh = charge_contributions(m, p.q, p.cell, &m.barycentric(p.cell, p.r));
            st.charge_ulps = st
                .charge_ulps
                .max((sh[0].1 + sh[1].1 + sh[2].1 - p.q).abs() / ulp(p.q));
        }

        // Continuity over everything that was alive when the step began.
        let q1 = reference_charge(m, &s, &alive0);
        sys.incidence.dual_div.mul_vec(&f.i, &mut scratch_v);
        let cont = inf((0..nv).map(|v| (q1[v] - q0[v]) / dt + scratch_v[v]));
        st.continuity = st.continuity.max(cont / (q_abs / dt));
        for (k, p) in s.particles.iter().enumerate() {
            if alive0[k] && !p.immobile {
                st.pushes += 1;
                st.crossings += usize::from(p.cell != cells0[k]);
            }
        }

        // Gauss's law with the charge of the survivors.
        let alive: Vec<bool> = s.particles.iter().map(|p| p.alive).collect();
        let q = reference_charge(m, &s, &alive);
        sys.incidence
            .dual_div
            .mul_vec(&sys.hodge.star_eps.apply(&f.e), &mut scratch_v);
        let scale = if inf(q.iter().copied()) > 0.0 {
            inf(q.iter().copied())
        } else {
            q_abs
        };
        st.gauss_interior = st
            .gauss_interior
            .max(inf(interior.iter().map(|&v| scratch_v[v] - q[v])) / scale);
        st.gauss_watched = st
            .gauss_watched
            .max(inf(watched.iter().map(|&v| scratch_v[v] - q[v])) / scale);

        // Energy balance with the staggered magnetic energy.
        sys.incidence.curl.mul_vec(&f.e, &mut ce);
        let b_ahead: Vec<f64> = f.b.iter().zip(&ce).map(|(b, c)| b - dt * c).collect();
        let mass = &sys.hodge.star_eps;
        let kk = &sys.hodge.star_mu_inv;
        let d_we = 0.5 * (mass.quad_form(&f.e) - mass.quad_form(&e0));
        let db: Vec<f64> = b_ahead.iter().zip(&b0).map(|(a, b)| a - b).collect();
        let d_wm = 0.5 * kk.bilinear(&f.b, &db);
        let ps_dt = dt
            * (0..ne)
                .map(|k| 0.5 * (e0[k] + f.e[k]) * f.i[k])
                .sum::<f64>();
        let total = 0.5 * mass.quad_form(&f.e) + 0.5 * kk.bilinear(&f.b, &b_ahead);
        let scale = total.abs().max(ps_dt.abs());
        let res = (d_we + d_wm + ps_dt).abs();
        st.energy = st.energy.max(if scale > 0.0 { res / scale } else { res });

        for (p, v0) in s.particles.iter().zip(&speeds0) {
            if p.alive && *v0 > 0.0 {
                st.speed_dev = st.speed_dev.max((p.speed() - v0).abs() / v0);
            }
        }
        st.path.push(s.particles[0].r);
    }
    st.elapsed = t0.elapsed();
    st
}

/// Algebraic least-squares circle: centre and radius.
fn kasa_fit(pts: &[Vec2]) -> (Vec2, f64) {
    let mut a = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for p in pts {
        let row = [p.x, p.y, 1.0];
        let z = -(p.x * p.x + p.y * p.y);
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += row[i] * row[j];
            }
            rhs[i] += row[i] * z;
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    let sol: Vec<f64> = (0..3)
        .map(|k| {
            let mut m = a;
            for i in 0..3 {
                m[i][k] = rhs[i];
            }
            det(&m) / d
        })
        .collect();
    let c = Vec2::new(-0.5 * sol[0], -0.5 * sol[1]);
    (c, (c.x * c.x + c.y * c.y - sol[2]).sqrt())
}

struct Outcome {
    passed: bool,
    detail: String,
    budget: Option<Duration>,
}

fn outcome(passed: bool, detail: String, budget_s: Option<u64>) -> Outcome {
    Outcome {
        passed,
        detail,
        budget: budget_s.map(Duration::from_secs),
    }
}

fn cyclotron_radius(run: &RunStats) -> Outcome {
    let (c, r) = kasa_fit(&run.path);
    let dev = inf(run.path.iter().map(|p| (*p - c).norm() - 0.25)) / 0.25;
    let fit = (r - 0.25).abs() / 0.25;
    let pass = dev <= 0.01 && fit <= 0.01;
    outcome(
        pass,
        format!(
            "{} steps, fitted r = {r:.6} m at ({:.2e}, {:.2e}), max radial deviation {:.3}%",
            run.steps,
            c.x,
            c.y,
            100.0 * dev
        ),
        Some(5),
    )
}

fn speed_conservation(run: &RunStats) -> Outcome {
    outcome(
        run.speed_dev <= 1e-10,
        format!(
            "{} steps, max relative |v| change {:.2e}",
            run.steps, run.speed_dev
        ),
        Some(60),
    )
}

fn charge_totality(runs: &[(&str, &RunStats)]) -> Outcome {
    let worst = runs.iter().fold(0.0f64, |m, (_, r)| m.max(r.charge_ulps));
    let names: Vec<String> = runs
        .iter()
        .map(|(n, r)| format!("{n} {:.0}", r.charge_ulps))
        .collect();
    outcome(
        worst <= 4.0,
        format!("worst {worst} ulp ({})", names.join(", ")),
        None,
    )
}

fn continuity(runs: &[(&str, &RunStats)]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
    let (charge, dt) = (-1.6e-19, 1e-10);
    let (mut worst, mut pushes, mut crossings, mut escapes) = (0.0f64, 0usize, 0usize, 0usize);
    while pushes < 10_000 {
        let mesh = random_mesh(&mut rng, 8).unwrap();
        let (nv, ne) = (mesh.num_vertices(), mesh.num_edges());
        let h = mesh.max_edge_length();
        for _ in 0..100 {
            let f = rng.random_range(0..mesh.num_faces());
            let from = point_of(mesh.face_points(f), &random_bary(&mut rng));
            let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let len = rng.random_range(0.0..2.0 * h);
            let to = from + Vec2::new(ang.cos(), ang.sin()) * len;
            let chain = split_segment(&mesh, f, from, to).unwrap();
            pushes += 1;
            crossings += usize::from(chain.hops() > 0);
            escapes += usize::from(chain.escaped.is_some());
            let end = chain.end_point(&mesh);
            let last = chain.final_face();
            let (mut q0, mut q1) = (vec![0.0; nv], vec![0.0; nv]);
            for (v, l) in mesh
                .face(f)
                .into_iter()
                .zip(bary_of(mesh.face_points(f), from))
            {
                q0[v] += charge * l;
            }
            for (v, l) in mesh
                .face(last)
                .into_iter()
                .zip(bary_of(mesh.face_points(last), end))
            {
                q1[v] += charge * l;
            }
            let mut i = vec![0.0; ne];
            scatter_current(&mesh, charge, &chain, dt, &mut i);
            let mut div = vec![0.0; nv];
            mesh.build_incidence().dual_div.mul_vec(&i, &mut div);
            let r = inf((0..nv).map(|v| (q1[v] - q0[v]) / dt + div[v]));
            worst = worst.max(r / (charge.abs() / dt));
        }
    }
    let frac = crossings as f64 / pushes as f64;
    let in_runs = runs.iter().fold(0.0f64, |m, (_, r)| m.max(r.continuity));
    let run_cross: usize = runs.iter().map(|(_, r)| r.crossings).sum();
    let run_push: usize = runs.iter().map(|(_, r)| r.pushes).sum();
    outcome(
        worst <= 1e-12 && in_runs <= 1e-12 && frac >= 0.1,
        format!(
            "random pushes: {pushes}, {:.0}% crossing, {escapes} absorbed, max {worst:.2e}; scenario steps: {run_push} pushes, {run_cross} crossing, max {in_runs:.2e} (x |Q|/dt)",
            100.0 * frac
        ),
        Some(10),
    )
}

fn gauss(run: &RunStats) -> Outcome {
    outcome(
        run.gauss_watched <= 1e-10 && run.gauss_interior <= 1e-10,
        format!(
            "{} steps, watched {:.2e}, all interior {:.2e} (x max|q|)",
            run.steps, run.gauss_watched, run.gauss_interior
        ),
        Some(120),
    )
}

fn energy(run: &RunStats) -> Outcome {
    outcome(
        run.energy <= 1e-9,
        format!(
            "{} steps, max relative residual {:.2e}",
            run.steps, run.energy
        ),
        Some(180),
    )
}

fn closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mesh = random_mesh(&mut rng, 6).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let f = rng.random_range(0..mesh.num_faces());
        let p = mesh.face_points(f);
        let g = grads_of(p);
        let (s, e) = (random_bary(&mut rng), random_bary(&mut rng));
        let (a, b) = (point_of(p, &s), point_of(p, &e));
        for (k, [i, j]) in LOCAL.into_iter().enumerate() {
            let n = 1000;
            let sum: f64 = (0..n)
                .map(|m| {
                    let l = bary_of(p, a.lerp(b, (m as f64 + 0.5) / n as f64));
                    (g[j] * l[i] - g[i] * l[j]).dot(b - a)
                })
                .sum();
            worst = worst.max((sum / n as f64 - line_integral_w1(&s, &e, k)).abs());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("1000 segments x 3 edges, max error {worst:.2e}"),
        Some(1),
    )
}

fn structural() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut bad, mut spd) = (0, 0);
    for _ in 0..50 {
        let mesh = random_mesh(&mut rng, 10).unwrap();
        let inc = mesh.build_incidence();
        // (S~ Cᵀ)[v, f] only involves the edges of f.
        for f in 0..mesh.num_faces() {
            for v in mesh.face(f) {
                let s: i64 = mesh
                    .face_edges(f)
                    .iter()
                    .map(|fe| {
                        i64::from(inc.dual_div.get(v, fe.edge))
                            * i64::from(inc.curl.get(f, fe.edge))
                    })
                    .sum();
                bad += usize::from(s != 0);
            }
        }
        let h = HodgeOperators::assemble(&mesh, Materials::vacuum(mesh.num_faces())).unwrap();
        spd += usize::from(verify_spd(&h.star_eps) && verify_spd(&h.star_mu_inv));
    }
    let mut broken = random_mesh(&mut rng, 4).unwrap().build_incidence();
    let c = broken.curl.row(0).0[0];
    let v = broken.curl.get(0, c);
    broken.curl.corrupt_entry(0, c, -v);
    let control = !broken.exact_sequence_defect().is_empty();
    outcome(
        bad == 0 && spd == 50 && control,
        format!(
            "50 meshes: {bad} nonzero entries, {spd}/50 SPD; flipped entry detected: {control}"
        ),
        Some(5),
    )
}

fn stability() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for name in ["square10.mesh", "graded28.mesh"] {
        let mesh = mesh_file(name);
        let sys = MaxwellSystem::new(
            &mesh,
            HodgeOperators::assemble(&mesh, Materials::vacuum(mesh.num_faces())).unwrap(),
        );
        let dt_c = sys.estimate_courant(&SolverConfig::default()).unwrap().dt_c;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut init = FieldState::zeros(&mesh);
        for &k in sys.free_edges() {
            init.e[k] = rng.random_range(-1.0..1.0);
        }
        let plain = |f: &FieldState| {
            0.5 * sys.hodge.star_eps.quad_form(&f.e) + 0.5 * sys.hodge.star_mu_inv.quad_form(&f.b)
        };
        let w_init = plain(&init);

        let cfg = SolverConfig {
            dt: 0.9 * dt_c,
            ..SolverConfig::default()
        };
        let mut f = init.clone();
        let mut b_prev = f.b.clone();
        sys.step_b(&mut f, cfg.dt);
        let conserved = |f: &FieldState, bp: &[f64]| {
            0.5 * sys.hodge.star_eps.quad_form(&f.e)
                + 0.5 * sys.hodge.star_mu_inv.bilinear(bp, &f.b)
        };
        let w0 = conserved(&f, &b_prev);
        let (mut drift, mut peak) = (0.0f64, 0.0f64);
        for _ in 0..10_000 {
            sys.step_e(&mut f, &cfg).unwrap();
            b_prev.copy_from_slice(&f.b);
            sys.step_b(&mut f, cfg.dt);
            drift = drift.max(((conserved(&f, &b_prev) - w0) / w0).abs());
            peak = peak.max(plain(&f) / w_init);
        }
        let stable = drift <= 1e-6 && peak <= 10.0;

        let cfg = SolverConfig {
            dt: 1.5 * dt_c,
            ..SolverConfig::default()
        };
        let mut f = init.clone();
        let mut blew = None;
        for n in 1..=1000 {
            sys.step_b(&mut f, cfg.dt);
            sys.step_e(&mut f, &cfg).unwrap();
            if plain(&f).is_nan() || plain(&f) > 1e10 * w_init {
                blew = Some(n);
                break;
            }
        }
        pass &= stable && blew.is_some();
        lines.push(format!(
            "{name}: dt_c {dt_c:.4e} s, 0.9 dt_c drift {drift:.1e} peak {peak:.2}x, 1.5 dt_c grows 1e10x by step {}",
            blew.map_or("never".to_string(), |n| n.to_string())
        ));
    }
    outcome(pass, lines.join("; "), Some(60))
}

fn constant_field() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for mesh in [
        mesh_file("graded28.mesh"),
        random_mesh(&mut rng, 8).unwrap(),
    ] {
        let e0 = Vec2::new(rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3));
        let dofs: Vec<f64> = mesh
            .edges()
            .iter()
            .map(|&[a, b]| e0.dot(mesh.vertex(b) - mesh.vertex(a)))
            .collect();
        for _ in 0..100 {
            let f = rng.random_range(0..mesh.num_faces());
            let got = gather_e(&mesh, &dofs, f, &random_bary(&mut rng));
            worst = worst.max((got - e0).norm() / e0.norm());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("2 meshes x 100 points, max relative error {worst:.2e}"),
        Some(1),
    )
}

fn main() -> ExitCode {
    let mut out = std::io::stdout().lock();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, t: Duration, o: Outcome| {
        let pass = o.passed && o.budget.is_none_or(|b| t <= b);
        failed += usize::from(!pass);
        let budget = o
            .budget
            .map_or(String::new(), |b| format!(" / {}s", b.as_secs()));
        writeln!(
            out,
            "criterion {n:>2} {name:<26} {} [{:.2}s{budget}] {}",
            if pass { "PASS" } else { "FAIL" },
            t.as_secs_f64(),
            o.detail
        )
        .unwrap();
    };

    let cyc = run_checked(scenario("cyclotron.ini"), 200);
    report(1, "cyclotron radius", cyc.elapsed, cyclotron_radius(&cyc));

    let long = run_checked(scenario("cyclotron.ini"), 100_000);
    report(
        2,
        "speed conservation",
        long.elapsed,
        speed_conservation(&long),
    );

    let three = run_checked(scenario("three_particle.ini"), 10_000);
    let mut plasma_sc = scenario("plasma_ball.ini");
    for s in &mut plasma_sc.species {
        s.count = 200;
    }
    let plasma = run_checked(plasma_sc, 10_000);
    let runs = [
        ("cyclotron", &long),
        ("three-particle", &three),
        ("plasma", &plasma),
    ];
    let all = [("cyclotron-200", &cyc), runs[0], runs[1], runs[2]];
    report(
        3,
        "charge totality",
        all.iter().map(|(_, r)| r.elapsed).sum(),
        charge_totality(&all),
    );

    let t = Instant::now();
    let o = continuity(&runs);
    report(4, "discrete continuity", t.elapsed(), o);
    report(5, "gauss law", three.elapsed, gauss(&three));
    report(6, "energy balance", plasma.elapsed, energy(&plasma));
    let t = Instant::now();
    let o = closed_form();
    report(7, "closed form vs quadrature", t.elapsed(), o);
    let t = Instant::now();
    let o = structural();
    report(8, "structural exactness", t.elapsed(), o);
    let t = Instant::now();
    let o = stability();
    report(9, "stability bracketing", t.elapsed(), o);
    let t = Instant::now();
    let o = constant_field();
    report(10, "constant field", t.elapsed(), o);

    drop(out);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
