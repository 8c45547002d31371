//! Property suite run by `wpic verify` on a scenario's mesh.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wpic::deposit::{charge_contributions, gather_e, scatter_current, split_segment};
use wpic::diagnostics::continuity_residual;
use wpic::geom::Vec2;
use wpic::hodge::{verify_spd, HodgeOperators, Materials};
use wpic::mesh::{Bary, Mesh, LOCAL_EDGES};
use wpic::whitney::{eval_w1, line_integral_w1};

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        name,
        passed,
        detail,
    }
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

/// Midpoint rule for `∫ W¹·dl` of local edge `k` along `a → b` in face `f`.
fn quadrature(mesh: &Mesh, f: usize, a: Vec2, b: Vec2, k: usize, n: usize) -> f64 {
    let g = mesh.gradients(f);
    let d = b - a;
    let sum: f64 = (0..n)
        .map(|j| {
            let s = (j as f64 + 0.5) / n as f64;
            eval_w1(g, &mesh.barycentric(f, a.lerp(b, s)), k).dot(d)
        })
        .sum();
    sum / n as f64
}

pub fn run_suite(
    mesh: &Mesh,
    materials: Materials,
    corrupt_incidence: bool,
    seed: u64,
) -> wpic::Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut inc = mesh.build_incidence();
    if corrupt_incidence {
        let c = inc.curl.row(0).0[0];
        let v = inc.curl.get(0, c);
        inc.curl.corrupt_entry(0, c, -v);
    }
    let defect = inc.exact_sequence_defect();
    out.push(check(
        "exact sequence S~ C^T = 0",
        defect.is_empty(),
        format!("{} nonzero entries", defect.len()),
    ));

    let h = HodgeOperators::assemble(mesh, materials)?;
    let (a, b) = (verify_spd(&h.star_eps), verify_spd(&h.star_mu_inv));
    out.push(check(
        "Hodge matrices SPD",
        a && b,
        format!("star_eps {a}, star_mu_inv {b}"),
    ));

    let mut worst: f64 = 0.0;
    for f in 0..mesh.num_faces() {
        let p = mesh.face_points(f);
        for (i, [u, v]) in LOCAL_EDGES.into_iter().enumerate() {
            for j in 0..3 {
                let q = quadrature(mesh, f, p[u], p[v], j, 16);
                worst = worst.max((q - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    out.push(check(
        "interpolatory duality",
        worst <= 1e-10,
        format!("max error {worst:.2e}"),
    ));

    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let f = rng.random_range(0..mesh.num_faces());
        let (s, e) = (random_bary(&mut rng), random_bary(&mut rng));
        let k = rng.random_range(0..3);
        let q = quadrature(mesh, f, mesh.point_at(f, &s), mesh.point_at(f, &e), k, 1000);
        worst = worst.max((q - line_integral_w1(&s, &e, k)).abs());
    }
    out.push(check(
        "closed form vs quadrature",
        worst <= 1e-12,
        format!("max error {worst:.2e}"),
    ));

    let (charge, dt) = (-1.6e-19, 1e-10);
    let h_max = mesh.max_edge_length();
    let (mut worst, mut pushes, mut crossings) = (0.0f64, 0, 0);
    let nv = mesh.num_vertices();
    while pushes < 1000 {
        let f = rng.random_range(0..mesh.num_faces());
        let from = mesh.point_at(f, &random_bary(&mut rng));
        let step =
            Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * (1.5 * h_max);
        let chain = split_segment(mesh, f, from, from + step)?;
        if chain.escaped.is_some() {
            continue;
        }
        pushes += 1;
        crossings += usize::from(chain.hops() > 0);
        let (mut q0, mut q1) = (vec![0.0; nv], vec![0.0; nv]);
        for (v, c) in charge_contributions(mesh, charge, f, &mesh.barycentric(f, from)) {
            q0[v] += c;
        }
        let last = chain.segments.last().unwrap();
        for (v, c) in charge_contributions(mesh, charge, last.face, &last.end) {
            q1[v] += c;
        }
        let mut i = vec![0.0; mesh.num_edges()];
        scatter_current(mesh, charge, &chain, dt, &mut i);
        let r = continuity_residual(&q0, &q1, &i, &inc.dual_div, dt);
        worst = worst.max(r.iter().fold(0.0f64, |m, x| m.max(x.abs())) / (charge.abs() / dt));
    }
    out.push(check(
        "discrete continuity",
        worst <= 1e-12,
        format!("max relative {worst:.2e} over {pushes} pushes, {crossings} crossing"),
    ));

    let e0 = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let dofs: Vec<f64> = (0..mesh.num_edges())
        .map(|e| e0.dot(mesh.edge_vector(e)))
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let f = rng.random_range(0..mesh.num_faces());
        let got = gather_e(mesh, &dofs, f, &random_bary(&mut rng));
        worst = worst.max((got - e0).norm() / e0.norm());
    }
    out.push(check(
        "constant field reproduction",
        worst <= 1e-12,
        format!("max relative {worst:.2e}"),
    ));
    Ok(out)
}
