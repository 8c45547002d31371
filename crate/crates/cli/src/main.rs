//! `wpic`: run scenarios, inspect meshes, estimate the stability limit,
//! verify discrete invariants and export the operators.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 invariant violation.

mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wpic::engine::{self, RunOptions, Scenario};
use wpic::hodge::{HodgeOperators, Materials};
use wpic::maxwell::{MaxwellSystem, SolverConfig};
use wpic::mesh::{load_mesh, Mesh};
use wpic::output::write_atomic;
use wpic::{Error, EPS0, MU0};

#[derive(Parser)]
#[command(
    name = "wpic",
    version,
    about = "Charge-conserving particle-in-cell on triangle meshes"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Input {
    /// Scenario file.
    #[arg(long = "scenario", value_name = "PATH")]
    scenario_flag: Option<PathBuf>,
    /// Scenario file (positional form).
    #[arg(value_name = "SCENARIO", conflicts_with = "scenario_flag")]
    scenario_pos: Option<PathBuf>,
    /// Mesh file, used with vacuum materials when no scenario is given.
    #[arg(long, value_name = "PATH")]
    mesh: Option<PathBuf>,
}

impl Input {
    fn scenario_path(&self) -> Option<&Path> {
        self.scenario_flag
            .as_deref()
            .or(self.scenario_pos.as_deref())
    }

    /// Mesh and materials from the scenario, or from `--mesh` with vacuum.
    fn load(&self) -> wpic::Result<(Mesh, Materials, Option<Scenario>)> {
        if let Some(path) = self.scenario_path() {
            let sc = Scenario::load(path)?;
            let mesh = load_mesh(&sc.mesh_path)?;
            let m = Materials::uniform(mesh.num_faces(), sc.eps_r * EPS0, sc.mu_r * MU0);
            return Ok((mesh, m, Some(sc)));
        }
        match &self.mesh {
            Some(path) => {
                let mesh = load_mesh(path)?;
                let m = Materials::vacuum(mesh.num_faces());
                Ok((mesh, m, None))
            }
            None => Err(Error::Scenario("give a scenario file or --mesh".into())),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write diagnostics, snapshots and a summary.
    Run {
        #[command(flatten)]
        input: Input,
        /// Output directory.
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
        /// Exit with code 2 at the first tolerance violation.
        #[arg(long)]
        strict: bool,
        /// Override every species seed.
        #[arg(long, value_name = "U64")]
        seed: Option<u64>,
        /// Accept a time step above the stability limit.
        #[arg(long)]
        allow_unstable: bool,
        /// Override the step count.
        #[arg(long, value_name = "N")]
        steps: Option<u64>,
    },
    /// Load a mesh and print its statistics.
    CheckMesh {
        #[command(flatten)]
        input: Input,
    },
    /// Print the stability limit and the suggested time step.
    Courant {
        #[command(flatten)]
        input: Input,
    },
    /// Run the invariant suite on the mesh; exit 2 if any check fails.
    Verify {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_name = "U64", default_value_t = 1)]
        seed: u64,
        /// Flip one curl entry before checking (negative control).
        #[arg(long, hide = true)]
        corrupt_incidence: bool,
    },
    /// Write C, S~, [*eps] and [*mu^-1] in Matrix Market format.
    DumpMatrices {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WPIC_LOG", "warn")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot set thread count: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Invariant(_)) {
                2
            } else {
                1
            })
        }
    }
}

fn dispatch(cmd: Command) -> wpic::Result<ExitCode> {
    match cmd {
        Command::Run {
            input,
            out,
            strict,
            seed,
            allow_unstable,
            steps,
        } => {
            let path = input
                .scenario_path()
                .ok_or_else(|| Error::Scenario("run needs a scenario file".into()))?;
            let mut sc = Scenario::load(path)?;
            if let Some(s) = seed {
                sc.override_seed(s);
            }
            sc.allow_unstable |= allow_unstable;
            let opts = RunOptions {
                out_dir: Some(out.clone()),
                strict,
                steps,
            };
            let report = engine::run(&sc, &opts)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_atomic(out.join("summary.json"), |w| {
                use std::io::Write;
                writeln!(w, "{json}")
            })?;
            println!("{json}");
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckMesh { input } => {
            let (mesh, _, _) = input.load()?;
            let bv = (0..mesh.num_vertices())
                .filter(|&v| mesh.is_boundary_vertex(v))
                .count();
            let be = (0..mesh.num_edges())
                .filter(|&e| mesh.is_boundary_edge(e))
                .count();
            println!("vertices            {}", mesh.num_vertices());
            println!("edges               {}", mesh.num_edges());
            println!("faces               {}", mesh.num_faces());
            println!("boundary vertices   {bv}");
            println!("boundary edges      {be}");
            println!("holes               {}", mesh.holes());
            println!("euler characteristic {}", mesh.euler_characteristic());
            println!(
                "edge length         {:.6e} .. {:.6e} m",
                mesh.min_edge_length(),
                mesh.max_edge_length()
            );
            println!(
                "total area          {:.6e} m^2",
                mesh.areas().iter().sum::<f64>()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Courant { input } => {
            let (mesh, materials, sc) = input.load()?;
            let mut cfg = SolverConfig::default();
            if let Some(sc) = &sc {
                cfg.cg_max_iter = sc.cg_max_iter;
                cfg.courant_safety = sc.courant_safety;
            }
            let system = MaxwellSystem::new(&mesh, HodgeOperators::assemble(&mesh, materials)?);
            let est = system.estimate_courant(&cfg)?;
            println!("lambda_max   {:.10e} s^-2", est.lambda_max);
            println!("dt_c         {:.10e} s", est.dt_c);
            println!(
                "suggested dt {:.10e} s (safety {})",
                cfg.courant_safety * est.dt_c,
                cfg.courant_safety
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            input,
            seed,
            corrupt_incidence,
        } => {
            let (mesh, materials, _) = input.load()?;
            let checks = verify::run_suite(&mesh, materials, corrupt_incidence, seed)?;
            let mut ok = true;
            for c in &checks {
                println!(
                    "{:<4} {:<30} {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                ok &= c.passed;
            }
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::DumpMatrices { input, out } => {
            let (mesh, materials, _) = input.load()?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let inc = mesh.build_incidence();
            let h = HodgeOperators::assemble(&mesh, materials)?;
            write_atomic(out.join("curl.mtx"), |w| {
                inc.curl.write_matrix_market(w, "integer")
            })?;
            write_atomic(out.join("dual_div.mtx"), |w| {
                inc.dual_div.write_matrix_market(w, "integer")
            })?;
            write_atomic(out.join("star_eps.mtx"), |w| {
                h.star_eps.write_matrix_market(w, "real")
            })?;
            write_atomic(out.join("star_mu_inv.mtx"), |w| {
                h.star_mu_inv.write_matrix_market(w, "real")
            })?;
            println!("wrote 4 matrices to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
