//! Regenerates the meshes under `scenarios/meshes`.
//!
//! ```text
//! cargo run -p wpic-core --example gen_meshes -- scenarios/meshes
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use wpic::mesh::{gen, write_mesh, Mesh};

fn save(mesh: &Mesh, path: PathBuf, note: &str) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(&path)?);
    writeln!(out, "# {note}")?;
    writeln!(
        out,
        "# {} vertices, {} edges, {} faces",
        mesh.num_vertices(),
        mesh.num_edges(),
        mesh.num_faces()
    )?;
    write_mesh(mesh, &mut out)?;
    out.flush()?;
    println!("{}: {} faces", path.display(), mesh.num_faces());
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "scenarios/meshes".into()),
    );
    std::fs::create_dir_all(&dir)?;

    let square = gen::rect_grid(10, 10, -0.5, 0.5, -0.5, 0.5)?;
    save(
        &square,
        dir.join("square10.mesh"),
        "uniform 10x10 grid on [-0.5, 0.5]^2, h = 0.1 m",
    )?;

    let axis = gen::graded_axis(14, 0.5, 0.01);
    let graded = gen::tensor_grid(&axis, &axis)?;
    save(
        &graded,
        dir.join("graded28.mesh"),
        "28x28 grid on [-0.5, 0.5]^2 graded from 0.01 m at the center",
    )?;
    Ok(())
}
