//! Output files written through a temporary sibling and renamed into place,
//! so readers never see a truncated file.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::deposit::gather_b;
use crate::error::{Error, Result};
use crate::maxwell::FieldState;
use crate::mesh::Mesh;
use crate::pusher::Particle;

pub struct AtomicFile {
    target: PathBuf,
    tmp: PathBuf,
    out: BufWriter<File>,
}

impl AtomicFile {
    pub fn create(target: impl AsRef<Path>) -> Result<Self> {
        let target = target.as_ref().to_path_buf();
        let mut name = target.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        let tmp = target.with_file_name(name);
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        Ok(AtomicFile {
            target,
            tmp,
            out: BufWriter::new(file),
        })
    }

    pub fn writer(&mut self) -> &mut BufWriter<File> {
        &mut self.out
    }

    /// Flushes, syncs and renames over the target.
    pub fn commit(self) -> Result<()> {
        let AtomicFile { target, tmp, out } = self;
        let file = out
            .into_inner()
            .map_err(|e| Error::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))
    }
}

/// Writes a whole file atomically.
pub fn write_atomic(
    path: impl AsRef<Path>,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut f = AtomicFile::create(path.as_ref())?;
    body(f.writer()).map_err(|e| Error::io(path.as_ref(), e))?;
    f.commit()
}

pub const PARTICLE_HEADER: &str = "step,id,species,x,y,vx,vy,vz,cell,alive";

pub fn write_particles<W: Write>(
    out: &mut W,
    step: u64,
    particles: &[Particle],
) -> std::io::Result<()> {
    for (id, p) in particles.iter().enumerate() {
        writeln!(
            out,
            "{step},{id},{},{:e},{:e},{:e},{:e},{:e},{},{}",
            p.species, p.r.x, p.r.y, p.v[0], p.v[1], p.v[2], p.cell, p.alive as u8
        )?;
    }
    Ok(())
}

pub const FIELD_HEADER: &str = "step,kind,index,value";

/// Edge voltages, face fluxes and the face-constant `B_z`, keyed by global index.
pub fn write_fields<W: Write>(
    out: &mut W,
    step: u64,
    mesh: &Mesh,
    f: &FieldState,
) -> std::io::Result<()> {
    for (k, v) in f.e.iter().enumerate() {
        writeln!(out, "{step},e,{k},{v:e}")?;
    }
    for (k, v) in f.b.iter().enumerate() {
        writeln!(out, "{step},b,{k},{v:e}")?;
    }
    for k in 0..f.b.len() {
        writeln!(out, "{step},bz,{k},{:e}", gather_b(mesh, &f.b, k))?;
    }
    Ok(())
}
