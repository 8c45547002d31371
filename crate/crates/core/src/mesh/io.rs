//! Plain-text mesh files.
//!
//! ```text
//! # comment
//! NV 2 [HOLES]
//! id x y          (NV lines, ids 1-based)
//! NF 3
//! id v1 v2 v3     (NF lines, vertex ids 1-based)
//! ```
//!
//! The optional `HOLES` token on the header sets the number of holes used
//! by the Euler check (default 0).

use std::io::Write;
use std::path::Path;

use super::Mesh;
use crate::error::{Error, Result};
use crate::geom::Vec2;

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&text, path)
}

pub fn parse_mesh(text: &str, path: &Path) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
    };

    let (ln, header) = next("vertex header")?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() < 2 || tok.len() > 3 {
        return Err(err(ln, "vertex header must be `NV 2 [HOLES]`".into()));
    }
    let nv: usize = tok[0]
        .parse()
        .map_err(|_| err(ln, format!("bad vertex count `{}`", tok[0])))?;
    if tok[1] != "2" {
        return Err(err(
            ln,
            format!("only dimension 2 is supported, got `{}`", tok[1]),
        ));
    }
    let holes: usize = match tok.get(2) {
        Some(h) => h
            .parse()
            .map_err(|_| err(ln, format!("bad hole count `{h}`")))?,
        None => 0,
    };

    let mut vertices = vec![None; nv];
    for _ in 0..nv {
        let (ln, l) = next("vertex line")?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 3 {
            return Err(err(ln, "vertex line must be `id x y`".into()));
        }
        let id = parse_id(t[0], nv).map_err(|m| err(ln, m))?;
        let x: f64 = t[1]
            .parse()
            .map_err(|_| err(ln, format!("bad coordinate `{}`", t[1])))?;
        let y: f64 = t[2]
            .parse()
            .map_err(|_| err(ln, format!("bad coordinate `{}`", t[2])))?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(err(ln, "non-finite coordinate".into()));
        }
        if vertices[id].replace(Vec2::new(x, y)).is_some() {
            return Err(err(ln, format!("vertex id {} defined twice", id + 1)));
        }
    }
    let vertices: Vec<Vec2> = vertices.into_iter().map(|v| v.unwrap()).collect();

    let (ln, header) = next("face header")?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 2 || tok[1] != "3" {
        return Err(err(ln, "face header must be `NF 3`".into()));
    }
    let nf: usize = tok[0]
        .parse()
        .map_err(|_| err(ln, format!("bad face count `{}`", tok[0])))?;
    let mut faces = vec![None; nf];
    for _ in 0..nf {
        let (ln, l) = next("face line")?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 4 {
            return Err(err(ln, "face line must be `id v1 v2 v3`".into()));
        }
        let id = parse_id(t[0], nf).map_err(|m| err(ln, m))?;
        let mut tri = [0usize; 3];
        for k in 0..3 {
            tri[k] = parse_id(t[k + 1], nv).map_err(|m| err(ln, m))?;
        }
        if faces[id].replace(tri).is_some() {
            return Err(err(ln, format!("face id {} defined twice", id + 1)));
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(err(ln, "trailing content after faces".into()));
    }
    let faces: Vec<[usize; 3]> = faces.into_iter().map(|f| f.unwrap()).collect();
    Mesh::new(vertices, &faces, holes)
}

fn parse_id(tok: &str, count: usize) -> std::result::Result<usize, String> {
    match tok.parse::<usize>() {
        Ok(id) if id >= 1 && id <= count => Ok(id - 1),
        _ => Err(format!("id `{tok}` not in 1..={count}")),
    }
}

/// Writes `mesh` in the same text format, preserving vertex and face order.
pub fn write_mesh<W: Write>(mesh: &Mesh, out: &mut W) -> std::io::Result<()> {
    if mesh.holes() > 0 {
        writeln!(out, "{} 2 {}", mesh.num_vertices(), mesh.holes())?;
    } else {
        writeln!(out, "{} 2", mesh.num_vertices())?;
    }
    for (k, p) in mesh.vertices().iter().enumerate() {
        writeln!(out, "{} {:e} {:e}", k + 1, p.x, p.y)?;
    }
    writeln!(out, "{} 3", mesh.num_faces())?;
    for (k, f) in mesh.faces().iter().enumerate() {
        writeln!(out, "{} {} {} {}", k + 1, f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}
