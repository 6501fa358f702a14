//! Plain-text mesh format.
//!
//! ```text
//! mesh 2d v1
//! vertices N
//! x y                  (N lines)
//! triangles M
//! i j k region         (M lines, region: 0 background / 1 inclusion)
//! boundary L
//! n v0 v1 ... v_{n-1}  (L lines, one loop each)
//! interface P
//! n v0 v1 ... v_{n-1}  (P lines)
//! ```

use super::{Mesh, Region};
use crate::{Error, Result, Vec2};
use std::fmt::Write as _;
use std::path::Path;

pub fn write_mesh_text(path: &Path, mesh: &Mesh) -> Result<()> {
    let mut out = String::new();
    out.push_str("mesh 2d v1\n");
    let _ = writeln!(out, "vertices {}", mesh.n_vertices());
    for p in &mesh.vertices {
        let _ = writeln!(out, "{:.17e} {:.17e}", p.x, p.y);
    }
    let _ = writeln!(out, "triangles {}", mesh.n_triangles());
    for (tri, reg) in mesh.triangles.iter().zip(&mesh.region) {
        let r = match reg {
            Region::Background => 0,
            Region::Inclusion => 1,
        };
        let _ = writeln!(out, "{} {} {} {}", tri[0], tri[1], tri[2], r);
    }
    let _ = writeln!(out, "boundary {}", mesh.boundary_loops.len());
    for lp in &mesh.boundary_loops {
        let _ = write!(out, "{}", lp.len());
        for v in lp {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "interface {}", mesh.interface_loops.len());
    for lp in &mesh.interface_loops {
        let _ = write!(out, "{}", lp.len());
        for v in lp {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_mesh_text(path: &Path) -> Result<Mesh> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let bad = |what: &str| Error::InvalidInput(format!("mesh file: {what}"));

    let header = lines.next().ok_or_else(|| bad("missing header"))?;
    if header.trim() != "mesh 2d v1" {
        return Err(bad("unrecognized header"));
    }

    let n: usize = expect_count(lines.next(), "vertices")?;
    let mut vertices = Vec::with_capacity(n);
    for _ in 0..n {
        let line = lines.next().ok_or_else(|| bad("truncated vertex list"))?;
        let mut it = line.split_whitespace();
        let x: f64 = parse(it.next(), "vertex x")?;
        let y: f64 = parse(it.next(), "vertex y")?;
        vertices.push(Vec2::new(x, y));
    }

    let m: usize = expect_count(lines.next(), "triangles")?;
    let mut triangles = Vec::with_capacity(m);
    let mut region = Vec::with_capacity(m);
    for _ in 0..m {
        let line = lines.next().ok_or_else(|| bad("truncated triangle list"))?;
        let mut it = line.split_whitespace();
        let i: usize = parse(it.next(), "triangle index")?;
        let j: usize = parse(it.next(), "triangle index")?;
        let k: usize = parse(it.next(), "triangle index")?;
        let r: u8 = parse(it.next(), "region label")?;
        triangles.push([i, j, k]);
        region.push(match r {
            0 => Region::Background,
            1 => Region::Inclusion,
            _ => return Err(bad("region label must be 0 or 1")),
        });
    }

    // loop sections are re-derived by from_raw; consume and cross-check counts
    let l: usize = expect_count(lines.next(), "boundary")?;
    for _ in 0..l {
        lines.next().ok_or_else(|| bad("truncated boundary loops"))?;
    }
    let p: usize = expect_count(lines.next(), "interface")?;
    for _ in 0..p {
        lines.next().ok_or_else(|| bad("truncated interface loops"))?;
    }

    let mesh = Mesh::from_raw(vertices, triangles, region)?;
    if mesh.boundary_loops.len() != l || mesh.interface_loops.len() != p {
        return Err(bad("stored loop counts disagree with the connectivity"));
    }
    Ok(mesh)
}

fn expect_count(line: Option<&str>, keyword: &str) -> Result<usize> {
    let line = line
        .ok_or_else(|| Error::InvalidInput(format!("mesh file: missing `{keyword}` section")))?;
    let mut it = line.split_whitespace();
    match (it.next(), it.next()) {
        (Some(k), Some(v)) if k == keyword => v
            .parse()
            .map_err(|_| Error::InvalidInput(format!("mesh file: bad `{keyword}` count"))),
        _ => Err(Error::InvalidInput(format!(
            "mesh file: expected `{keyword} N`, found `{line}`"
        ))),
    }
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.ok_or_else(|| Error::InvalidInput(format!("mesh file: missing {what}")))?
        .parse()
        .map_err(|_| Error::InvalidInput(format!("mesh file: malformed {what}")))
}
