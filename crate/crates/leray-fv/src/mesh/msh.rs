//! Gmsh MSH version-2 ASCII reader and writer.
//!
//! Supported subset: `$MeshFormat` 2.x ASCII, optional `$PhysicalNames`,
//! `$Nodes`, `$Elements` with 2-node lines (type 1, boundary edges tagged by
//! physical group), 3-node triangles (type 2) and 4-node quadrangles
//! (type 3). Points (type 15) are ignored. Everything else is an error.

use std::collections::HashMap;
use std::io::BufRead;

use super::builder::{MeshBuilder, MeshError};
use super::Mesh;
use crate::geom::Vec2;

#[derive(Debug, thiserror::Error)]
pub enum MshError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing section ${0}")]
    MissingSection(&'static str),
    #[error("line {line}: unsupported element type {elem_type}")]
    UnsupportedElement { line: usize, elem_type: i64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Lines<R: BufRead> {
    reader: R,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<Option<String>, MshError> {
        let mut buf = String::new();
        loop {
            buf.clear();
            let n = self.reader.read_line(&mut buf)?;
            if n == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let trimmed = buf.trim();
            if !trimmed.is_empty() {
                return Ok(Some(trimmed.to_string()));
            }
        }
    }

    fn expect_line(&mut self, what: &str) -> Result<String, MshError> {
        self.next_line()?.ok_or_else(|| MshError::Parse {
            line: self.line_no + 1,
            msg: format!("unexpected end of file, expected {what}"),
        })
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, MshError> {
        Err(MshError::Parse { line: self.line_no, msg: msg.into() })
    }
}

fn parse_num<T: std::str::FromStr>(
    tok: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T, MshError> {
    tok.ok_or_else(|| MshError::Parse { line, msg: format!("missing {what}") })?
        .parse::<T>()
        .map_err(|_| MshError::Parse { line, msg: format!("invalid {what}") })
}

pub fn parse<R: BufRead>(reader: R) -> Result<Mesh, MshError> {
    let mut lines = Lines { reader, line_no: 0 };

    let mut physical_names: HashMap<i64, String> = HashMap::new();
    let mut node_ids: HashMap<i64, usize> = HashMap::new();
    let mut points: Vec<Vec2> = Vec::new();
    let mut cells: Vec<Vec<usize>> = Vec::new();
    // Boundary edges keyed by physical tag, in file order.
    let mut patch_edges: Vec<(i64, Vec<[usize; 2]>)> = Vec::new();
    let mut seen_nodes = false;
    let mut seen_elements = false;

    while let Some(line) = lines.next_line()? {
        match line.as_str() {
            "$MeshFormat" => {
                let fmt = lines.expect_line("format line")?;
                let mut t = fmt.split_whitespace();
                let version: f64 = parse_num(t.next(), lines.line_no, "version")?;
                let file_type: i64 = parse_num(t.next(), lines.line_no, "file type")?;
                if !(2.0..3.0).contains(&version) {
                    return lines.err(format!("unsupported MSH version {version}, need 2.x"));
                }
                if file_type != 0 {
                    return lines.err("binary MSH is not supported");
                }
                expect_end(&mut lines, "MeshFormat")?;
            }
            "$PhysicalNames" => {
                let n: usize = parse_num(
                    Some(lines.expect_line("physical name count")?.as_str()),
                    lines.line_no,
                    "count",
                )?;
                for _ in 0..n {
                    let row = lines.expect_line("physical name")?;
                    let mut t = row.split_whitespace();
                    let _dim: i64 = parse_num(t.next(), lines.line_no, "dimension")?;
                    let tag: i64 = parse_num(t.next(), lines.line_no, "tag")?;
                    let rest = row.splitn(3, char::is_whitespace).nth(2).unwrap_or("");
                    let name = rest.trim().trim_matches('"').to_string();
                    if name.is_empty() {
                        return lines.err("empty physical name");
                    }
                    physical_names.insert(tag, name);
                }
                expect_end(&mut lines, "PhysicalNames")?;
            }
            "$Nodes" => {
                seen_nodes = true;
                let n: usize = parse_num(
                    Some(lines.expect_line("node count")?.as_str()),
                    lines.line_no,
                    "node count",
                )?;
                for _ in 0..n {
                    let row = lines.expect_line("node")?;
                    let mut t = row.split_whitespace();
                    let id: i64 = parse_num(t.next(), lines.line_no, "node id")?;
                    let x: f64 = parse_num(t.next(), lines.line_no, "x coordinate")?;
                    let y: f64 = parse_num(t.next(), lines.line_no, "y coordinate")?;
                    let _z: f64 = parse_num(t.next(), lines.line_no, "z coordinate")?;
                    if node_ids.insert(id, points.len()).is_some() {
                        return lines.err(format!("duplicate node id {id}"));
                    }
                    points.push(Vec2::new(x, y));
                }
                expect_end(&mut lines, "Nodes")?;
            }
            "$Elements" => {
                seen_elements = true;
                let n: usize = parse_num(
                    Some(lines.expect_line("element count")?.as_str()),
                    lines.line_no,
                    "element count",
                )?;
                for _ in 0..n {
                    let row = lines.expect_line("element")?;
                    let mut t = row.split_whitespace();
                    let _id: i64 = parse_num(t.next(), lines.line_no, "element id")?;
                    let etype: i64 = parse_num(t.next(), lines.line_no, "element type")?;
                    let ntags: usize = parse_num(t.next(), lines.line_no, "tag count")?;
                    let mut phys = 0i64;
                    for k in 0..ntags {
                        let tag: i64 = parse_num(t.next(), lines.line_no, "tag")?;
                        if k == 0 {
                            phys = tag;
                        }
                    }
                    let node = |t: &mut std::str::SplitWhitespace, lines: &Lines<R>| {
                        let id: i64 = parse_num(t.next(), lines.line_no, "node reference")?;
                        node_ids.get(&id).copied().ok_or(MshError::Parse {
                            line: lines.line_no,
                            msg: format!("element references missing node {id}"),
                        })
                    };
                    match etype {
                        1 => {
                            let a = node(&mut t, &lines)?;
                            let b = node(&mut t, &lines)?;
                            match patch_edges.iter_mut().find(|(tag, _)| *tag == phys) {
                                Some((_, v)) => v.push([a, b]),
                                None => patch_edges.push((phys, vec![[a, b]])),
                            }
                        }
                        2 => {
                            let v = [
                                node(&mut t, &lines)?,
                                node(&mut t, &lines)?,
                                node(&mut t, &lines)?,
                            ];
                            cells.push(v.to_vec());
                        }
                        3 => {
                            let v = [
                                node(&mut t, &lines)?,
                                node(&mut t, &lines)?,
                                node(&mut t, &lines)?,
                                node(&mut t, &lines)?,
                            ];
                            cells.push(v.to_vec());
                        }
                        15 => {} // isolated point, ignore
                        other => {
                            return Err(MshError::UnsupportedElement {
                                line: lines.line_no,
                                elem_type: other,
                            })
                        }
                    }
                }
                expect_end(&mut lines, "Elements")?;
            }
            s if s.starts_with('$') && !s.starts_with("$End") => {
                // Unknown section: skip to its $End marker.
                let name = s.trim_start_matches('$').to_string();
                let end = format!("$End{name}");
                loop {
                    let l = lines.expect_line(&end)?;
                    if l == end {
                        break;
                    }
                }
            }
            other => return lines.err(format!("unexpected content '{other}'")),
        }
    }

    if !seen_nodes {
        return Err(MshError::MissingSection("Nodes"));
    }
    if !seen_elements {
        return Err(MshError::MissingSection("Elements"));
    }
    if cells.is_empty() {
        return Err(MshError::Parse { line: lines.line_no, msg: "no 2D elements found".into() });
    }

    let boundary = patch_edges
        .into_iter()
        .map(|(tag, edges)| {
            let name =
                physical_names.get(&tag).cloned().unwrap_or_else(|| format!("physical_{tag}"));
            (name, edges)
        })
        .collect();

    Ok(MeshBuilder::new(points, cells, boundary).build()?)
}

fn expect_end<R: BufRead>(lines: &mut Lines<R>, section: &str) -> Result<(), MshError> {
    let end = format!("$End{section}");
    let l = lines.expect_line(&end)?;
    if l != end {
        return lines.err(format!("expected {end}, got '{l}'"));
    }
    Ok(())
}

/// Serialize a mesh as MSH v2 ASCII. Patch names become physical names of
/// dimension 1; all 2D cells share physical tag 0 offset by the patch count.
pub fn write(mesh: &Mesh) -> String {
    let mut s = String::new();
    s.push_str("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n");

    s.push_str("$PhysicalNames\n");
    s.push_str(&format!("{}\n", mesh.patches.len() + 1));
    for (ip, p) in mesh.patches.iter().enumerate() {
        s.push_str(&format!("1 {} \"{}\"\n", ip + 1, p.name));
    }
    s.push_str(&format!("2 {} \"interior\"\n", mesh.patches.len() + 1));
    s.push_str("$EndPhysicalNames\n");

    s.push_str("$Nodes\n");
    s.push_str(&format!("{}\n", mesh.points.len()));
    for (i, p) in mesh.points.iter().enumerate() {
        s.push_str(&format!("{} {:.17e} {:.17e} 0\n", i + 1, p.x, p.y));
    }
    s.push_str("$EndNodes\n");

    let n_elems = mesh.n_boundary_faces() + mesh.n_cells();
    s.push_str("$Elements\n");
    s.push_str(&format!("{n_elems}\n"));
    let mut eid = 1;
    for (ip, p) in mesh.patches.iter().enumerate() {
        for f in p.faces() {
            let [a, b] = mesh.face_points[f];
            s.push_str(&format!("{eid} 1 2 {} {} {} {}\n", ip + 1, ip + 1, a + 1, b + 1));
            eid += 1;
        }
    }
    let cell_tag = mesh.patches.len() + 1;
    for c in 0..mesh.n_cells() {
        let pts = &mesh.cell_points[c];
        let etype = if pts.len() == 3 { 2 } else { 3 };
        s.push_str(&format!("{eid} {etype} 2 {cell_tag} {cell_tag}"));
        for &p in pts {
            s.push_str(&format!(" {}", p + 1));
        }
        s.push('\n');
        eid += 1;
    }
    s.push_str("$EndElements\n");
    s
}
