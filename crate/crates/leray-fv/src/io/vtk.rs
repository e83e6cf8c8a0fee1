//! Legacy VTK (ASCII, version 3.0) unstructured-grid writer for cell data,
//! plus a structural validator used by tests on the emitted files.

use std::io::Write;
use std::path::Path;

use super::IoError;
use crate::geom::Vec2;
use crate::mesh::Mesh;

/// Write a mesh with named cell-centered scalar and vector fields.
pub fn write_vtk_to<W: Write>(
    mesh: &Mesh,
    scalars: &[(&str, &[f64])],
    vectors: &[(&str, &[Vec2])],
    mut w: W,
) -> Result<(), IoError> {
    for (name, data) in scalars {
        if data.len() != mesh.n_cells() {
            return Err(IoError::InvalidArgument(format!(
                "scalar field '{name}' has {} values for {} cells",
                data.len(),
                mesh.n_cells()
            )));
        }
    }
    for (name, data) in vectors {
        if data.len() != mesh.n_cells() {
            return Err(IoError::InvalidArgument(format!(
                "vector field '{name}' has {} values for {} cells",
                data.len(),
                mesh.n_cells()
            )));
        }
    }

    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "leray-fv cell fields")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.points.len())?;
    for p in &mesh.points {
        writeln!(w, "{} {} 0", p.x, p.y)?;
    }
    let list_len: usize = mesh.cell_points.iter().map(|c| c.len() + 1).sum();
    writeln!(w, "CELLS {} {}", mesh.n_cells(), list_len)?;
    for cell in &mesh.cell_points {
        write!(w, "{}", cell.len())?;
        for &p in cell {
            write!(w, " {p}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.n_cells())?;
    for cell in &mesh.cell_points {
        // 5 = VTK_TRIANGLE, 9 = VTK_QUAD, 7 = VTK_POLYGON.
        let ty = match cell.len() {
            3 => 5,
            4 => 9,
            _ => 7,
        };
        writeln!(w, "{ty}")?;
    }
    writeln!(w, "CELL_DATA {}", mesh.n_cells())?;
    for (name, data) in scalars {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in *data {
            writeln!(w, "{v}")?;
        }
    }
    for (name, data) in vectors {
        writeln!(w, "VECTORS {name} double")?;
        for v in *data {
            writeln!(w, "{} {} 0", v.x, v.y)?;
        }
    }
    Ok(())
}

pub fn write_vtk(
    mesh: &Mesh,
    scalars: &[(&str, &[f64])],
    vectors: &[(&str, &[Vec2])],
    path: &Path,
) -> Result<(), IoError> {
    let file = std::fs::File::create(path)
        .map_err(|source| IoError::File { path: path.display().to_string(), source })?;
    let mut w = std::io::BufWriter::new(file);
    write_vtk_to(mesh, scalars, vectors, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Structural check of an emitted legacy VTK file: section order, counts,
/// and data cardinality. Returns `(n_points, n_cells)`.
pub fn validate_vtk(text: &str) -> Result<(usize, usize), IoError> {
    let all: Vec<&str> = text.lines().collect();
    let mut pos = 0usize;
    let expect = |pos: &mut usize, prefix: &str| -> Result<(usize, String), IoError> {
        while *pos < all.len() && all[*pos].trim().is_empty() {
            *pos += 1;
        }
        if *pos >= all.len() {
            return Err(IoError::Parse { line: 0, msg: format!("missing section '{prefix}'") });
        }
        let line = all[*pos];
        *pos += 1;
        if line.starts_with(prefix) {
            Ok((*pos, line.to_string()))
        } else {
            Err(IoError::Parse { line: *pos, msg: format!("expected '{prefix}', got '{line}'") })
        }
    };

    expect(&mut pos, "# vtk DataFile Version")?;
    pos += 1; // title line
    expect(&mut pos, "ASCII")?;
    expect(&mut pos, "DATASET UNSTRUCTURED_GRID")?;
    let (line_no, points_hdr) = expect(&mut pos, "POINTS")?;
    let n_points: usize = points_hdr
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or(IoError::Parse { line: line_no, msg: "bad POINTS header".into() })?;

    let mut rest = all[pos..].to_vec();
    if rest.len() < n_points {
        return Err(IoError::Parse { line: line_no, msg: "truncated POINTS".into() });
    }
    for (k, row) in rest.iter().take(n_points).enumerate() {
        if row.split_whitespace().count() != 3 {
            return Err(IoError::Parse {
                line: line_no + k + 1,
                msg: "point row must have 3 coordinates".into(),
            });
        }
    }
    rest.drain(..n_points);

    let cells_hdr = rest.first().copied().unwrap_or_default();
    if !cells_hdr.starts_with("CELLS") {
        return Err(IoError::Parse { line: 0, msg: "missing CELLS".into() });
    }
    let mut it = cells_hdr.split_whitespace().skip(1);
    let n_cells: usize =
        it.next().and_then(|s| s.parse().ok()).ok_or(IoError::Parse {
            line: 0,
            msg: "bad CELLS header".into(),
        })?;
    let list_len: usize =
        it.next().and_then(|s| s.parse().ok()).ok_or(IoError::Parse {
            line: 0,
            msg: "bad CELLS header".into(),
        })?;
    let mut consumed = 0usize;
    for row in rest.iter().skip(1).take(n_cells) {
        let mut nums = row.split_whitespace();
        let k: usize = nums.next().and_then(|s| s.parse().ok()).ok_or(IoError::Parse {
            line: 0,
            msg: "bad cell row".into(),
        })?;
        let ids: Vec<usize> = nums.map(|s| s.parse().unwrap_or(usize::MAX)).collect();
        if ids.len() != k || ids.iter().any(|&i| i >= n_points) {
            return Err(IoError::Parse { line: 0, msg: "cell row references bad points".into() });
        }
        consumed += k + 1;
    }
    if consumed != list_len {
        return Err(IoError::Parse { line: 0, msg: "CELLS list length mismatch".into() });
    }
    rest.drain(..n_cells + 1);

    if !rest.first().copied().unwrap_or_default().starts_with("CELL_TYPES") {
        return Err(IoError::Parse { line: 0, msg: "missing CELL_TYPES".into() });
    }
    rest.drain(..n_cells + 1);

    let cd = rest.first().copied().unwrap_or_default();
    if !cd.starts_with("CELL_DATA") {
        return Err(IoError::Parse { line: 0, msg: "missing CELL_DATA".into() });
    }
    let n_data: usize = cd.split_whitespace().nth(1).and_then(|s| s.parse().ok()).ok_or(
        IoError::Parse { line: 0, msg: "bad CELL_DATA header".into() },
    )?;
    if n_data != n_cells {
        return Err(IoError::Parse { line: 0, msg: "CELL_DATA count mismatch".into() });
    }
    rest.remove(0);

    // Field sections: SCALARS + LOOKUP_TABLE + n rows, or VECTORS + n rows.
    while let Some(&hdr) = rest.first() {
        if hdr.starts_with("SCALARS") {
            if rest.len() < 2 + n_cells || !rest[1].starts_with("LOOKUP_TABLE") {
                return Err(IoError::Parse { line: 0, msg: "bad SCALARS section".into() });
            }
            for row in rest.iter().skip(2).take(n_cells) {
                row.trim().parse::<f64>().map_err(|_| IoError::Parse {
                    line: 0,
                    msg: "bad scalar value".into(),
                })?;
            }
            rest.drain(..2 + n_cells);
        } else if hdr.starts_with("VECTORS") {
            if rest.len() < 1 + n_cells {
                return Err(IoError::Parse { line: 0, msg: "truncated VECTORS section".into() });
            }
            for row in rest.iter().skip(1).take(n_cells) {
                if row.split_whitespace().count() != 3 {
                    return Err(IoError::Parse { line: 0, msg: "bad vector row".into() });
                }
            }
            rest.drain(..1 + n_cells);
        } else if hdr.trim().is_empty() {
            rest.remove(0);
        } else {
            return Err(IoError::Parse { line: 0, msg: format!("unexpected section '{hdr}'") });
        }
    }
    Ok((n_points, n_cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_rect;

    #[test]
    fn single_cell_mesh_writes_matching_counts() {
        let m = generate_rect(1, 1, 1.0, 1.0).unwrap();
        let p = vec![3.5];
        let u = vec![Vec2::new(1.0, -1.0)];
        let mut buf = Vec::new();
        write_vtk_to(&m, &[("p", &p)], &[("u", &u)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let (np, nc) = validate_vtk(&text).unwrap();
        assert_eq!(np, 4);
        assert_eq!(nc, 1);
        assert!(text.contains("SCALARS p double 1"));
        assert!(text.contains("VECTORS u double"));
    }

    #[test]
    fn field_count_mismatch_is_invalid() {
        let m = generate_rect(2, 2, 1.0, 1.0).unwrap();
        let bad = vec![1.0; 3];
        let mut buf = Vec::new();
        assert!(matches!(
            write_vtk_to(&m, &[("p", &bad)], &[], &mut buf),
            Err(IoError::InvalidArgument(_))
        ));
    }

    #[test]
    fn emitted_file_validates_on_real_meshes() {
        let m = crate::bench::cylinder_mesh(crate::bench::CylinderMeshLevel::Smoke).unwrap();
        let p = vec![0.0; m.n_cells()];
        let a = vec![0.5; m.n_cells()];
        let u = vec![Vec2::ZERO; m.n_cells()];
        let mut buf = Vec::new();
        write_vtk_to(&m, &[("p", &p), ("a", &a)], &[("u", &u)], &mut buf).unwrap();
        let (np, nc) = validate_vtk(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(np, m.points.len());
        assert_eq!(nc, m.n_cells());
    }

    #[test]
    fn validator_rejects_corruption() {
        let m = generate_rect(2, 1, 1.0, 1.0).unwrap();
        let p = vec![1.0, 2.0];
        let mut buf = Vec::new();
        write_vtk_to(&m, &[("p", &p)], &[], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let corrupted = text.replace("CELL_TYPES", "CELL_TIRES");
        assert!(validate_vtk(&corrupted).is_err());
        let truncated = &text[..text.len() / 2];
        assert!(validate_vtk(truncated).is_err());
    }
}
