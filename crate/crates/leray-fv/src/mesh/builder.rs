//! Mesh assembly from raw points, cell loops, and boundary patch edges.
//!
//! Every construction path (generators, MSH import) funnels through
//! [`MeshBuilder`] so connectivity derivation, face ordering, orientation,
//! and validity checks live in one place.

use std::collections::HashMap;

use super::{Mesh, Patch};
use crate::geom::Vec2;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cell {cell} is degenerate (area {area:.3e})")]
    DegenerateCell { cell: usize, area: f64 },
    #[error("face between points {p0} and {p1} is degenerate (length {len:.3e})")]
    DegenerateFace { p0: usize, p1: usize, len: f64 },
    #[error("edge ({p0}, {p1}) is shared by more than two cells")]
    NonManifoldEdge { p0: usize, p1: usize },
    #[error("boundary face between points {p0} and {p1} belongs to no patch")]
    UnpatchedBoundaryFace { p0: usize, p1: usize },
    #[error("patch '{patch}' edge ({p0}, {p1}) does not match any cell boundary edge")]
    DanglingBoundaryEdge { patch: String, p0: usize, p1: usize },
    #[error("patch '{patch}' edge ({p0}, {p1}) lies on an internal face")]
    PatchOnInternalFace { patch: String, p0: usize, p1: usize },
    #[error("cell {cell} does not close: |sum A_j| = {defect:.3e} (perimeter {perimeter:.3e})")]
    OpenCell { cell: usize, defect: f64, perimeter: f64 },
    #[error("internal face between cells {owner} and {neighbor} has non-positive A.d")]
    FoldedFace { owner: usize, neighbor: usize },
}

pub struct MeshBuilder {
    points: Vec<Vec2>,
    /// Point loops, one per cell; orientation is fixed up during build.
    cells: Vec<Vec<usize>>,
    /// Patch name plus the unordered point pairs of its edges.
    boundary: Vec<(String, Vec<[usize; 2]>)>,
}

impl MeshBuilder {
    pub fn new(
        points: Vec<Vec2>,
        cells: Vec<Vec<usize>>,
        boundary: Vec<(String, Vec<[usize; 2]>)>,
    ) -> Self {
        MeshBuilder { points, cells, boundary }
    }

    pub fn build(self) -> Result<Mesh, MeshError> {
        let MeshBuilder { points, mut cells, boundary } = self;

        if cells.is_empty() {
            return Err(MeshError::InvalidArgument("mesh has no cells".into()));
        }
        for (i, loop_) in cells.iter().enumerate() {
            if loop_.len() < 3 {
                return Err(MeshError::InvalidArgument(format!(
                    "cell {i} has fewer than 3 points"
                )));
            }
            if let Some(&p) = loop_.iter().find(|&&p| p >= points.len()) {
                return Err(MeshError::InvalidArgument(format!(
                    "cell {i} references missing point {p}"
                )));
            }
        }

        // Orient every cell counterclockwise and compute area/centroid.
        let mut cell_volume = Vec::with_capacity(cells.len());
        let mut cell_centre = Vec::with_capacity(cells.len());
        let length_scale = mesh_length_scale(&points);
        for (i, loop_) in cells.iter_mut().enumerate() {
            let signed = shoelace_area(&points, loop_);
            if signed < 0.0 {
                loop_.reverse();
            }
            let area = signed.abs();
            if area <= 1e-12 * length_scale * length_scale {
                return Err(MeshError::DegenerateCell { cell: i, area });
            }
            cell_volume.push(area);
            cell_centre.push(polygon_centroid(&points, loop_, area));
        }

        // Edge -> incident cells map. Keys are (min, max) point pairs.
        let mut edge_cells: HashMap<(usize, usize), (usize, Option<usize>)> = HashMap::new();
        for (c, loop_) in cells.iter().enumerate() {
            for k in 0..loop_.len() {
                let a = loop_[k];
                let b = loop_[(k + 1) % loop_.len()];
                if a == b {
                    return Err(MeshError::DegenerateFace { p0: a, p1: b, len: 0.0 });
                }
                let key = (a.min(b), a.max(b));
                match edge_cells.get_mut(&key) {
                    None => {
                        edge_cells.insert(key, (c, None));
                    }
                    Some((_, slot @ None)) => *slot = Some(c),
                    Some(_) => return Err(MeshError::NonManifoldEdge { p0: key.0, p1: key.1 }),
                }
            }
        }

        // Patch lookup for boundary edges.
        let mut patch_of_edge: HashMap<(usize, usize), usize> = HashMap::new();
        for (ip, (name, edges)) in boundary.iter().enumerate() {
            for e in edges {
                let key = (e[0].min(e[1]), e[0].max(e[1]));
                match edge_cells.get(&key) {
                    None => {
                        return Err(MeshError::DanglingBoundaryEdge {
                            patch: name.clone(),
                            p0: key.0,
                            p1: key.1,
                        })
                    }
                    Some((_, Some(_))) => {
                        return Err(MeshError::PatchOnInternalFace {
                            patch: name.clone(),
                            p0: key.0,
                            p1: key.1,
                        })
                    }
                    Some((_, None)) => {
                        patch_of_edge.insert(key, ip);
                    }
                }
            }
        }

        // Collect faces. Internal faces sorted by (owner, neighbor); boundary
        // faces grouped by patch, ordered by owner cell within each patch.
        let mut internal: Vec<(usize, usize, [usize; 2])> = Vec::new();
        let mut per_patch: Vec<Vec<(usize, [usize; 2])>> = vec![Vec::new(); boundary.len()];
        for (c, loop_) in cells.iter().enumerate() {
            for k in 0..loop_.len() {
                let a = loop_[k];
                let b = loop_[(k + 1) % loop_.len()];
                let key = (a.min(b), a.max(b));
                let (c0, c1) = edge_cells[&key];
                match c1 {
                    Some(other) => {
                        // Record once, from the owner's traversal.
                        let owner = c0.min(other);
                        if c == owner {
                            let neighbor = c0.max(other);
                            internal.push((owner, neighbor, [a, b]));
                        }
                    }
                    None => {
                        let ip = patch_of_edge.get(&key).copied().ok_or(
                            MeshError::UnpatchedBoundaryFace { p0: key.0, p1: key.1 },
                        )?;
                        per_patch[ip].push((c, [a, b]));
                    }
                }
            }
        }
        internal.sort_by_key(|&(o, n, _)| (o, n));

        let mut face_points = Vec::new();
        let mut face_owner = Vec::new();
        let mut face_neighbor = Vec::new();
        for &(o, n, pts) in &internal {
            face_points.push(pts);
            face_owner.push(o);
            face_neighbor.push(n);
        }
        let n_internal_faces = face_points.len();

        let mut patches = Vec::with_capacity(boundary.len());
        for (ip, (name, _)) in boundary.iter().enumerate() {
            let start = face_points.len();
            for &(c, pts) in &per_patch[ip] {
                face_points.push(pts);
                face_owner.push(c);
            }
            patches.push(Patch { name: name.clone(), start, len: per_patch[ip].len() });
        }

        // Face geometry. The cell loops are CCW, so rotating the traversal
        // direction clockwise gives the owner-outward normal.
        let mut face_area = Vec::with_capacity(face_points.len());
        let mut face_centre = Vec::with_capacity(face_points.len());
        for (f, pts) in face_points.iter().enumerate() {
            let p0 = points[pts[0]];
            let p1 = points[pts[1]];
            let e = p1 - p0;
            let len = e.norm();
            if len <= 1e-12 * length_scale {
                return Err(MeshError::DegenerateFace { p0: pts[0], p1: pts[1], len });
            }
            face_area.push(Vec2::new(e.y, -e.x));
            face_centre.push((p0 + p1) * 0.5);
            if f < n_internal_faces {
                let d = cell_centre[face_neighbor[f]] - cell_centre[face_owner[f]];
                if d.dot(face_area[f]) <= 0.0 {
                    return Err(MeshError::FoldedFace {
                        owner: face_owner[f],
                        neighbor: face_neighbor[f],
                    });
                }
            }
        }

        // Cell -> face adjacency (CSR).
        let n_cells = cells.len();
        let mut counts = vec![0usize; n_cells];
        for f in 0..face_points.len() {
            counts[face_owner[f]] += 1;
            if f < n_internal_faces {
                counts[face_neighbor[f]] += 1;
            }
        }
        let mut cell_face_offsets = vec![0usize; n_cells + 1];
        for c in 0..n_cells {
            cell_face_offsets[c + 1] = cell_face_offsets[c] + counts[c];
        }
        let mut cursor = cell_face_offsets.clone();
        let mut cell_face_list = vec![0usize; cell_face_offsets[n_cells]];
        for f in 0..face_points.len() {
            cell_face_list[cursor[face_owner[f]]] = f;
            cursor[face_owner[f]] += 1;
            if f < n_internal_faces {
                cell_face_list[cursor[face_neighbor[f]]] = f;
                cursor[face_neighbor[f]] += 1;
            }
        }

        let mesh = Mesh {
            points,
            face_points,
            face_owner,
            face_neighbor,
            n_internal_faces,
            face_area,
            face_centre,
            cell_centre,
            cell_volume,
            cell_points: cells,
            patches,
            cell_face_offsets,
            cell_face_list,
        };

        // Closedness: the outward area vectors of every cell must cancel.
        for c in 0..mesh.n_cells() {
            let mut sum = Vec2::ZERO;
            let mut perimeter = 0.0;
            for &f in mesh.cell_faces(c) {
                let sign = if mesh.face_owner[f] == c { 1.0 } else { -1.0 };
                sum += mesh.face_area[f] * sign;
                perimeter += mesh.face_area[f].norm();
            }
            let defect = sum.norm();
            if defect > 1e-12 * perimeter {
                return Err(MeshError::OpenCell { cell: c, defect, perimeter });
            }
        }

        Ok(mesh)
    }
}

fn mesh_length_scale(points: &[Vec2]) -> f64 {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (hi - lo).norm().max(f64::MIN_POSITIVE)
}

fn shoelace_area(points: &[Vec2], loop_: &[usize]) -> f64 {
    let mut twice = 0.0;
    for k in 0..loop_.len() {
        let a = points[loop_[k]];
        let b = points[loop_[(k + 1) % loop_.len()]];
        twice += a.cross(b);
    }
    0.5 * twice
}

fn polygon_centroid(points: &[Vec2], loop_: &[usize], area: f64) -> Vec2 {
    let mut cx = 0.0;
    let mut cy = 0.0;
    for k in 0..loop_.len() {
        let a = points[loop_[k]];
        let b = points[loop_[(k + 1) % loop_.len()]];
        let w = a.cross(b);
        cx += (a.x + b.x) * w;
        cy += (a.y + b.y) * w;
    }
    Vec2::new(cx, cy) / (6.0 * area)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square_points() -> Vec<Vec2> {
        vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ]
    }

    #[test]
    fn orientation_is_fixed_up() {
        // Clockwise input loop still yields positive volume and outward areas.
        let b = MeshBuilder::new(
            unit_square_points(),
            vec![vec![0, 3, 2, 1]],
            vec![("b".into(), vec![[0, 1], [1, 2], [2, 3], [3, 0]])],
        );
        let m = b.build().unwrap();
        assert!(m.cell_volume[0] > 0.0);
        let mut sum = Vec2::ZERO;
        for f in 0..m.n_faces() {
            sum += m.face_area[f];
        }
        assert!(sum.norm() < 1e-14);
    }

    #[test]
    fn unpatched_boundary_is_rejected() {
        let b = MeshBuilder::new(
            unit_square_points(),
            vec![vec![0, 1, 2, 3]],
            vec![("b".into(), vec![[0, 1], [1, 2], [2, 3]])],
        );
        assert!(matches!(b.build(), Err(MeshError::UnpatchedBoundaryFace { .. })));
    }

    #[test]
    fn dangling_patch_edge_is_rejected() {
        let mut pts = unit_square_points();
        pts.push(Vec2::new(2.0, 0.0));
        let b = MeshBuilder::new(
            pts,
            vec![vec![0, 1, 2, 3]],
            vec![("b".into(), vec![[0, 1], [1, 2], [2, 3], [3, 0], [1, 4]])],
        );
        assert!(matches!(b.build(), Err(MeshError::DanglingBoundaryEdge { .. })));
    }

    #[test]
    fn degenerate_cell_is_rejected() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)];
        let b = MeshBuilder::new(
            pts,
            vec![vec![0, 1, 2]],
            vec![("b".into(), vec![[0, 1], [1, 2], [2, 0]])],
        );
        assert!(matches!(b.build(), Err(MeshError::DegenerateCell { .. })));
    }
}
