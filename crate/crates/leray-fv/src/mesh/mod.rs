//! 2D polygonal control-volume meshes.
//!
//! Cells are treated as prisms of unit depth, so "volumes" are areas times 1
//! and face area vectors have magnitude edge-length times 1. Faces are stored
//! internal-first, sorted by `(owner, neighbor)` with `owner < neighbor`
//! (upper-triangular order, which the DIC preconditioner relies on), followed
//! by boundary faces grouped per patch.

mod builder;
mod generate;
mod msh;

pub use builder::{MeshBuilder, MeshError};
pub use generate::{generate_annulus, generate_rect};
pub use msh::MshError;

use crate::geom::Vec2;

/// A named group of contiguous boundary faces.
#[derive(Clone, Debug)]
pub struct Patch {
    pub name: String,
    /// Index of the first face of the patch in the global face list.
    pub start: usize,
    /// Number of faces in the patch.
    pub len: usize,
}

impl Patch {
    pub fn faces(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// An immutable 2D finite-volume mesh.
///
/// All derived geometry (centroids, area vectors, interpolation weights,
/// non-orthogonal decomposition) is precomputed at construction; the struct
/// is safe to share read-only across workers.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub points: Vec<Vec2>,
    /// Point pair per face, ordered so the owner-outward normal is the edge
    /// direction rotated clockwise.
    pub face_points: Vec<[usize; 2]>,
    pub face_owner: Vec<usize>,
    /// Neighbor cell per internal face (faces `0..n_internal_faces`).
    pub face_neighbor: Vec<usize>,
    pub n_internal_faces: usize,
    /// Outward-from-owner area vector; magnitude = edge length (unit depth).
    pub face_area: Vec<Vec2>,
    pub face_centre: Vec<Vec2>,
    pub cell_centre: Vec<Vec2>,
    /// Cell volume = polygon area (unit depth).
    pub cell_volume: Vec<f64>,
    /// Point loop (CCW) per cell.
    pub cell_points: Vec<Vec<usize>>,
    pub patches: Vec<Patch>,
    /// CSR offsets into `cell_face_list`, one entry span per cell.
    cell_face_offsets: Vec<usize>,
    cell_face_list: Vec<usize>,
}

impl Mesh {
    pub fn n_cells(&self) -> usize {
        self.cell_volume.len()
    }

    pub fn n_faces(&self) -> usize {
        self.face_area.len()
    }

    pub fn n_boundary_faces(&self) -> usize {
        self.n_faces() - self.n_internal_faces
    }

    pub fn is_internal(&self, face: usize) -> bool {
        face < self.n_internal_faces
    }

    /// Faces of one cell, in no particular order.
    pub fn cell_faces(&self, cell: usize) -> &[usize] {
        &self.cell_face_list[self.cell_face_offsets[cell]..self.cell_face_offsets[cell + 1]]
    }

    pub fn patch(&self, name: &str) -> Option<&Patch> {
        self.patches.iter().find(|p| p.name == name)
    }

    /// Patch index and in-patch offset of a boundary face.
    pub fn patch_of_face(&self, face: usize) -> Option<(usize, usize)> {
        debug_assert!(face >= self.n_internal_faces);
        self.patches
            .iter()
            .position(|p| p.faces().contains(&face))
            .map(|ip| (ip, face - self.patches[ip].start))
    }

    /// Cell-center connector `d_j` of an internal face (owner to neighbor).
    pub fn face_delta(&self, face: usize) -> Vec2 {
        debug_assert!(self.is_internal(face));
        self.cell_centre[self.face_neighbor[face]] - self.cell_centre[self.face_owner[face]]
    }

    /// Owner-centroid to face-centroid vector for a boundary face.
    pub fn boundary_delta(&self, face: usize) -> Vec2 {
        self.face_centre[face] - self.cell_centre[self.face_owner[face]]
    }

    /// Linear interpolation weight of the owner cell for an internal face:
    /// `w = |x_f - x_N| / (|x_f - x_P| + |x_f - x_N|)`.
    pub fn face_weight(&self, face: usize) -> f64 {
        debug_assert!(self.is_internal(face));
        let fc = self.face_centre[face];
        let dp = fc.distance(self.cell_centre[self.face_owner[face]]);
        let dn = fc.distance(self.cell_centre[self.face_neighbor[face]]);
        dn / (dp + dn)
    }

    /// Cell diameter: maximum vertex-to-vertex distance within the cell.
    pub fn cell_diameter(&self, cell: usize) -> f64 {
        let pts = &self.cell_points[cell];
        let mut h: f64 = 0.0;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                h = h.max(self.points[pts[i]].distance(self.points[pts[j]]));
            }
        }
        h
    }

    /// Shortest cell-center spacing across any internal face. Used as the
    /// length scale for time-step clamping on rest states.
    pub fn min_face_spacing(&self) -> f64 {
        (0..self.n_internal_faces)
            .map(|f| self.face_delta(f).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Geometric quality summary.
    pub fn quality(&self) -> MeshQuality {
        let mut max_non_orth: f64 = 0.0;
        let mut sum_non_orth = 0.0;
        let mut max_skew: f64 = 0.0;
        for f in 0..self.n_internal_faces {
            let d = self.face_delta(f);
            let a = self.face_area[f];
            let cosang = (d.dot(a) / (d.norm() * a.norm())).clamp(-1.0, 1.0);
            let ang = cosang.acos().to_degrees();
            max_non_orth = max_non_orth.max(ang);
            sum_non_orth += ang;
            // Skewness: offset of the face centroid from the intersection of
            // the owner-neighbor connector with the face line, relative to |d|.
            let p0 = self.points[self.face_points[f][0]];
            let p1 = self.points[self.face_points[f][1]];
            let co = self.cell_centre[self.face_owner[f]];
            if let Some(xi) = segment_line_intersection(co, d, p0, p1) {
                max_skew = max_skew.max(self.face_centre[f].distance(xi) / d.norm());
            }
        }
        let avg_non_orth = if self.n_internal_faces > 0 {
            sum_non_orth / self.n_internal_faces as f64
        } else {
            0.0
        };

        let mut h_min = f64::INFINITY;
        let mut h_max: f64 = 0.0;
        let mut max_aspect: f64 = 0.0;
        for c in 0..self.n_cells() {
            let h = self.cell_diameter(c);
            h_min = h_min.min(h);
            h_max = h_max.max(h);
            let (mut emin, mut emax) = (f64::INFINITY, 0.0f64);
            let pts = &self.cell_points[c];
            for i in 0..pts.len() {
                let l = self.points[pts[i]].distance(self.points[pts[(i + 1) % pts.len()]]);
                emin = emin.min(l);
                emax = emax.max(l);
            }
            max_aspect = max_aspect.max(emax / emin);
        }

        MeshQuality {
            max_non_orthogonality: max_non_orth,
            avg_non_orthogonality: avg_non_orth,
            max_skewness: max_skew,
            max_aspect_ratio: max_aspect,
            h_min,
            h_max,
        }
    }

    /// Multi-line text report: entity counts plus the quality metrics.
    pub fn summary(&self) -> String {
        let q = self.quality();
        let mut s = String::new();
        s.push_str(&format!("cells:     {}\n", self.n_cells()));
        s.push_str(&format!("faces:     {} ({} internal)\n", self.n_faces(), self.n_internal_faces));
        s.push_str(&format!("points:    {}\n", self.points.len()));
        s.push_str("patches:\n");
        for p in &self.patches {
            s.push_str(&format!("  {:<12} {} faces\n", p.name, p.len));
        }
        s.push_str(&format!("h_min:     {:.6e}\n", q.h_min));
        s.push_str(&format!("h_max:     {:.6e}\n", q.h_max));
        s.push_str(&format!("max non-orthogonality: {:.3} deg\n", q.max_non_orthogonality));
        s.push_str(&format!("avg non-orthogonality: {:.3} deg\n", q.avg_non_orthogonality));
        s.push_str(&format!("max skewness:          {:.4}\n", q.max_skewness));
        s.push_str(&format!("max aspect ratio:      {:.3}\n", q.max_aspect_ratio));
        s
    }

    /// Parse a Gmsh MSH version-2 ASCII stream.
    pub fn load_msh<R: std::io::BufRead>(reader: R) -> Result<Mesh, MshError> {
        msh::parse(reader)
    }

    /// Emit the mesh as Gmsh MSH version-2 ASCII (the subset `load_msh` reads).
    pub fn to_msh_string(&self) -> String {
        msh::write(self)
    }
}

/// Intersection of the line through `co` with direction `d` and the segment
/// `(p0, p1)` extended to a line. Returns `None` for (near-)parallel lines.
fn segment_line_intersection(co: Vec2, d: Vec2, p0: Vec2, p1: Vec2) -> Option<Vec2> {
    let e = p1 - p0;
    let denom = d.cross(e);
    if denom.abs() < 1e-300 {
        return None;
    }
    let t = (p0 - co).cross(e) / denom;
    Some(co + d * t)
}

/// Aggregate mesh quality metrics.
#[derive(Clone, Copy, Debug)]
pub struct MeshQuality {
    /// Largest angle between `d_j` and `A_j` over internal faces, degrees.
    pub max_non_orthogonality: f64,
    pub avg_non_orthogonality: f64,
    /// Largest face-centroid offset relative to the cell-center spacing.
    pub max_skewness: f64,
    /// Largest ratio of longest to shortest edge within a cell.
    pub max_aspect_ratio: f64,
    /// Smallest cell diameter (max vertex-to-vertex distance).
    pub h_min: f64,
    pub h_max: f64,
}
