//! Cell-centered fields, face-flux fields, and per-patch boundary conditions.
//!
//! A field owns one value per cell plus one boundary entry per boundary face,
//! grouped per patch. Boundary data is plain storage; time-dependent
//! conditions are realized by the driver rewriting the patch values before
//! each step.

use std::ops::{Add, Mul, Sub};

use crate::geom::{Tensor2, Vec2};
use crate::mesh::Mesh;

/// Value types a finite-volume field can carry (scalars and 2-vectors).
pub trait FvValue:
    Copy + Default + PartialEq + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    /// Gradient type: `Vec2` for scalars, `Tensor2` for vectors.
    type Grad: Copy + Default + Add<Output = Self::Grad> + Mul<f64, Output = Self::Grad>;

    /// Outer product with a vector, accumulating Gauss gradients.
    fn outer(self, a: Vec2) -> Self::Grad;

    /// Directional value of a gradient: `g . v`.
    fn grad_dot(g: Self::Grad, v: Vec2) -> Self;

    /// Magnitude, for norms and blow-up guards.
    fn magnitude(self) -> f64;
}

impl FvValue for f64 {
    type Grad = Vec2;

    fn outer(self, a: Vec2) -> Vec2 {
        a * self
    }

    fn grad_dot(g: Vec2, v: Vec2) -> f64 {
        g.dot(v)
    }

    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl FvValue for Vec2 {
    type Grad = Tensor2;

    fn outer(self, a: Vec2) -> Tensor2 {
        Tensor2::outer(self, a)
    }

    fn grad_dot(g: Tensor2, v: Vec2) -> Vec2 {
        g.dot(v)
    }

    fn magnitude(self) -> f64 {
        self.norm()
    }
}

/// Boundary condition kind of one patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcKind {
    /// Dirichlet: the stored values are face values.
    FixedValue,
    /// Neumann: the stored values are outward normal gradients.
    FixedGradient,
}

/// Per-patch boundary data of a field.
#[derive(Clone, Debug)]
pub struct BoundaryPatch<T> {
    pub kind: BcKind,
    /// One entry per face of the patch, in patch face order.
    pub values: Vec<T>,
}

impl<T: Copy> BoundaryPatch<T> {
    pub fn uniform(kind: BcKind, value: T, len: usize) -> Self {
        BoundaryPatch { kind, values: vec![value; len] }
    }
}

/// A cell-centered field with per-patch boundary conditions.
#[derive(Clone, Debug)]
pub struct Field<T> {
    pub cells: Vec<T>,
    pub boundary: Vec<BoundaryPatch<T>>,
}

pub type ScalarField = Field<f64>;
pub type VectorField = Field<Vec2>;

impl<T: FvValue> Field<T> {
    /// Uniform field with the same BC kind and value on every patch.
    pub fn uniform(mesh: &Mesh, value: T, kind: BcKind, bc_value: T) -> Self {
        Field {
            cells: vec![value; mesh.n_cells()],
            boundary: mesh
                .patches
                .iter()
                .map(|p| BoundaryPatch::uniform(kind, bc_value, p.len))
                .collect(),
        }
    }

    /// Zero field with zero-gradient conditions everywhere.
    pub fn zeros(mesh: &Mesh) -> Self {
        Self::uniform(mesh, T::default(), BcKind::FixedGradient, T::default())
    }

    /// Boundary entry for a boundary face (global face index).
    pub fn boundary_entry(&self, mesh: &Mesh, face: usize) -> (BcKind, T) {
        let (ip, k) = mesh.patch_of_face(face).expect("face is not a boundary face");
        (self.boundary[ip].kind, self.boundary[ip].values[k])
    }

    /// Face value on a boundary face: the stored value for Dirichlet, cell
    /// value extrapolated along the prescribed normal gradient for Neumann.
    pub fn boundary_face_value(&self, mesh: &Mesh, face: usize) -> T {
        let (kind, v) = self.boundary_entry(mesh, face);
        match kind {
            BcKind::FixedValue => v,
            BcKind::FixedGradient => {
                let owner = mesh.face_owner[face];
                let dn = mesh.boundary_delta(face).dot(mesh.face_area[face].unit());
                self.cells[owner] + v * dn
            }
        }
    }

    /// Structural consistency with the mesh.
    pub fn check_consistent(&self, mesh: &Mesh) -> bool {
        self.cells.len() == mesh.n_cells()
            && self.boundary.len() == mesh.patches.len()
            && self.boundary.iter().zip(&mesh.patches).all(|(b, p)| b.values.len() == p.len)
    }

    pub fn max_norm(&self) -> f64 {
        self.cells.iter().map(|v| v.magnitude()).fold(0.0, f64::max)
    }

    /// Cellwise convex combination `(1 - w) * self + w * other`; boundary
    /// data is taken from `self`.
    pub fn lerp(&self, other: &Field<T>, w: f64) -> Field<T> {
        let mut out = self.clone();
        for (o, (&a, &b)) in out.cells.iter_mut().zip(self.cells.iter().zip(&other.cells)) {
            *o = a * (1.0 - w) + b * w;
        }
        out
    }
}

impl VectorField {
    /// View one Cartesian component as a scalar field.
    pub fn component(&self, axis: usize) -> ScalarField {
        let pick = |v: Vec2| if axis == 0 { v.x } else { v.y };
        ScalarField {
            cells: self.cells.iter().map(|&v| pick(v)).collect(),
            boundary: self
                .boundary
                .iter()
                .map(|b| BoundaryPatch {
                    kind: b.kind,
                    values: b.values.iter().map(|&v| pick(v)).collect(),
                })
                .collect(),
        }
    }

    pub fn set_component(&mut self, axis: usize, values: &[f64]) {
        for (v, &s) in self.cells.iter_mut().zip(values) {
            if axis == 0 {
                v.x = s;
            } else {
                v.y = s;
            }
        }
    }
}

/// One scalar flux per face (internal and boundary), units volume/time.
#[derive(Clone, Debug)]
pub struct FaceFluxField {
    pub faces: Vec<f64>,
}

impl FaceFluxField {
    pub fn zeros(mesh: &Mesh) -> Self {
        FaceFluxField { faces: vec![0.0; mesh.n_faces()] }
    }

    /// Net outflow of a cell (discrete divergence times volume).
    pub fn cell_divergence(&self, mesh: &Mesh, cell: usize) -> f64 {
        mesh.cell_faces(cell)
            .iter()
            .map(|&f| {
                let sign = if mesh.face_owner[f] == cell { 1.0 } else { -1.0 };
                sign * self.faces[f]
            })
            .sum()
    }

    /// Largest cell imbalance over the mesh.
    pub fn max_cell_divergence(&self, mesh: &Mesh) -> f64 {
        (0..mesh.n_cells()).map(|c| self.cell_divergence(mesh, c).abs()).fold(0.0, f64::max)
    }

    /// Largest sum of absolute face fluxes through any cell; a natural
    /// reference scale for continuity residuals.
    pub fn reference_flux(&self, mesh: &Mesh) -> f64 {
        (0..mesh.n_cells())
            .map(|c| mesh.cell_faces(c).iter().map(|&f| self.faces[f].abs()).sum())
            .fold(0.0f64, f64::max)
    }

    /// Net flux over all boundary faces (outflow positive).
    pub fn boundary_net(&self, mesh: &Mesh) -> f64 {
        (mesh.n_internal_faces..mesh.n_faces()).map(|f| self.faces[f]).sum()
    }

    /// Facewise convex combination, as for the relaxed velocity.
    pub fn lerp(&self, other: &FaceFluxField, w: f64) -> FaceFluxField {
        FaceFluxField {
            faces: self
                .faces
                .iter()
                .zip(&other.faces)
                .map(|(&a, &b)| a * (1.0 - w) + b * w)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_rect;

    #[test]
    fn uniform_field_covers_every_patch() {
        let m = generate_rect(3, 2, 1.0, 1.0).unwrap();
        let f = ScalarField::uniform(&m, 1.5, BcKind::FixedValue, 2.0);
        assert!(f.check_consistent(&m));
        assert_eq!(f.boundary.len(), 4);
        for bf in m.n_internal_faces..m.n_faces() {
            assert_eq!(f.boundary_face_value(&m, bf), 2.0);
        }
    }

    #[test]
    fn neumann_face_value_extrapolates() {
        let m = generate_rect(2, 1, 2.0, 1.0).unwrap();
        let mut f = ScalarField::uniform(&m, 1.0, BcKind::FixedGradient, 3.0);
        f.cells[0] = 5.0;
        // Boundary faces of cell 0 sit 0.5 from its centroid along the normal.
        let left = m.patch("left").unwrap().start;
        assert!((f.boundary_face_value(&m, left) - (5.0 + 3.0 * 0.5)).abs() < 1e-14);
    }

    #[test]
    fn component_round_trip() {
        let m = generate_rect(2, 2, 1.0, 1.0).unwrap();
        let mut v = VectorField::zeros(&m);
        v.cells[3] = Vec2::new(1.0, -2.0);
        let x = v.component(0);
        let y = v.component(1);
        assert_eq!(x.cells[3], 1.0);
        assert_eq!(y.cells[3], -2.0);
        let mut w = VectorField::zeros(&m);
        w.set_component(0, &x.cells);
        w.set_component(1, &y.cells);
        assert_eq!(w.cells[3], v.cells[3]);
    }

    #[test]
    fn lerp_endpoints() {
        let m = generate_rect(2, 1, 1.0, 1.0).unwrap();
        let mut a = VectorField::zeros(&m);
        let mut b = VectorField::zeros(&m);
        a.cells[0] = Vec2::new(2.0, 2.0);
        b.cells[0] = Vec2::new(1.0, -1.0);
        assert_eq!(a.lerp(&b, 0.0).cells[0], a.cells[0]);
        assert_eq!(a.lerp(&b, 1.0).cells[0], b.cells[0]);
        assert_eq!(a.lerp(&b, 0.5).cells[0], Vec2::new(1.5, 0.5));
    }

    #[test]
    fn divergence_of_zero_flux_is_zero() {
        let m = generate_rect(4, 4, 1.0, 1.0).unwrap();
        let phi = FaceFluxField::zeros(&m);
        assert_eq!(phi.max_cell_divergence(&m), 0.0);
    }
}
