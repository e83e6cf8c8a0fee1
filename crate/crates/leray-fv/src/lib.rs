//! 2D unstructured, collocated finite-volume solver for incompressible flow
//! with Evolve-Filter-Relax (EFR) nonlinear filtering stabilization.
//!
//! The crate is organized bottom-up:
//!
//! - [`mesh`]: polygonal control-volume meshes (built-in generators and a
//!   Gmsh MSH v2 ASCII reader) with the geometric data the FV operators need.
//! - [`field`]: cell-centered scalar/vector fields, face fluxes, and
//!   per-patch boundary conditions.
//! - [`operators`]: face interpolation, Gauss gradients, convection and
//!   diffusion assembly, BDF2 time terms.
//! - [`linsolve`]: face-addressed sparse systems and the iterative solvers
//!   (symmetric Gauss-Seidel smoother, DIC-preconditioned CG, BiCGStab).
//! - [`coupling`]: pressure-velocity coupling, PISO for the evolve step and
//!   SIMPLEC for the filter step.
//! - [`efr`]: the Helmholtz filter, deconvolution indicator, relaxation and
//!   the parameter policies for the filter radius and relaxation weight.
//! - [`bench`]: the channel-flow-past-a-cylinder benchmark case.
//! - [`config`] and [`io`]: declarative case files, CSV/VTK emission.

pub mod bench;
pub mod config;
pub mod coupling;
pub mod efr;
pub mod field;
pub mod geom;
pub mod io;
pub mod linsolve;
pub mod mesh;
pub mod operators;

pub use geom::Vec2;
