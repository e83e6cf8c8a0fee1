//! Built-in mesh factories for tests and simple cases.

use super::builder::{MeshBuilder, MeshError};
use super::Mesh;
use crate::geom::Vec2;

/// Structured quadrilateral mesh of a `width x height` rectangle anchored at
/// the origin, with patches `left`, `right`, `top`, `bottom`.
pub fn generate_rect(nx: usize, ny: usize, width: f64, height: f64) -> Result<Mesh, MeshError> {
    if nx < 1 || ny < 1 {
        return Err(MeshError::InvalidArgument(format!(
            "cell counts must be at least 1 (got {nx} x {ny})"
        )));
    }
    if !(width > 0.0) || !(height > 0.0) {
        return Err(MeshError::InvalidArgument(format!(
            "dimensions must be positive (got {width} x {height})"
        )));
    }
    let xs: Vec<f64> = (0..=nx).map(|i| width * i as f64 / nx as f64).collect();
    let ys: Vec<f64> = (0..=ny).map(|j| height * j as f64 / ny as f64).collect();
    Ok(rect_from_axes(&xs, &ys))
}

/// Structured mesh over the tensor grid `xs x ys` (both strictly increasing).
pub(crate) fn rect_from_axes(xs: &[f64], ys: &[f64]) -> Mesh {
    let nx = xs.len() - 1;
    let ny = ys.len() - 1;
    let pid = |i: usize, j: usize| j * (nx + 1) + i;

    let mut points = Vec::with_capacity((nx + 1) * (ny + 1));
    for &y in ys {
        for &x in xs {
            points.push(Vec2::new(x, y));
        }
    }

    let mut cells = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            cells.push(vec![pid(i, j), pid(i + 1, j), pid(i + 1, j + 1), pid(i, j + 1)]);
        }
    }

    let left = (0..ny).map(|j| [pid(0, j), pid(0, j + 1)]).collect();
    let right = (0..ny).map(|j| [pid(nx, j), pid(nx, j + 1)]).collect();
    let top = (0..nx).map(|i| [pid(i, ny), pid(i + 1, ny)]).collect();
    let bottom = (0..nx).map(|i| [pid(i, 0), pid(i + 1, 0)]).collect();

    MeshBuilder::new(
        points,
        cells,
        vec![
            ("left".into(), left),
            ("right".into(), right),
            ("top".into(), top),
            ("bottom".into(), bottom),
        ],
    )
    .build()
    .expect("structured rectangle is always valid")
}

/// Closed polygonal annulus between radii `r0 < r1`, `nt` sectors by `nr`
/// radial layers, patches `inner` and `outer`. A handy fixture with genuinely
/// non-orthogonal faces.
pub fn generate_annulus(nt: usize, nr: usize, r0: f64, r1: f64) -> Result<Mesh, MeshError> {
    if nt < 3 || nr < 1 {
        return Err(MeshError::InvalidArgument(format!(
            "annulus needs nt >= 3 and nr >= 1 (got {nt}, {nr})"
        )));
    }
    if !(0.0 < r0 && r0 < r1) {
        return Err(MeshError::InvalidArgument(format!(
            "annulus needs 0 < r0 < r1 (got {r0}, {r1})"
        )));
    }
    let pid = |k: usize, l: usize| l * nt + (k % nt);
    let mut points = Vec::with_capacity(nt * (nr + 1));
    for l in 0..=nr {
        let r = r0 + (r1 - r0) * l as f64 / nr as f64;
        for k in 0..nt {
            let th = 2.0 * std::f64::consts::PI * k as f64 / nt as f64;
            points.push(Vec2::new(r * th.cos(), r * th.sin()));
        }
    }
    let mut cells = Vec::with_capacity(nt * nr);
    for l in 0..nr {
        for k in 0..nt {
            cells.push(vec![pid(k, l), pid(k + 1, l), pid(k + 1, l + 1), pid(k, l + 1)]);
        }
    }
    let inner = (0..nt).map(|k| [pid(k, 0), pid(k + 1, 0)]).collect();
    let outer = (0..nt).map(|k| [pid(k, nr), pid(k + 1, nr)]).collect();
    MeshBuilder::new(points, cells, vec![("inner".into(), inner), ("outer".into(), outer)])
        .build()
}
