//! Sparse linear systems and iterative solvers.
//!
//! Systems are stored in face-addressed (LDU) form: one diagonal entry per
//! cell plus one `lower`/`upper` coefficient pair per internal face. This
//! mirrors how the FV operators are assembled and makes the owner/neighbor
//! antisymmetry of conservative operators explicit. Edges must be sorted by
//! `(owner, neighbor)` with `owner < neighbor`; the DIC preconditioner's
//! triangular sweeps rely on that ordering.
//!
//! All solvers are single-threaded and deterministic: identical inputs give
//! bitwise-identical outputs.

use std::sync::Arc;

use crate::mesh::Mesh;

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("structurally singular system: {0}")]
    SingularSystem(String),
}

/// Shared cell/edge connectivity of a family of systems.
#[derive(Debug)]
pub struct Topology {
    pub n: usize,
    pub owner: Vec<usize>,
    pub neighbor: Vec<usize>,
    row_offsets: Vec<usize>,
    row_edges: Vec<usize>,
    row_other: Vec<usize>,
    row_owner_side: Vec<bool>,
}

impl Topology {
    /// Build from an edge list sorted by `(owner, neighbor)`, `owner < neighbor`.
    pub fn new(n: usize, owner: Vec<usize>, neighbor: Vec<usize>) -> Result<Arc<Self>, SolveError> {
        if owner.len() != neighbor.len() {
            return Err(SolveError::InvalidArgument("owner/neighbor length mismatch".into()));
        }
        let mut prev = (0usize, 0usize);
        for (e, (&o, &nb)) in owner.iter().zip(&neighbor).enumerate() {
            if o >= nb || nb >= n {
                return Err(SolveError::InvalidArgument(format!(
                    "edge {e}: need owner < neighbor < n (got {o}, {nb})"
                )));
            }
            if e > 0 && (o, nb) < prev {
                return Err(SolveError::InvalidArgument(
                    "edges must be sorted by (owner, neighbor)".into(),
                ));
            }
            prev = (o, nb);
        }

        let mut counts = vec![0usize; n];
        for e in 0..owner.len() {
            counts[owner[e]] += 1;
            counts[neighbor[e]] += 1;
        }
        let mut row_offsets = vec![0usize; n + 1];
        for i in 0..n {
            row_offsets[i + 1] = row_offsets[i] + counts[i];
        }
        let m2 = row_offsets[n];
        let mut cursor = row_offsets.clone();
        let mut row_edges = vec![0usize; m2];
        let mut row_other = vec![0usize; m2];
        let mut row_owner_side = vec![false; m2];
        for e in 0..owner.len() {
            let (o, nb) = (owner[e], neighbor[e]);
            row_edges[cursor[o]] = e;
            row_other[cursor[o]] = nb;
            row_owner_side[cursor[o]] = true;
            cursor[o] += 1;
            row_edges[cursor[nb]] = e;
            row_other[cursor[nb]] = o;
            row_owner_side[cursor[nb]] = false;
            cursor[nb] += 1;
        }

        Ok(Arc::new(Topology {
            n,
            owner,
            neighbor,
            row_offsets,
            row_edges,
            row_other,
            row_owner_side,
        }))
    }

    /// Internal-face connectivity of a mesh.
    pub fn of_mesh(mesh: &Mesh) -> Arc<Self> {
        Topology::new(
            mesh.n_cells(),
            mesh.face_owner[..mesh.n_internal_faces].to_vec(),
            mesh.face_neighbor.clone(),
        )
        .expect("mesh faces are sorted and valid")
    }

    pub fn n_edges(&self) -> usize {
        self.owner.len()
    }

    /// Off-diagonal entries of row `i` as `(edge, column, owner_side)`.
    fn row(&self, i: usize) -> impl Iterator<Item = (usize, usize, bool)> + '_ {
        (self.row_offsets[i]..self.row_offsets[i + 1])
            .map(move |k| (self.row_edges[k], self.row_other[k], self.row_owner_side[k]))
    }
}

/// A square sparse system `A x = b` in LDU form.
#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub topo: Arc<Topology>,
    pub diag: Vec<f64>,
    /// Coefficient of `x[owner]` in the neighbor's row, one per edge.
    pub lower: Vec<f64>,
    /// Coefficient of `x[neighbor]` in the owner's row, one per edge.
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Set by assembly when `lower == upper` holds by construction.
    pub symmetric: bool,
}

impl SparseSystem {
    pub fn zeros(topo: Arc<Topology>) -> Self {
        let n = topo.n;
        let m = topo.n_edges();
        SparseSystem {
            topo,
            diag: vec![0.0; n],
            lower: vec![0.0; m],
            upper: vec![0.0; m],
            rhs: vec![0.0; n],
            symmetric: true,
        }
    }

    pub fn n(&self) -> usize {
        self.topo.n
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n() {
            y[i] = self.diag[i] * x[i];
        }
        for e in 0..self.topo.n_edges() {
            let o = self.topo.owner[e];
            let nb = self.topo.neighbor[e];
            y[o] += self.upper[e] * x[nb];
            y[nb] += self.lower[e] * x[o];
        }
    }

    /// r = b - A x
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.n()];
        self.matvec(x, &mut r);
        for i in 0..self.n() {
            r[i] = self.rhs[i] - r[i];
        }
        r
    }

    /// Signed sum of the off-diagonal coefficients of each row.
    pub fn offdiag_row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n()];
        for e in 0..self.topo.n_edges() {
            s[self.topo.owner[e]] += self.upper[e];
            s[self.topo.neighbor[e]] += self.lower[e];
        }
        s
    }

    /// Doubles the diagonal of `cell` and adds the original diagonal times
    /// `level` to the RHS, pinning the constant mode of an otherwise
    /// all-Neumann system without breaking symmetry.
    pub fn pin_reference(&mut self, cell: usize, level: f64) {
        if self.diag[cell] == 0.0 {
            // Fully decoupled row (e.g. a single-cell mesh): fix it outright.
            self.diag[cell] = 1.0;
            self.rhs[cell] = level;
            return;
        }
        self.rhs[cell] += self.diag[cell] * level;
        self.diag[cell] += self.diag[cell];
    }

    fn check_diagonal(&self) -> Result<(), SolveError> {
        for (i, &d) in self.diag.iter().enumerate() {
            if d == 0.0 {
                return Err(SolveError::SingularSystem(format!("zero diagonal in row {i}")));
            }
        }
        Ok(())
    }
}

/// Outcome of one linear solve. Residuals are 2-norms normalized by the
/// 2-norm of the right-hand side (or absolute if `b = 0`).
#[derive(Clone, Copy, Debug)]
pub struct SolverStats {
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub converged: bool,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_factor(b: &[f64]) -> f64 {
    let n = norm2(b);
    if n > 0.0 {
        n
    } else {
        1.0
    }
}

/// Symmetric Gauss-Seidel sweeps until the normalized residual drops below
/// `tol`. One iteration is a forward plus a backward sweep.
pub fn solve_smoothed(
    sys: &SparseSystem,
    x: &mut [f64],
    tol: f64,
    max_iters: usize,
) -> Result<SolverStats, SolveError> {
    sys.check_diagonal()?;
    let nf = norm_factor(&sys.rhs);
    let initial = norm2(&sys.residual(x)) / nf;
    if initial <= tol {
        return Ok(SolverStats {
            iterations: 0,
            initial_residual: initial,
            final_residual: initial,
            converged: true,
        });
    }
    let n = sys.n();
    let mut res = initial;
    let mut iters = 0;
    while iters < max_iters {
        for i in 0..n {
            let mut s = sys.rhs[i];
            for (e, j, owner_side) in sys.topo.row(i) {
                let a = if owner_side { sys.upper[e] } else { sys.lower[e] };
                s -= a * x[j];
            }
            x[i] = s / sys.diag[i];
        }
        for i in (0..n).rev() {
            let mut s = sys.rhs[i];
            for (e, j, owner_side) in sys.topo.row(i) {
                let a = if owner_side { sys.upper[e] } else { sys.lower[e] };
                s -= a * x[j];
            }
            x[i] = s / sys.diag[i];
        }
        iters += 1;
        res = norm2(&sys.residual(x)) / nf;
        if res <= tol {
            return Ok(SolverStats {
                iterations: iters,
                initial_residual: initial,
                final_residual: res,
                converged: true,
            });
        }
    }
    Ok(SolverStats {
        iterations: iters,
        initial_residual: initial,
        final_residual: res,
        converged: false,
    })
}

/// Diagonal incomplete Cholesky factor, stored as the reciprocal of the
/// modified diagonal.
struct DicPrecond {
    rd: Vec<f64>,
}

impl DicPrecond {
    fn new(sys: &SparseSystem) -> Self {
        let mut rd = sys.diag.clone();
        for e in 0..sys.topo.n_edges() {
            let o = sys.topo.owner[e];
            let nb = sys.topo.neighbor[e];
            let upd = rd[nb] - sys.upper[e] * sys.upper[e] / rd[o];
            // Keep the factor positive on matrices that are not quite SPD.
            if upd > 0.0 {
                rd[nb] = upd;
            }
        }
        for v in rd.iter_mut() {
            *v = 1.0 / *v;
        }
        DicPrecond { rd }
    }

    fn apply(&self, sys: &SparseSystem, r: &[f64], w: &mut [f64]) {
        for i in 0..sys.n() {
            w[i] = self.rd[i] * r[i];
        }
        for e in 0..sys.topo.n_edges() {
            let o = sys.topo.owner[e];
            let nb = sys.topo.neighbor[e];
            w[nb] -= self.rd[nb] * sys.upper[e] * w[o];
        }
        for e in (0..sys.topo.n_edges()).rev() {
            let o = sys.topo.owner[e];
            let nb = sys.topo.neighbor[e];
            w[o] -= self.rd[o] * sys.upper[e] * w[nb];
        }
    }
}

/// Conjugate gradients with diagonal incomplete Cholesky preconditioning,
/// for symmetric positive (semi-)definite systems.
pub fn solve_pcg_dic(
    sys: &SparseSystem,
    x: &mut [f64],
    tol: f64,
    max_iters: usize,
) -> Result<SolverStats, SolveError> {
    if !sys.symmetric {
        return Err(SolveError::InvalidArgument(
            "PCG requires a symmetric system (assembly did not mark it symmetric)".into(),
        ));
    }
    sys.check_diagonal()?;
    let n = sys.n();
    let nf = norm_factor(&sys.rhs);
    let mut r = sys.residual(x);
    let initial = norm2(&r) / nf;
    if initial <= tol {
        return Ok(SolverStats {
            iterations: 0,
            initial_residual: initial,
            final_residual: initial,
            converged: true,
        });
    }

    let precond = DicPrecond::new(sys);
    let mut z = vec![0.0; n];
    precond.apply(sys, &r, &mut z);
    let mut p = z.clone();
    let mut rho = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut res = initial;

    for k in 1..=max_iters {
        sys.matvec(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 || !pq.is_finite() {
            // Breakdown: the matrix is not SPD along p.
            return Ok(SolverStats {
                iterations: k - 1,
                initial_residual: initial,
                final_residual: res,
                converged: false,
            });
        }
        let alpha = rho / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        res = norm2(&r) / nf;
        if res <= tol {
            return Ok(SolverStats {
                iterations: k,
                initial_residual: initial,
                final_residual: res,
                converged: true,
            });
        }
        precond.apply(sys, &r, &mut z);
        let rho_new = dot(&r, &z);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Ok(SolverStats {
                iterations: k,
                initial_residual: initial,
                final_residual: res,
                converged: false,
            });
        }
        let beta = rho_new / rho;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rho = rho_new;
    }
    Ok(SolverStats {
        iterations: max_iters,
        initial_residual: initial,
        final_residual: res,
        converged: false,
    })
}

/// Unpreconditioned BiCGStab for general (non-symmetric) systems.
pub fn solve_bicgstab(
    sys: &SparseSystem,
    x: &mut [f64],
    tol: f64,
    max_iters: usize,
) -> Result<SolverStats, SolveError> {
    let n = sys.n();
    let nf = norm_factor(&sys.rhs);
    let mut r = sys.residual(x);
    let initial = norm2(&r) / nf;
    if initial <= tol {
        return Ok(SolverStats {
            iterations: 0,
            initial_residual: initial,
            final_residual: initial,
            converged: true,
        });
    }
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = initial;

    for k in 1..=max_iters {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < f64::MIN_POSITIVE || !rho_new.is_finite() {
            return Ok(SolverStats {
                iterations: k - 1,
                initial_residual: initial,
                final_residual: res,
                converged: false,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        sys.matvec(&p, &mut v);
        let r0v = dot(&r0, &v);
        if r0v.abs() < f64::MIN_POSITIVE || !r0v.is_finite() {
            return Ok(SolverStats {
                iterations: k - 1,
                initial_residual: initial,
                final_residual: res,
                converged: false,
            });
        }
        alpha = rho_new / r0v;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) / nf <= tol {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            res = norm2(&sys.residual(x)) / nf;
            return Ok(SolverStats {
                iterations: k,
                initial_residual: initial,
                final_residual: res,
                converged: res <= tol,
            });
        }
        sys.matvec(&s, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 || !tt.is_finite() {
            return Ok(SolverStats {
                iterations: k,
                initial_residual: initial,
                final_residual: res,
                converged: false,
            });
        }
        omega = dot(&t, &s) / tt;
        if omega == 0.0 || !omega.is_finite() {
            return Ok(SolverStats {
                iterations: k,
                initial_residual: initial,
                final_residual: res,
                converged: false,
            });
        }
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm2(&r) / nf;
        if res <= tol {
            // Recompute from scratch so the report is honest.
            res = norm2(&sys.residual(x)) / nf;
            if res <= tol {
                return Ok(SolverStats {
                    iterations: k,
                    initial_residual: initial,
                    final_residual: res,
                    converged: true,
                });
            }
        }
        rho = rho_new;
    }
    Ok(SolverStats {
        iterations: max_iters,
        initial_residual: initial,
        final_residual: res,
        converged: false,
    })
}

#[cfg(test)]
pub(crate) mod dense {
    use super::SparseSystem;

    /// Dense Gaussian elimination with partial pivoting; the independent
    /// oracle for solver checks. Returns `None` for singular matrices.
    pub fn solve(sys: &SparseSystem) -> Option<Vec<f64>> {
        let n = sys.n();
        let mut a = vec![vec![0.0f64; n + 1]; n];
        for i in 0..n {
            a[i][i] = sys.diag[i];
            a[i][n] = sys.rhs[i];
        }
        for e in 0..sys.topo.n_edges() {
            let (o, nb) = (sys.topo.owner[e], sys.topo.neighbor[e]);
            a[o][nb] = sys.upper[e];
            a[nb][o] = sys.lower[e];
        }
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[piv][col].abs() < 1e-300 {
                return None;
            }
            a.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..=n {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = a[i][n];
            for j in i + 1..n {
                s -= a[i][j] * x[j];
            }
            x[i] = s / a[i][i];
        }
        Some(x)
    }
}
