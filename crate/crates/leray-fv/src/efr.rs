//! The Evolve-Filter-Relax engine: Helmholtz filtering, the
//! deconvolution-based indicator, the nonlinear filter solve, relaxation,
//! and the policies for the filter radius and the relaxation weight.

use crate::coupling::{
    CouplingError, FlowSolver, MomentumState, PisoReport, SimplecReport,
};
use crate::field::{BcKind, FaceFluxField, ScalarField, VectorField};
use crate::geom::Vec2;
use crate::linsolve::{solve_pcg_dic, SparseSystem};
use crate::mesh::Mesh;
use crate::operators::{assemble_laplacian_matrix, laplacian_correction_rhs};

#[derive(Debug, thiserror::Error)]
pub enum EfrError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate parameters: {0}")]
    DegenerateParameters(String),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
}

/// Which algorithm a step runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EfrMode {
    /// Plain segregated solve, no filtering.
    Nse,
    /// Evolve-Filter with the constant indicator `a = 1` (linear filter).
    EfL,
    /// Evolve-Filter with the deconvolution indicator.
    EfNl,
    /// Evolve-Filter-Relax with the deconvolution indicator.
    Efr,
}

/// How the filter radius is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaPolicy {
    /// Shortest cell diameter of the mesh.
    HMin,
    /// Kolmogorov estimate from the reference Reynolds number and length.
    Kolmogorov,
    Explicit(f64),
}

/// How the relaxation weight is chosen each step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChiPolicy {
    /// No relaxation: the filter output is discarded (`u = v`).
    Zero,
    /// The time-step size, capped at 1.
    Dt,
    /// Viscous-dissipation matching estimate.
    Chi1,
    /// Gradient-relaxation estimate.
    Chi2,
    Explicit(f64),
}

#[derive(Clone, Copy, Debug)]
pub struct EfrConfig {
    pub mode: EfrMode,
    pub alpha: AlphaPolicy,
    /// Van Cittert deconvolution order N (N + 1 Helmholtz solves).
    pub deconv_order: usize,
    pub chi: ChiPolicy,
    /// Filtered fields inherit the velocity Dirichlet data; Neumann patches
    /// become homogeneous zero-gradient.
    pub inherit_filter_bcs: bool,
}

impl Default for EfrConfig {
    fn default() -> Self {
        EfrConfig {
            mode: EfrMode::Nse,
            alpha: AlphaPolicy::HMin,
            deconv_order: 0,
            chi: ChiPolicy::Dt,
            inherit_filter_bcs: true,
        }
    }
}

impl EfrConfig {
    pub fn validate(&self) -> Result<(), EfrError> {
        if let AlphaPolicy::Explicit(a) = self.alpha {
            if !(a > 0.0) {
                return Err(EfrError::InvalidArgument(format!(
                    "explicit alpha must be positive (got {a})"
                )));
            }
        }
        if let ChiPolicy::Explicit(chi) = self.chi {
            if !(chi > 0.0 && chi <= 1.0) {
                return Err(EfrError::InvalidArgument(format!(
                    "explicit chi must lie in (0, 1] (got {chi})"
                )));
            }
        }
        Ok(())
    }
}

/// The auxiliary fields of the most recent filter application.
#[derive(Clone, Debug)]
pub struct FilterState {
    /// Filtered (divergence-free) velocity.
    pub vbar: VectorField,
    /// Filter pressure `qbar = rho lambda / dt`.
    pub qbar: ScalarField,
    /// Conservative flux of `vbar`.
    pub phi_bar: FaceFluxField,
    /// Helmholtz-filtered velocity from the indicator evaluation.
    pub vtilde: Option<VectorField>,
    /// Indicator field, in [0, 1].
    pub a: ScalarField,
    /// Face artificial viscosity `rho alpha^2 a_f / dt`.
    pub mu_bar: Vec<f64>,
    /// Relaxation weight used.
    pub chi: f64,
}

/// Kolmogorov length estimate `eta = Re^{-3/4} L`.
pub fn kolmogorov_scale(re: f64, l: f64) -> Result<f64, EfrError> {
    if !(re > 0.0) || !(l > 0.0) {
        return Err(EfrError::InvalidArgument(format!(
            "kolmogorov_scale needs Re > 0 and L > 0 (got {re}, {l})"
        )));
    }
    Ok(re.powf(-0.75) * l)
}

/// Mean Kolmogorov scale `(1/T) integral eta(t) dt` by trapezoidal
/// quadrature over a sampled `Re(t)` trace; samples with `Re = 0` are
/// skipped (the estimate diverges there).
pub fn mean_kolmogorov(samples: &[(f64, f64)], l: f64, t_total: f64) -> Result<f64, EfrError> {
    if !(t_total > 0.0) || !(l > 0.0) {
        return Err(EfrError::InvalidArgument("need T > 0 and L > 0".into()));
    }
    let kept: Vec<(f64, f64)> = samples
        .iter()
        .filter(|&&(_, re)| re > 0.0)
        .map(|&(t, re)| (t, re.powf(-0.75) * l))
        .collect();
    if kept.is_empty() {
        return Err(EfrError::InvalidArgument("Re(t) trace has no positive samples".into()));
    }
    let mut integral = 0.0;
    for w in kept.windows(2) {
        let (t0, e0) = w[0];
        let (t1, e1) = w[1];
        if t1 <= t0 {
            return Err(EfrError::InvalidArgument("Re(t) trace must be strictly increasing in t".into()));
        }
        integral += 0.5 * (e0 + e1) * (t1 - t0);
    }
    Ok(integral / t_total)
}

/// Dissipation-matching relaxation estimate
/// `chi1 = 2 mu max(h - eta, 0) dt / (3 rho eta alpha^2)`, clamped to [0, 1].
pub fn chi1(mu: f64, rho: f64, eta: f64, alpha: f64, h: f64, dt: f64) -> Result<f64, EfrError> {
    check_chi_inputs(mu, rho, eta, alpha, h, dt)?;
    let raw = 2.0 * mu * (h - eta).max(0.0) * dt / (3.0 * rho * eta * alpha * alpha);
    Ok(raw.clamp(0.0, 1.0))
}

/// Gradient-relaxation estimate
/// `chi2 = (h - eta) / ((rho alpha^2 / (mu dt)) eta - eta)`, clamped to [0, 1].
pub fn chi2(mu: f64, rho: f64, eta: f64, alpha: f64, h: f64, dt: f64) -> Result<f64, EfrError> {
    check_chi_inputs(mu, rho, eta, alpha, h, dt)?;
    let denom = (rho * alpha * alpha / (mu * dt) - 1.0) * eta;
    if denom <= 0.0 {
        return Err(EfrError::DegenerateParameters(format!(
            "chi2 denominator is non-positive ({denom:.3e}); rho alpha^2 must exceed mu dt"
        )));
    }
    Ok(((h - eta) / denom).clamp(0.0, 1.0))
}

fn check_chi_inputs(
    mu: f64,
    rho: f64,
    eta: f64,
    alpha: f64,
    h: f64,
    dt: f64,
) -> Result<(), EfrError> {
    for (name, v) in [("mu", mu), ("rho", rho), ("eta", eta), ("alpha", alpha), ("h", h), ("dt", dt)]
    {
        if !(v > 0.0) {
            return Err(EfrError::InvalidArgument(format!("{name} must be positive (got {v})")));
        }
    }
    Ok(())
}

/// Relaxation: `u = (1 - chi) v + chi vbar`; the pressure passes through
/// untouched.
pub fn relax(v: &VectorField, vbar: &VectorField, chi: f64) -> Result<VectorField, EfrError> {
    if !(0.0..=1.0).contains(&chi) {
        return Err(EfrError::InvalidArgument(format!("chi must lie in [0, 1] (got {chi})")));
    }
    Ok(v.lerp(vbar, chi))
}

/// Discrete Helmholtz filter: solves `vtilde - alpha^2 lap(vtilde) = v`
/// with the given boundary conditions (per component, DIC-PCG).
pub fn helmholtz_filter(
    solver: &FlowSolver,
    v: &VectorField,
    alpha: f64,
    bc: &VectorField,
) -> Result<VectorField, EfrError> {
    if !(alpha >= 0.0) {
        return Err(EfrError::InvalidArgument(format!("alpha must be non-negative (got {alpha})")));
    }
    let mesh = solver.mesh;
    let n = mesh.n_cells();
    let mut sys = SparseSystem::zeros(solver.topo.clone());
    for c in 0..n {
        sys.diag[c] = mesh.cell_volume[c];
    }
    let gamma = vec![alpha * alpha; mesh.n_faces()];
    let mut out = bc.clone();
    out.cells = v.cells.clone();
    assemble_laplacian_matrix(mesh, &mut sys, &gamma, &out).map_err(CouplingError::from)?;
    let corr = laplacian_correction_rhs(mesh, &gamma, &out).map_err(CouplingError::from)?;
    for axis in 0..2 {
        let mut comp = sys.clone();
        comp.rhs = (0..n)
            .map(|c| {
                let r = v.cells[c] * mesh.cell_volume[c] + corr[c];
                if axis == 0 {
                    r.x
                } else {
                    r.y
                }
            })
            .collect();
        let mut x: Vec<f64> = out.cells.iter().map(|u| if axis == 0 { u.x } else { u.y }).collect();
        let stats = solve_pcg_dic(&comp, &mut x, solver.cfg.lin_tol, solver.cfg.lin_max_iters)
            .map_err(|e| CouplingError::Solve { context: "helmholtz filter".into(), source: e })?;
        if !stats.converged {
            return Err(CouplingError::SolverStalled {
                context: "helmholtz filter".into(),
                residual: stats.final_residual,
                iterations: stats.iterations,
            }
            .into());
        }
        out.set_component(axis, &x);
    }
    Ok(out)
}

/// Unnormalized deconvolution indicator `|v - D_N(F_H(v))|` evaluated with
/// `N + 1` Helmholtz solves (Van Cittert deconvolution).
pub fn indicator_raw(
    solver: &FlowSolver,
    v: &VectorField,
    alpha: f64,
    deconv_order: usize,
    bc: &VectorField,
) -> Result<(ScalarField, VectorField), EfrError> {
    if !(alpha > 0.0) {
        return Err(EfrError::InvalidArgument(format!("alpha must be positive (got {alpha})")));
    }
    let mesh = solver.mesh;
    let vtilde = helmholtz_filter(solver, v, alpha, bc)?;
    // Van Cittert: D_N(F v) = sum_{k=0}^{N} (I - F)^k (F v).
    let mut term = vtilde.clone();
    let mut sum = vtilde.clone();
    for _ in 0..deconv_order {
        let filtered = helmholtz_filter(solver, &term, alpha, bc)?;
        for c in 0..mesh.n_cells() {
            term.cells[c] = term.cells[c] - filtered.cells[c];
        }
        for c in 0..mesh.n_cells() {
            sum.cells[c] = sum.cells[c] + term.cells[c];
        }
    }
    let mut a = ScalarField::zeros(mesh);
    for c in 0..mesh.n_cells() {
        a.cells[c] = (v.cells[c] - sum.cells[c]).norm();
    }
    Ok((a, vtilde))
}

/// Indicator normalized to [0, 1] by its spatial maximum (identically zero
/// fields stay zero).
pub fn indicator(
    solver: &FlowSolver,
    v: &VectorField,
    alpha: f64,
    deconv_order: usize,
    bc: &VectorField,
) -> Result<(ScalarField, VectorField), EfrError> {
    let (mut a, vtilde) = indicator_raw(solver, v, alpha, deconv_order, bc)?;
    let max = a.cells.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for val in a.cells.iter_mut() {
            *val /= max;
        }
    }
    Ok((a, vtilde))
}

/// Face artificial viscosity `mu_bar_f = rho alpha^2 a_f / dt` with central
/// interpolation of the indicator (owner value on boundary faces).
pub fn mu_bar_faces(mesh: &Mesh, a: &ScalarField, alpha: f64, dt: f64, rho: f64) -> Vec<f64> {
    let scale = rho * alpha * alpha / dt;
    let mut mu = vec![0.0; mesh.n_faces()];
    for f in 0..mesh.n_internal_faces {
        let w = mesh.face_weight(f);
        let af = a.cells[mesh.face_owner[f]] * w + a.cells[mesh.face_neighbor[f]] * (1.0 - w);
        mu[f] = scale * af.max(0.0);
    }
    for f in mesh.n_internal_faces..mesh.n_faces() {
        mu[f] = scale * a.cells[mesh.face_owner[f]].max(0.0);
    }
    mu
}

/// Filter step: builds the face viscosity from the indicator and delegates
/// to the SIMPLEC generalized-Stokes solve.
#[allow(clippy::too_many_arguments)]
pub fn filter_step(
    solver: &FlowSolver,
    v: &VectorField,
    phi_v: &FaceFluxField,
    a: &ScalarField,
    alpha: f64,
    dt: f64,
    vbar_bc: &VectorField,
    qbar0: Option<&ScalarField>,
) -> Result<(VectorField, ScalarField, FaceFluxField, Vec<f64>, SimplecReport), EfrError> {
    if a.cells.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(EfrError::InvalidArgument("indicator must lie in [0, 1]".into()));
    }
    let mu_bar = mu_bar_faces(solver.mesh, a, alpha, dt, solver.rho);
    let (vbar, qbar, phi_bar, report) =
        solver.simplec_step(v, phi_v, dt, &mu_bar, vbar_bc, qbar0)?;
    Ok((vbar, qbar, phi_bar, mu_bar, report))
}

/// Boundary conditions inherited by the filtered fields: Dirichlet data is
/// copied from the velocity, fixed-gradient patches become homogeneous.
pub fn inherited_filter_bcs(u: &VectorField) -> VectorField {
    let mut bc = u.clone();
    for patch in bc.boundary.iter_mut() {
        if patch.kind == BcKind::FixedGradient {
            for v in patch.values.iter_mut() {
                *v = Vec2::ZERO;
            }
        }
    }
    bc
}

/// Diagnostics of one EFR step.
#[derive(Clone, Debug)]
pub struct EfrStepReport {
    pub piso: PisoReport,
    pub simplec: Option<SimplecReport>,
    pub chi: f64,
}

/// The per-simulation driver tying the evolve, filter, and relax stages
/// together.
pub struct EfrEngine<'m> {
    pub solver: FlowSolver<'m>,
    pub config: EfrConfig,
    /// Resolved filter radius.
    pub alpha: f64,
    /// Shortest cell diameter, used by the chi policies.
    pub h_min: f64,
    /// Kolmogorov estimate for the alpha/chi policies.
    pub eta: f64,
    /// Fields of the most recent filter application.
    pub filter: Option<FilterState>,
}

impl<'m> EfrEngine<'m> {
    /// `eta` is the Kolmogorov estimate of the case (used when the alpha
    /// policy or a chi policy asks for it).
    pub fn new(solver: FlowSolver<'m>, config: EfrConfig, eta: f64) -> Result<Self, EfrError> {
        config.validate()?;
        let q = solver.mesh.quality();
        let h_min = q.h_min;
        let alpha = match config.alpha {
            AlphaPolicy::HMin => h_min,
            AlphaPolicy::Kolmogorov => {
                if !(eta > 0.0) {
                    return Err(EfrError::InvalidArgument(
                        "Kolmogorov alpha policy needs a positive eta".into(),
                    ));
                }
                eta
            }
            AlphaPolicy::Explicit(a) => a,
        };
        Ok(EfrEngine { solver, config, alpha, h_min, eta, filter: None })
    }

    fn resolve_chi(&self, dt: f64) -> Result<f64, EfrError> {
        match self.config.chi {
            ChiPolicy::Zero => Ok(0.0),
            ChiPolicy::Dt => Ok(dt.min(1.0)),
            ChiPolicy::Chi1 => {
                chi1(self.solver.mu, self.solver.rho, self.eta, self.alpha, self.h_min, dt)
            }
            ChiPolicy::Chi2 => {
                chi2(self.solver.mu, self.solver.rho, self.eta, self.alpha, self.h_min, dt)
            }
            ChiPolicy::Explicit(chi) => Ok(chi),
        }
    }

    /// One full step: evolve; then, unless the mode is NSE, filter and relax
    /// and replace the newest history level with the relaxed fields.
    pub fn step(&mut self, state: &mut MomentumState, dt: f64) -> Result<EfrStepReport, EfrError> {
        let piso = self.solver.piso_step(state, dt, &vec![Vec2::ZERO; state.u.cells.len()])?;
        self.step_filter_stage(state, dt, piso)
    }

    /// As [`EfrEngine::step`] but with a body force per cell.
    pub fn step_forced(
        &mut self,
        state: &mut MomentumState,
        dt: f64,
        force: &[Vec2],
    ) -> Result<EfrStepReport, EfrError> {
        let piso = self.solver.piso_step(state, dt, force)?;
        self.step_filter_stage(state, dt, piso)
    }

    fn step_filter_stage(
        &mut self,
        state: &mut MomentumState,
        dt: f64,
        piso: PisoReport,
    ) -> Result<EfrStepReport, EfrError> {
        if self.config.mode == EfrMode::Nse {
            return Ok(EfrStepReport { piso, simplec: None, chi: 0.0 });
        }
        let mesh = self.solver.mesh;
        // The evolve result is the newest history level after piso_step.
        let v = state.u.clone();
        let phi_v = state.phi.clone();
        let bc = if self.config.inherit_filter_bcs {
            inherited_filter_bcs(&v)
        } else {
            VectorField::zeros(mesh)
        };

        let (a, vtilde) = match self.config.mode {
            EfrMode::EfL => (
                ScalarField::uniform(mesh, 1.0, BcKind::FixedGradient, 0.0),
                None,
            ),
            EfrMode::EfNl | EfrMode::Efr => {
                let (a, vt) = indicator(&self.solver, &v, self.alpha, self.config.deconv_order, &bc)?;
                (a, Some(vt))
            }
            EfrMode::Nse => unreachable!(),
        };

        let chi = match self.config.mode {
            // Evolve-Filter: no relaxation stage, the filtered field is the
            // end-of-step field.
            EfrMode::EfL | EfrMode::EfNl => 1.0,
            EfrMode::Efr => self.resolve_chi(dt)?,
            EfrMode::Nse => unreachable!(),
        };

        if chi == 0.0 {
            // Relaxation keeps the evolve result; skip the filter solve.
            self.filter = None;
            return Ok(EfrStepReport { piso, simplec: None, chi });
        }

        let qbar0 = self.filter.as_ref().map(|f| f.qbar.clone());
        let (vbar, qbar, phi_bar, mu_bar, simplec) = filter_step(
            &self.solver,
            &v,
            &phi_v,
            &a,
            self.alpha,
            dt,
            &bc,
            qbar0.as_ref(),
        )?;

        let u_new = relax(&v, &vbar, chi)?;
        let phi_new = phi_v.lerp(&phi_bar, chi);
        state.replace_head(u_new, phi_new);

        self.filter = Some(FilterState { vbar, qbar, phi_bar, vtilde, a, mu_bar, chi });
        Ok(EfrStepReport { piso, simplec: Some(simplec), chi })
    }
}
