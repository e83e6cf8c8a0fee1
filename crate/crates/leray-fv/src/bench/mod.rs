//! The channel-flow-past-a-cylinder benchmark: case constants, the
//! time-dependent inlet law, force-coefficient extraction, error metrics,
//! CFL-driven time stepping, and the run driver.

mod cylinder_mesh;

pub use cylinder_mesh::{
    cylinder_mesh, cylinder_mesh_custom, CylinderMeshLevel, CylinderMeshParams,
};

use crate::coupling::{CouplingConfig, CouplingError, FlowSolver, MomentumState};
use crate::efr::{EfrConfig, EfrEngine, EfrError, FilterState, kolmogorov_scale};
use crate::field::{BcKind, FaceFluxField, ScalarField, VectorField};
use crate::geom::{Tensor2, Vec2};
use crate::mesh::Mesh;
use crate::operators::gauss_gradient;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("blow-up at t = {t:.4}: {source}")]
    BlowUp {
        t: f64,
        #[source]
        source: CouplingError,
    },
    #[error("at t = {t:.4}: {source}")]
    Step {
        t: f64,
        #[source]
        source: EfrError,
    },
}

/// Fixed constants of the benchmark case.
#[derive(Clone, Copy, Debug)]
pub struct CylinderCase {
    pub channel_length: f64,
    pub channel_height: f64,
    pub centre: Vec2,
    pub radius: f64,
    pub rho: f64,
    pub mu: f64,
    /// Reference velocity for the coefficient normalization.
    pub u_ref: f64,
    /// Reference length (cylinder diameter).
    pub l_ref: f64,
    /// Final time of the inlet ramp period.
    pub t_end: f64,
    /// Peak inlet centreline velocity.
    pub u_max: f64,
}

impl Default for CylinderCase {
    fn default() -> Self {
        CylinderCase {
            channel_length: 2.2,
            channel_height: 0.41,
            centre: Vec2::new(0.2, 0.2),
            radius: 0.05,
            rho: 1.0,
            mu: 1e-3,
            u_ref: 1.0,
            l_ref: 0.1,
            t_end: 8.0,
            u_max: 1.5,
        }
    }
}

impl CylinderCase {
    /// Prescribed inlet/outlet velocity profile
    /// `( (6/H^2) sin(pi t / T) y (H - y), 0 )`.
    pub fn inlet_velocity(&self, y: f64, t: f64) -> Result<Vec2, BenchError> {
        let h = self.channel_height;
        if !(0.0..=h).contains(&y) {
            return Err(BenchError::InvalidArgument(format!(
                "inlet ordinate y = {y} outside [0, {h}]"
            )));
        }
        let amp = self.u_max * 4.0 / (h * h);
        Ok(Vec2::new(amp * (std::f64::consts::PI * t / self.t_end).sin() * y * (h - y), 0.0))
    }

    /// Time-dependent Reynolds number based on the mean inlet speed
    /// (two thirds of the centreline peak) and the cylinder diameter.
    pub fn reynolds(&self, t: f64) -> f64 {
        let u_mean = 2.0 / 3.0 * self.u_max * (std::f64::consts::PI * t / self.t_end).sin();
        u_mean.max(0.0) * self.l_ref * self.rho / self.mu
    }

    /// Kolmogorov estimate at the peak Reynolds number.
    pub fn eta_peak(&self) -> f64 {
        let re_max = 2.0 / 3.0 * self.u_max * self.l_ref * self.rho / self.mu;
        kolmogorov_scale(re_max, self.l_ref).expect("benchmark constants are positive")
    }
}

/// Time series of the force coefficients with peak extraction.
#[derive(Clone, Debug, Default)]
pub struct CoefficientSeries {
    /// `(t, c_l, c_d)` samples, strictly increasing in `t`.
    pub samples: Vec<(f64, f64, f64)>,
}

/// Extracted peak values; times are refined by a quadratic fit through the
/// three samples around the discrete maximum.
#[derive(Clone, Copy, Debug)]
pub struct CoefficientPeaks {
    pub cl_max: f64,
    pub t_cl_max: f64,
    pub cd_max: f64,
    pub t_cd_max: f64,
}

impl CoefficientSeries {
    pub fn push(&mut self, t: f64, cl: f64, cd: f64) {
        if let Some(&(last, _, _)) = self.samples.last() {
            assert!(t > last, "samples must be strictly increasing in time");
        }
        self.samples.push((t, cl, cd));
    }

    pub fn peaks(&self) -> Option<CoefficientPeaks> {
        if self.samples.is_empty() {
            return None;
        }
        let (cl_max, t_cl_max) = self.peak_of(|s| s.1);
        let (cd_max, t_cd_max) = self.peak_of(|s| s.2);
        Some(CoefficientPeaks { cl_max, t_cl_max, cd_max, t_cd_max })
    }

    fn peak_of(&self, pick: impl Fn(&(f64, f64, f64)) -> f64) -> (f64, f64) {
        let (imax, smax) = self
            .samples
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| pick(a).total_cmp(&pick(b)))
            .expect("non-empty");
        let value = pick(smax);
        let mut t_peak = smax.0;
        if imax > 0 && imax + 1 < self.samples.len() {
            let (t0, c0) = (self.samples[imax - 1].0, pick(&self.samples[imax - 1]));
            let (t1, c1) = (self.samples[imax].0, value);
            let (t2, c2) = (self.samples[imax + 1].0, pick(&self.samples[imax + 1]));
            let d1 = (t1 - t0) * (t1 - t0) * (c1 - c2) - (t1 - t2) * (t1 - t2) * (c1 - c0);
            let d2 = (t1 - t0) * (c1 - c2) - (t1 - t2) * (c1 - c0);
            if d2.abs() > 1e-300 {
                let refined = t1 - 0.5 * d1 / d2;
                // Keep the refinement inside the sample triplet.
                if refined >= t0 && refined <= t2 {
                    t_peak = refined;
                }
            }
        }
        (value, t_peak)
    }
}

/// Signed percentage errors of the peak coefficients against reference
/// peaks: `E = (max - max_true) / max_true * 100`.
pub fn error_metrics(
    peaks: &CoefficientPeaks,
    cl_true: f64,
    cd_true: f64,
) -> Result<(f64, f64), BenchError> {
    if !(cl_true > 0.0) || !(cd_true > 0.0) {
        return Err(BenchError::InvalidArgument("reference peaks must be positive".into()));
    }
    Ok((
        (peaks.cl_max - cl_true) / cl_true * 100.0,
        (peaks.cd_max - cd_true) / cd_true * 100.0,
    ))
}

/// Drag and lift coefficients from the Cauchy stress integrated over the
/// cylinder patch: `c_d = 2 F_x / (rho L U^2)`, `c_l = 2 F_y / (rho L U^2)`.
/// The wall velocity gradient uses the cell gradient with its face-normal
/// part replaced by the compact two-point difference.
pub fn drag_lift(
    mesh: &Mesh,
    u: &VectorField,
    p: &ScalarField,
    mu: f64,
    case: &CylinderCase,
) -> Result<(f64, f64), BenchError> {
    let patch = mesh
        .patch("cylinder")
        .ok_or_else(|| BenchError::Configuration("mesh has no 'cylinder' patch".into()))?;
    let grads = gauss_gradient(mesh, u);
    let mut force = Vec2::ZERO;
    for face in patch.faces() {
        let owner = mesh.face_owner[face];
        let area = mesh.face_area[face];
        let n_hat = area.unit();
        let dn = mesh.boundary_delta(face).dot(n_hat);
        let u_b = u.boundary_face_value(mesh, face);
        let p_b = p.boundary_face_value(mesh, face);
        // Replace the face-normal derivative with the two-point difference.
        let g_cell = grads[owner];
        let normal_deriv = (u_b - u.cells[owner]) * (1.0 / dn);
        let g_b = g_cell + Tensor2::outer(normal_deriv - g_cell.dot(n_hat), n_hat);
        // The mesh face normal points out of the fluid into the body; the
        // traction on the body uses the opposite normal: F = -sum sigma . A.
        let viscous = (g_b + g_b.transpose()).dot(area) * mu;
        force += area * p_b - viscous;
    }
    let scale = 2.0 / (case.rho * case.l_ref * case.u_ref * case.u_ref);
    Ok((force.x * scale, force.y * scale))
}

/// CFL-limited time step: `dt = cfl_max * min_f (spacing_f / speed_f)` with
/// the face-normal speed `|phi_f| / |A_f|`, clamped to `dt_max` (which also
/// covers the flow-at-rest start).
pub fn cfl_dt_from_flux(mesh: &Mesh, phi: &FaceFluxField, cfl_max: f64, dt_max: f64) -> f64 {
    assert!(cfl_max > 0.0 && dt_max > 0.0);
    let mut dt = dt_max;
    for f in 0..mesh.n_faces() {
        let area = mesh.face_area[f].norm();
        let speed = phi.faces[f].abs() / area;
        if speed <= 0.0 {
            continue;
        }
        let spacing = if mesh.is_internal(f) {
            mesh.face_delta(f).norm()
        } else {
            2.0 * mesh.boundary_delta(f).dot(mesh.face_area[f].unit()).abs()
        };
        dt = dt.min(cfl_max * spacing / speed);
    }
    dt
}

/// CFL-limited time step from a cell velocity field.
pub fn cfl_dt(mesh: &Mesh, velocity: &VectorField, cfl_max: f64, dt_max: f64) -> f64 {
    let phi = crate::operators::face_flux(mesh, velocity);
    cfl_dt_from_flux(mesh, &phi, cfl_max, dt_max)
}

/// Time-stepping controls of a benchmark run.
#[derive(Clone, Copy, Debug)]
pub struct RunControls {
    pub t_start: f64,
    pub t_end: f64,
    pub cfl_max: f64,
    pub dt_max: f64,
    /// Cap on step-to-step growth of dt; keeps the variable-step BDF2
    /// weights well behaved.
    pub dt_growth: f64,
}

impl Default for RunControls {
    fn default() -> Self {
        RunControls { t_start: 0.0, t_end: 8.0, cfl_max: 0.2, dt_max: 2e-3, dt_growth: 1.2 }
    }
}

/// Per-step observation handed to the run observer.
pub struct StepInfo<'a> {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub cl: f64,
    pub cd: f64,
    pub state: &'a MomentumState,
    pub filter: Option<&'a FilterState>,
}

/// Result of a completed benchmark run.
pub struct RunResult {
    pub series: CoefficientSeries,
    pub state: MomentumState,
    pub filter: Option<FilterState>,
    pub steps: usize,
}

/// Initial state of the benchmark: fluid at rest, no-slip walls and
/// cylinder, prescribed profile at both channel ends, zero-gradient
/// pressure.
pub fn initial_state(mesh: &Mesh, case: &CylinderCase) -> Result<MomentumState, BenchError> {
    for name in ["left", "right", "top", "bottom", "cylinder"] {
        if mesh.patch(name).is_none() {
            return Err(BenchError::Configuration(format!("mesh has no '{name}' patch")));
        }
    }
    let mut u = VectorField::uniform(mesh, Vec2::ZERO, BcKind::FixedValue, Vec2::ZERO);
    set_inlet(mesh, case, &mut u, 0.0)?;
    let p = ScalarField::zeros(mesh);
    Ok(MomentumState::at_rest(u, p, mesh))
}

/// Write the prescribed end profiles at time `t` into the velocity BCs.
pub fn set_inlet(
    mesh: &Mesh,
    case: &CylinderCase,
    u: &mut VectorField,
    t: f64,
) -> Result<(), BenchError> {
    for name in ["left", "right"] {
        let ip = mesh.patches.iter().position(|p| p.name == name).unwrap();
        let patch = &mesh.patches[ip];
        for (k, face) in patch.faces().enumerate() {
            let y = mesh.face_centre[face].y;
            u.boundary[ip].values[k] = case.inlet_velocity(y.clamp(0.0, case.channel_height), t)?;
        }
    }
    Ok(())
}

/// Advance the benchmark from rest to `controls.t_end`, recording the force
/// coefficients every step. The observer runs after each completed step.
pub fn run_case(
    mesh: &Mesh,
    case: &CylinderCase,
    efr: EfrConfig,
    coupling: CouplingConfig,
    controls: &RunControls,
    mut observer: impl FnMut(&StepInfo),
) -> Result<RunResult, BenchError> {
    let mut cfg = coupling;
    cfg.velocity_scale = case.u_max;
    let solver = FlowSolver::new(mesh, case.rho, case.mu, cfg);
    let mut engine =
        EfrEngine::new(solver, efr, case.eta_peak()).map_err(|e| BenchError::Step {
            t: controls.t_start,
            source: e,
        })?;

    let mut state = initial_state(mesh, case)?;
    let mut series = CoefficientSeries::default();
    let mut t = controls.t_start;
    let mut step = 0;
    let mut dt_prev: Option<f64> = None;
    while t < controls.t_end - 1e-12 {
        let mut dt = cfl_dt_from_flux(mesh, &state.phi, controls.cfl_max, controls.dt_max);
        if let Some(prev) = dt_prev {
            dt = dt.min(prev * controls.dt_growth);
        }
        // Equalize the remaining steps so the run lands on t_end without a
        // degenerate final step.
        let remaining = controls.t_end - t;
        dt = remaining / (remaining / dt).ceil().max(1.0);
        let t_new = t + dt;
        set_inlet(mesh, case, &mut state.u, t_new)?;
        engine
            .step(&mut state, dt)
            .map_err(|e| match e {
                EfrError::Coupling(c @ CouplingError::BlowUp { .. }) => {
                    BenchError::BlowUp { t: t_new, source: c }
                }
                other => BenchError::Step { t: t_new, source: other },
            })?;
        t = t_new;
        step += 1;
        dt_prev = Some(dt);
        let (cd, cl) = drag_lift(mesh, &state.u, &state.p, case.mu, case)?;
        series.push(t, cl, cd);
        observer(&StepInfo {
            step,
            t,
            dt,
            cl,
            cd,
            state: &state,
            filter: engine.filter.as_ref(),
        });
    }
    Ok(RunResult { series, state, filter: engine.filter.take(), steps: step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_rect;
    use approx::assert_relative_eq;

    #[test]
    fn inlet_profile_values() {
        let case = CylinderCase::default();
        // No-slip endpoints at any time.
        assert_eq!(case.inlet_velocity(0.0, 3.3).unwrap(), Vec2::ZERO);
        assert_eq!(case.inlet_velocity(0.41, 1.0).unwrap(), Vec2::ZERO);
        // Ramp closes at t = T.
        let v = case.inlet_velocity(0.2, 8.0).unwrap();
        assert!(v.norm() < 1e-12);
        // Closed form: parabola peak times sin(pi/2).
        let v = case.inlet_velocity(0.205, 4.0).unwrap();
        assert_relative_eq!(v.x, 1.5, max_relative = 1e-12);
        assert_eq!(v.y, 0.0);
        assert!(case.inlet_velocity(-0.01, 1.0).is_err());
        assert!(case.inlet_velocity(0.42, 1.0).is_err());
    }

    #[test]
    fn reynolds_trace_peaks_at_100() {
        let case = CylinderCase::default();
        assert_relative_eq!(case.reynolds(4.0), 100.0, max_relative = 1e-12);
        assert!(case.reynolds(0.0).abs() < 1e-12);
        assert_relative_eq!(case.eta_peak(), 3.1623e-3, max_relative = 1e-4);
    }

    #[test]
    fn peak_extraction_with_quadratic_refinement() {
        let mut s = CoefficientSeries::default();
        // cl = -(t-2)^2 + 1 sampled away from the vertex; cd = t.
        for (i, t) in [0.0, 1.0, 1.9, 2.3, 3.0].iter().enumerate() {
            s.push(*t, -(t - 2.0) * (t - 2.0) + 1.0, 0.1 * i as f64);
        }
        let p = s.peaks().unwrap();
        // Value is an attained sample.
        assert!(s.samples.iter().any(|&(_, cl, _)| cl == p.cl_max));
        // Time refined to the parabola vertex.
        assert_relative_eq!(p.t_cl_max, 2.0, max_relative = 1e-12);
        // cd is monotone: peak at the last sample, no refinement possible.
        assert_eq!(p.t_cd_max, 3.0);
    }

    #[test]
    #[should_panic(expected = "strictly increasing")]
    fn series_rejects_non_monotone_times() {
        let mut s = CoefficientSeries::default();
        s.push(1.0, 0.0, 0.0);
        s.push(1.0, 0.0, 0.0);
    }

    #[test]
    fn error_metric_values() {
        let peaks =
            CoefficientPeaks { cl_max: 0.544, t_cl_max: 0.0, cd_max: 3.074, t_cd_max: 0.0 };
        let (ecl, ecd) = error_metrics(&peaks, 0.495, 2.986).unwrap();
        assert_relative_eq!(ecl, 9.89899, max_relative = 1e-5);
        assert_relative_eq!(ecd, 2.94709, max_relative = 1e-4);
        let same = CoefficientPeaks { cl_max: 0.5, t_cl_max: 0.0, cd_max: 3.0, t_cd_max: 0.0 };
        let (ecl, ecd) = error_metrics(&same, 0.5, 3.0).unwrap();
        assert_eq!(ecl, 0.0);
        assert_eq!(ecd, 0.0);
        assert!(error_metrics(&peaks, 0.0, 1.0).is_err());
    }

    #[test]
    fn cfl_dt_arithmetic() {
        // Uniform |u| = 1.5 on a strip with spacing h: dt = 0.2 h / 1.5.
        let h = 4.2e-3;
        let mesh = generate_rect(10, 1, 10.0 * h, h).unwrap();
        let mut v = VectorField::uniform(&mesh, Vec2::ZERO, BcKind::FixedValue, Vec2::ZERO);
        for c in 0..mesh.n_cells() {
            v.cells[c] = Vec2::new(1.5, 0.0);
        }
        for b in v.boundary.iter_mut() {
            for val in b.values.iter_mut() {
                *val = Vec2::new(1.5, 0.0);
            }
        }
        let dt = cfl_dt(&mesh, &v, 0.2, 1.0);
        assert_relative_eq!(dt, 0.2 * h / 1.5, max_relative = 1e-12);
        // Rest state clamps to dt_max.
        let zero = VectorField::uniform(&mesh, Vec2::ZERO, BcKind::FixedValue, Vec2::ZERO);
        assert_eq!(cfl_dt(&mesh, &zero, 0.2, 0.75), 0.75);
        // Linearity in the CFL bound.
        let dt2 = cfl_dt(&mesh, &v, 0.4, 1.0);
        assert_relative_eq!(dt2, 2.0 * dt, max_relative = 1e-12);
    }

    #[test]
    fn drag_lift_zero_velocity_uniform_pressure() {
        let mesh = cylinder_mesh(CylinderMeshLevel::Smoke).unwrap();
        let case = CylinderCase::default();
        let u = VectorField::uniform(&mesh, Vec2::ZERO, BcKind::FixedValue, Vec2::ZERO);
        let p = ScalarField::uniform(&mesh, 5.0, BcKind::FixedGradient, 0.0);
        let (cd, cl) = drag_lift(&mesh, &u, &p, case.mu, &case).unwrap();
        // Closed polygonal surface: the uniform-pressure integral cancels.
        assert!(cd.abs() < 1e-10, "{cd}");
        assert!(cl.abs() < 1e-10, "{cl}");
    }

    #[test]
    fn drag_lift_missing_patch_is_configuration_error() {
        let mesh = generate_rect(4, 4, 1.0, 1.0).unwrap();
        let case = CylinderCase::default();
        let u = VectorField::zeros(&mesh);
        let p = ScalarField::zeros(&mesh);
        assert!(matches!(
            drag_lift(&mesh, &u, &p, case.mu, &case),
            Err(BenchError::Configuration(_))
        ));
    }

    #[test]
    fn pressure_force_on_half_cylinder_matches_projected_area() {
        // Uniform pressure over half of the cylinder patch only: the force
        // is p times the projected chord vector of the half-polygon.
        let mesh = cylinder_mesh(CylinderMeshLevel::Smoke).unwrap();
        let case = CylinderCase::default();
        let patch = mesh.patch("cylinder").unwrap();
        let p0 = 2.5;
        let mut force = Vec2::ZERO;
        let mut chord_start = None;
        let mut chord_end = None;
        for face in patch.faces() {
            let fc = mesh.face_centre[face];
            if fc.x <= case.centre.x {
                continue; // keep the downstream half
            }
            force += mesh.face_area[face] * p0;
            let [a, b] = mesh.face_points[face];
            if chord_start.is_none() {
                chord_start = Some(a);
            }
            chord_end = Some(b);
            let _ = (a, b);
        }
        // Analytic: -p0 * sum(A) = -p0 * rotate(end - start); for the
        // downstream half the net area vector has magnitude ~ 2 r in +x.
        let expect = 2.0 * case.radius * p0;
        assert_relative_eq!(force.x.abs(), expect, max_relative = 0.02);
        assert!(force.y.abs() < 0.02 * expect);
        let _ = (chord_start, chord_end);
    }

    /// Short symmetric-channel run: before shedding develops the lift must
    /// stay near zero on a mirror-symmetric mesh.
    #[test]
    fn symmetric_transient_has_negligible_lift() {
        let mut params = CylinderMeshLevel::Smoke.params();
        params.height = 0.40;
        params.centre = Vec2::new(0.2, 0.2);
        let mesh = cylinder_mesh_custom(params).unwrap();
        let mut case = CylinderCase::default();
        case.channel_height = 0.40;
        let controls = RunControls { t_end: 0.4, dt_max: 4e-3, ..Default::default() };
        let result = run_case(
            &mesh,
            &case,
            EfrConfig::default(),
            CouplingConfig::default(),
            &controls,
            |_| {},
        )
        .unwrap();
        for &(t, cl, cd) in &result.series.samples {
            assert!(cl.abs() < 1e-2, "t={t}: cl={cl}");
            assert!(cd.is_finite());
        }
        // Inlet/outlet balance at the final state.
        let net = result.state.phi.boundary_net(&mesh);
        let inlet: f64 = mesh
            .patch("left")
            .unwrap()
            .faces()
            .map(|f| result.state.phi.faces[f].abs())
            .sum();
        assert!(net.abs() <= 1e-8 * inlet.max(1e-30), "net {net} vs inlet {inlet}");
    }
}
