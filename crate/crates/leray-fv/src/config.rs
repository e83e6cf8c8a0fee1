//! Declarative case configuration: a TOML document with sections for the
//! mesh, physics, boundaries, filter settings, time controls, and outputs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bench::{CylinderMeshLevel, RunControls};
use crate::coupling::CouplingConfig;
use crate::efr::{AlphaPolicy, ChiPolicy, EfrConfig, EfrMode};
use crate::field::{BcKind, ScalarField, VectorField};
use crate::geom::Vec2;
use crate::mesh::{generate_rect, Mesh};
use crate::operators::Scheme;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("{key}: {msg}")]
    Invalid { key: String, msg: String },
    #[error("mesh: {0}")]
    Mesh(#[from] crate::mesh::MeshError),
    #[error("mesh file {path}: {source}")]
    MeshFile {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("mesh file {path}: {source}")]
    MeshParse {
        path: String,
        #[source]
        source: crate::mesh::MshError,
    },
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), msg: msg.into() }
}

/// Top-level case file.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub mesh: MeshSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    pub time: TimeSection,
    #[serde(default)]
    pub efr: EfrSection,
    #[serde(default)]
    pub solver: SolverSection,
    /// Per-patch boundary conditions; patches not listed fall back to
    /// defaults (no-slip walls, benchmark profile on `left`/`right` for
    /// cylinder-channel meshes).
    #[serde(default)]
    pub boundaries: BTreeMap<String, BoundarySection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub kind: MeshKind,
    /// Refinement level of the built-in cylinder-channel generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    /// Path to a Gmsh MSH v2 ASCII file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MeshKind {
    CylinderChannel,
    Rect,
    Msh,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    pub rho: f64,
    pub mu: f64,
    #[serde(default)]
    pub body_force: [f64; 2],
}

impl Default for PhysicsSection {
    fn default() -> Self {
        PhysicsSection { rho: 1.0, mu: 1e-3, body_force: [0.0, 0.0] }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(default)]
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default = "default_cfl")]
    pub cfl_max: f64,
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
}

fn default_cfl() -> f64 {
    0.2
}

fn default_dt_max() -> f64 {
    2e-3
}

/// Policy value that is either a named policy or an explicit number.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum PolicyValue {
    Named(String),
    Explicit(f64),
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EfrSection {
    /// `nse`, `ef-l`, `ef-nl`, or `efr`.
    pub mode: String,
    /// `h-min`, `kolmogorov`, or an explicit length.
    pub alpha_policy: PolicyValue,
    /// `zero`, `dt`, `chi1`, `chi2`, or an explicit weight in (0, 1].
    pub chi_policy: PolicyValue,
    #[serde(default)]
    pub n_deconv: usize,
    /// Reference Reynolds number for the Kolmogorov-based policies.
    #[serde(default = "default_re_max")]
    pub re_max: f64,
    /// Reference length for the Kolmogorov-based policies.
    #[serde(default = "default_l_ref")]
    pub l_ref: f64,
}

fn default_re_max() -> f64 {
    100.0
}

fn default_l_ref() -> f64 {
    0.1
}

impl Default for EfrSection {
    fn default() -> Self {
        EfrSection {
            mode: "nse".into(),
            alpha_policy: PolicyValue::Named("h-min".into()),
            chi_policy: PolicyValue::Named("dt".into()),
            n_deconv: 0,
            re_max: default_re_max(),
            l_ref: default_l_ref(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iters: usize,
    pub n_correctors: usize,
    pub n_non_orth_correctors: usize,
    /// `cd`, `upwind`, or `lud`.
    pub scheme: String,
    pub simplec_relax: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: 1e-6,
            max_iters: 5000,
            n_correctors: 2,
            n_non_orth_correctors: 2,
            scheme: "lud".into(),
            simplec_relax: 0.8,
        }
    }
}

/// Boundary condition of one patch.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<VelocityBc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure: Option<PressureBc>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum VelocityBc {
    NoSlip,
    ZeroGradient,
    /// Fixed velocity vector.
    Fixed([f64; 2]),
    /// The benchmark channel profile `(6 u_max/ (4 H^2)) sin(pi t/T) y (H-y)`
    /// evaluated along the patch.
    ChannelInlet,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum PressureBc {
    ZeroGradient,
    Fixed(f64),
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vtk_dir: Option<PathBuf>,
    /// Steps between VTK dumps; 0 disables them.
    #[serde(default)]
    pub vtk_every: usize,
    #[serde(default = "default_log")]
    pub log: String,
}

fn default_log() -> String {
    "info".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { csv: None, vtk_dir: None, vtk_every: 0, log: default_log() }
    }
}

/// Parse and validate a case file.
pub fn parse_config(text: &str) -> Result<CaseConfig, ConfigError> {
    let cfg: CaseConfig = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Serialize a config; `parse_config(serialize(c))` equals `c`.
pub fn serialize_config(cfg: &CaseConfig) -> Result<String, ConfigError> {
    Ok(toml::to_string_pretty(cfg)?)
}

impl CaseConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.mesh.kind {
            MeshKind::CylinderChannel => {
                let level = self.mesh.level.as_deref().unwrap_or("16k");
                if CylinderMeshLevel::parse(level).is_none() {
                    return Err(invalid(
                        "mesh.level",
                        format!("unknown level '{level}' (smoke, 16k, 25k, 63k, 120k)"),
                    ));
                }
            }
            MeshKind::Rect => {
                for (key, val) in
                    [("mesh.nx", self.mesh.nx), ("mesh.ny", self.mesh.ny)]
                {
                    if val.is_none() {
                        return Err(invalid(key, "required for kind = \"rect\""));
                    }
                }
                if self.mesh.width.is_none() || self.mesh.height.is_none() {
                    return Err(invalid("mesh.width/height", "required for kind = \"rect\""));
                }
            }
            MeshKind::Msh => {
                if self.mesh.path.is_none() {
                    return Err(invalid("mesh.path", "required for kind = \"msh\""));
                }
            }
        }
        if !(self.physics.rho > 0.0) {
            return Err(invalid("physics.rho", "must be positive"));
        }
        if !(self.physics.mu >= 0.0) {
            return Err(invalid("physics.mu", "must be non-negative"));
        }
        if !(self.time.t_end >= self.time.t_start) {
            return Err(invalid("time.t_end", "must be at least t_start"));
        }
        if !(self.time.cfl_max > 0.0) {
            return Err(invalid("time.cfl_max", "must be positive"));
        }
        if !(self.time.dt_max > 0.0) {
            return Err(invalid("time.dt_max", "must be positive"));
        }
        self.efr_config()?;
        if !(self.solver.tol > 0.0) {
            return Err(invalid("solver.tol", "must be positive"));
        }
        if self.solver.n_correctors < 1 || self.solver.n_non_orth_correctors < 1 {
            return Err(invalid("solver.n_correctors", "corrector counts must be at least 1"));
        }
        if !(self.solver.simplec_relax > 0.0 && self.solver.simplec_relax <= 1.0) {
            return Err(invalid("solver.simplec_relax", "must lie in (0, 1]"));
        }
        self.scheme()?;
        Ok(())
    }

    pub fn scheme(&self) -> Result<Scheme, ConfigError> {
        match self.solver.scheme.as_str() {
            "cd" => Ok(Scheme::Cd),
            "upwind" => Ok(Scheme::Upwind),
            "lud" => Ok(Scheme::Lud),
            other => Err(invalid("solver.scheme", format!("unknown scheme '{other}'"))),
        }
    }

    pub fn efr_config(&self) -> Result<EfrConfig, ConfigError> {
        let mode = match self.efr.mode.as_str() {
            "nse" => EfrMode::Nse,
            "ef-l" => EfrMode::EfL,
            "ef-nl" => EfrMode::EfNl,
            "efr" => EfrMode::Efr,
            other => return Err(invalid("efr.mode", format!("unknown mode '{other}'"))),
        };
        let alpha = match &self.efr.alpha_policy {
            PolicyValue::Named(name) => match name.as_str() {
                "h-min" => AlphaPolicy::HMin,
                "kolmogorov" => AlphaPolicy::Kolmogorov,
                other => {
                    return Err(invalid("efr.alpha_policy", format!("unknown policy '{other}'")))
                }
            },
            PolicyValue::Explicit(v) => {
                if !(*v > 0.0) {
                    return Err(invalid("efr.alpha_policy", "explicit alpha must be positive"));
                }
                AlphaPolicy::Explicit(*v)
            }
        };
        let chi = match &self.efr.chi_policy {
            PolicyValue::Named(name) => match name.as_str() {
                "zero" => ChiPolicy::Zero,
                "dt" => ChiPolicy::Dt,
                "chi1" => ChiPolicy::Chi1,
                "chi2" => ChiPolicy::Chi2,
                other => {
                    return Err(invalid("efr.chi_policy", format!("unknown policy '{other}'")))
                }
            },
            PolicyValue::Explicit(v) => {
                if !(*v > 0.0 && *v <= 1.0) {
                    return Err(invalid("efr.chi_policy", "explicit chi must lie in (0, 1]"));
                }
                ChiPolicy::Explicit(*v)
            }
        };
        if !(self.efr.re_max > 0.0) || !(self.efr.l_ref > 0.0) {
            return Err(invalid("efr.re_max", "reference Re and L must be positive"));
        }
        Ok(EfrConfig {
            mode,
            alpha,
            deconv_order: self.efr.n_deconv,
            chi,
            inherit_filter_bcs: true,
        })
    }

    pub fn coupling_config(&self) -> Result<CouplingConfig, ConfigError> {
        Ok(CouplingConfig {
            n_correctors: self.solver.n_correctors,
            n_non_orth_correctors: self.solver.n_non_orth_correctors,
            continuity_tol: self.solver.tol,
            lin_tol: self.solver.tol,
            lin_max_iters: self.solver.max_iters,
            scheme: self.scheme()?,
            simplec_relax: self.solver.simplec_relax,
            ..CouplingConfig::default()
        })
    }

    pub fn run_controls(&self) -> RunControls {
        RunControls {
            t_start: self.time.t_start,
            t_end: self.time.t_end,
            cfl_max: self.time.cfl_max,
            dt_max: self.time.dt_max,
            ..RunControls::default()
        }
    }

    /// Build the mesh this config describes.
    pub fn build_mesh(&self) -> Result<Mesh, ConfigError> {
        match self.mesh.kind {
            MeshKind::CylinderChannel => {
                let level = self.mesh.level.as_deref().unwrap_or("16k");
                let level = CylinderMeshLevel::parse(level)
                    .ok_or_else(|| invalid("mesh.level", "unknown level"))?;
                Ok(crate::bench::cylinder_mesh(level)?)
            }
            MeshKind::Rect => Ok(generate_rect(
                self.mesh.nx.unwrap(),
                self.mesh.ny.unwrap(),
                self.mesh.width.unwrap(),
                self.mesh.height.unwrap(),
            )?),
            MeshKind::Msh => {
                let path = self.mesh.path.as_ref().unwrap();
                let file = std::fs::File::open(path).map_err(|source| ConfigError::MeshFile {
                    path: path.display().to_string(),
                    source,
                })?;
                Mesh::load_msh(std::io::BufReader::new(file)).map_err(|source| {
                    ConfigError::MeshParse { path: path.display().to_string(), source }
                })
            }
        }
    }

    /// Effective velocity BC of a patch: explicit table entry or default
    /// (benchmark profile on the channel ends of a cylinder-channel mesh,
    /// no-slip otherwise).
    pub fn velocity_bc(&self, patch: &str) -> VelocityBc {
        if let Some(b) = self.boundaries.get(patch).and_then(|b| b.velocity.clone()) {
            return b;
        }
        if self.mesh.kind == MeshKind::CylinderChannel && (patch == "left" || patch == "right") {
            return VelocityBc::ChannelInlet;
        }
        VelocityBc::NoSlip
    }

    pub fn pressure_bc(&self, patch: &str) -> PressureBc {
        self.boundaries
            .get(patch)
            .and_then(|b| b.pressure.clone())
            .unwrap_or(PressureBc::ZeroGradient)
    }

    /// Check that every patch named in the boundary table exists.
    pub fn check_patches(&self, mesh: &Mesh) -> Result<(), ConfigError> {
        for name in self.boundaries.keys() {
            if mesh.patch(name).is_none() {
                return Err(invalid(
                    &format!("boundaries.{name}"),
                    "patch does not exist in the mesh",
                ));
            }
        }
        Ok(())
    }

    /// Initial velocity/pressure BC layout on a mesh (values at `t_start`).
    pub fn initial_fields(
        &self,
        mesh: &Mesh,
        channel_height: f64,
        t: f64,
    ) -> Result<(VectorField, ScalarField), ConfigError> {
        self.check_patches(mesh)?;
        let mut u = VectorField::uniform(mesh, Vec2::ZERO, BcKind::FixedValue, Vec2::ZERO);
        let mut p = ScalarField::zeros(mesh);
        for (ip, patch) in mesh.patches.iter().enumerate() {
            match self.velocity_bc(&patch.name) {
                VelocityBc::NoSlip => {
                    u.boundary[ip].kind = BcKind::FixedValue;
                    for v in u.boundary[ip].values.iter_mut() {
                        *v = Vec2::ZERO;
                    }
                }
                VelocityBc::ZeroGradient => {
                    u.boundary[ip].kind = BcKind::FixedGradient;
                    for v in u.boundary[ip].values.iter_mut() {
                        *v = Vec2::ZERO;
                    }
                }
                VelocityBc::Fixed(val) => {
                    u.boundary[ip].kind = BcKind::FixedValue;
                    for v in u.boundary[ip].values.iter_mut() {
                        *v = Vec2::new(val[0], val[1]);
                    }
                }
                VelocityBc::ChannelInlet => {
                    u.boundary[ip].kind = BcKind::FixedValue;
                    update_channel_inlet(mesh, ip, channel_height, self.time.t_end_period(), t, &mut u);
                }
            }
            match self.pressure_bc(&patch.name) {
                PressureBc::ZeroGradient => {
                    p.boundary[ip].kind = BcKind::FixedGradient;
                    for v in p.boundary[ip].values.iter_mut() {
                        *v = 0.0;
                    }
                }
                PressureBc::Fixed(val) => {
                    p.boundary[ip].kind = BcKind::FixedValue;
                    for v in p.boundary[ip].values.iter_mut() {
                        *v = val;
                    }
                }
            }
        }
        Ok((u, p))
    }

    /// Update the time-dependent velocity BC values to time `t`.
    pub fn update_bcs(
        &self,
        mesh: &Mesh,
        channel_height: f64,
        t: f64,
        u: &mut VectorField,
    ) {
        for (ip, patch) in mesh.patches.iter().enumerate() {
            if let VelocityBc::ChannelInlet = self.velocity_bc(&patch.name) {
                update_channel_inlet(mesh, ip, channel_height, self.time.t_end_period(), t, u);
            }
        }
    }
}

impl TimeSection {
    /// Period of the inlet ramp; the benchmark takes it equal to `t_end`.
    pub fn t_end_period(&self) -> f64 {
        self.t_end.max(1e-300)
    }
}

fn update_channel_inlet(
    mesh: &Mesh,
    ip: usize,
    height: f64,
    period: f64,
    t: f64,
    u: &mut VectorField,
) {
    let amp = 1.5 * 4.0 / (height * height);
    let s = (std::f64::consts::PI * t / period).sin();
    let patch = &mesh.patches[ip];
    for (k, face) in patch.faces().enumerate() {
        let y = mesh.face_centre[face].y.clamp(0.0, height);
        u.boundary[ip].values[k] = Vec2::new(amp * s * y * (height - y), 0.0);
    }
}
