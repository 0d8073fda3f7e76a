//! Run configuration: per-case defaults overridden by a `key = value` file.

use std::fmt;
use std::str::FromStr;

use amrlab_core::dg::FluxMode;
use amrlab_core::euler::PhysicalConstants;
use amrlab_core::mortar::RescaleMode;
use amrlab_core::tree::RegridPolicy;
use amrlab_patch::{Coupling, StencilOrder};

use crate::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseId {
    Vortex,
    Swirl,
    Rrtb,
    SphereAdvect,
}

impl CaseId {
    pub const ALL: [CaseId; 4] = [
        CaseId::Vortex,
        CaseId::Swirl,
        CaseId::Rrtb,
        CaseId::SphereAdvect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CaseId::Vortex => "vortex",
            CaseId::Swirl => "swirl",
            CaseId::Rrtb => "rrtb",
            CaseId::SphereAdvect => "sphere-advect",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            CaseId::Vortex => "isentropic vortex translating diagonally on a periodic square",
            CaseId::Swirl => "cosine-bell tracer in a reversing swirling deformation flow",
            CaseId::Rrtb => "rising thermal bubble in a neutrally stratified atmosphere",
            CaseId::SphereAdvect => {
                "two cosine bells in a reversing deformational wind on the cubed sphere"
            }
        }
    }

    /// True for cases whose state is a single passive tracer.
    pub fn is_advection(self) -> bool {
        matches!(self, CaseId::Swirl | CaseId::SphereAdvect)
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CaseId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        CaseId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                format!("unknown case '{s}' (expected vortex, swirl, rrtb or sphere-advect)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Tree,
    Patch,
}

impl FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tree" => Ok(Backend::Tree),
            "patch" => Ok(Backend::Patch),
            _ => Err(format!("unknown backend '{s}' (expected tree or patch)")),
        }
    }
}

pub fn parse_flux(s: &str) -> Result<FluxMode, String> {
    match s {
        "mortar" => Ok(FluxMode::Mortar),
        "pointwise" => Ok(FluxMode::Pointwise),
        "linearized" => Ok(FluxMode::Linearized),
        _ => Err(format!(
            "unknown flux mode '{s}' (expected mortar, pointwise or linearized)"
        )),
    }
}

pub fn flux_name(m: FluxMode) -> &'static str {
    match m {
        FluxMode::Mortar => "mortar",
        FluxMode::Pointwise => "pointwise",
        FluxMode::Linearized => "linearized",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Ssprk3,
    ForwardEuler,
}

#[derive(Debug, Clone)]
pub struct CaseConfig {
    pub case: CaseId,
    pub backend: Backend,
    pub flux: FluxMode,
    /// `[x0, x1, y0, y1]`; unused on the sphere.
    pub domain: [f64; 4],
    pub periodic: [bool; 2],
    /// Root elements (tree) or level-0 cells (patch) per direction; on the
    /// sphere `root[0]` is the per-tile resolution.
    pub root: [u32; 2],
    /// Polynomial order N (tree backend).
    pub order: usize,
    /// Face interpolation order 2, 3 or 4 (patch backend).
    pub stencil: StencilOrder,
    /// Fixed step; when absent the step is `cfl` times the stable estimate
    /// on the initial mesh, shortened to divide the end time evenly.
    pub dt: Option<f64>,
    pub cfl: f64,
    /// Time integrator of the tree backend.
    pub integrator: Integrator,
    pub end_time: f64,
    pub regrid: RegridPolicy,
    /// Number of regrids over the run, used when `regrid.interval_steps` is 0.
    pub regrid_count: usize,
    /// Patch clustering efficiency and blocking factor.
    pub efficiency: f64,
    pub blocking: i64,
    pub max_box: i64,
    pub coupling: Coupling,
    pub rescale: RescaleMode,
    pub constants: PhysicalConstants,
    /// Artificial viscosity μ (Euler cases).
    pub viscosity: f64,
    /// Steps between diagnostics rows and between snapshots (0 = first and
    /// last only).
    pub diag_every: usize,
    pub snapshot_every: usize,
}

const DAY: f64 = 86_400.0;

impl CaseConfig {
    /// Published setup of each case.
    pub fn defaults(case: CaseId) -> Self {
        let policy = |field: &str, max_level: u32, buffer: usize, thr: f64| RegridPolicy {
            interval_steps: 0,
            buffer_cells: buffer,
            max_level,
            field: field.into(),
            refine_above: thr,
            coarsen_below: thr,
        };
        let base = CaseConfig {
            case,
            backend: Backend::Tree,
            flux: FluxMode::Mortar,
            domain: [0.0, 1.0, 0.0, 1.0],
            periodic: [true, true],
            root: [16, 16],
            order: 4,
            stencil: StencilOrder::Third,
            dt: None,
            cfl: 1.0,
            integrator: Integrator::Ssprk3,
            end_time: 1.0,
            regrid: policy("tracer", 1, 2, 0.05),
            regrid_count: 0,
            efficiency: 0.7,
            blocking: 4,
            max_box: 32,
            coupling: Coupling::TWO_WAY,
            rescale: RescaleMode::PerField,
            constants: PhysicalConstants::default(),
            viscosity: 0.0,
            diag_every: 10,
            snapshot_every: 0,
        };
        match case {
            CaseId::Vortex => CaseConfig {
                domain: [-6.0, 6.0, -6.0, 6.0],
                root: [32, 32],
                order: 3,
                dt: Some(2.5e-4),
                integrator: Integrator::ForwardEuler,
                end_time: 3.0,
                regrid: policy("density-deficit", 1, 2, 0.01),
                regrid_count: 30,
                constants: PhysicalConstants::nondimensional(),
                diag_every: 100,
                ..base
            },
            CaseId::Swirl => CaseConfig {
                end_time: 5.0,
                regrid_count: 80,
                ..base
            },
            CaseId::Rrtb => CaseConfig {
                domain: [0.0, 1000.0, 0.0, 1000.0],
                periodic: [false, false],
                root: [10, 10],
                end_time: 600.0,
                regrid: policy("theta-perturbation", 2, 2, 0.05),
                regrid_count: 24,
                viscosity: 1.5,
                cfl: 1.0,
                diag_every: 500,
                ..base
            },
            CaseId::SphereAdvect => CaseConfig {
                root: [30, 30],
                end_time: 12.0 * DAY,
                regrid: policy("tracer", 1, 4, 0.05),
                regrid_count: 96,
                diag_every: 50,
                ..base
            },
        }
    }

    /// Defaults of `case` on `backend`. The patch backend uses the cell
    /// counts and clustering settings of the level-based runs and has no
    /// artificial viscosity.
    pub fn for_backend(case: CaseId, backend: Backend) -> Self {
        let mut c = Self::defaults(case);
        c.backend = backend;
        if backend == Backend::Patch {
            c.dt = None;
            c.cfl = 0.8;
            c.viscosity = 0.0;
            c.max_box = 128;
            c.integrator = Integrator::Ssprk3;
            match case {
                CaseId::Vortex => c.root = [96, 96],
                CaseId::Swirl => {
                    c.root = [64, 64];
                    c.efficiency = 0.95;
                    c.regrid.max_level = 3;
                }
                CaseId::Rrtb => c.root = [32, 32],
                CaseId::SphereAdvect => {}
            }
        }
        c
    }

    /// Apply `key = value` lines; `#` starts a comment. Unknown keys and
    /// malformed values are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: n + 1,
                    text: raw.to_string(),
                });
            };
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                ConfigError::Invalid { key, value, reason } => ConfigError::Invalid {
                    key: format!("{key} (line {})", n + 1),
                    value,
                    reason,
                },
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { key, line: n + 1 },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Set one field by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: String| ConfigError::Invalid {
            key: key.to_string(),
            value: value.to_string(),
            reason,
        };
        fn num<T: FromStr>(v: &str) -> Result<T, String> {
            v.parse::<T>()
                .map_err(|_| format!("cannot parse '{v}' as a number"))
        }
        fn pair<T: FromStr + Copy>(v: &str) -> Result<[T; 2], String> {
            let parts: Vec<&str> = v.split([',', ' ', 'x']).filter(|s| !s.is_empty()).collect();
            match parts.as_slice() {
                [a] => {
                    let a = num(a)?;
                    Ok([a, a])
                }
                [a, b] => Ok([num(a)?, num(b)?]),
                _ => Err(format!("expected one or two values, got '{v}'")),
            }
        }
        fn boolean(v: &str) -> Result<bool, String> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(format!("expected true or false, got '{v}'")),
            }
        }
        match key {
            "case" => self.case = value.parse().map_err(bad)?,
            "backend" => self.backend = value.parse().map_err(bad)?,
            "flux" => self.flux = parse_flux(value).map_err(bad)?,
            "domain" => {
                let v: Vec<f64> = value
                    .split([',', ' '])
                    .filter(|s| !s.is_empty())
                    .map(num)
                    .collect::<Result<_, _>>()
                    .map_err(bad)?;
                if v.len() != 4 {
                    return Err(bad("expected x0, x1, y0, y1".into()));
                }
                self.domain = [v[0], v[1], v[2], v[3]];
            }
            "periodic" => {
                let parts: Vec<&str> = value.split([',', ' ']).filter(|s| !s.is_empty()).collect();
                self.periodic = match parts.as_slice() {
                    [a] => [boolean(a).map_err(bad)?; 2],
                    [a, b] => [boolean(a).map_err(bad)?, boolean(b).map_err(bad)?],
                    _ => return Err(bad("expected one or two booleans".into())),
                };
            }
            "root" => self.root = pair(value).map_err(bad)?,
            "order" => self.order = num(value).map_err(bad)?,
            "stencil" => {
                let k: u32 = num(value).map_err(bad)?;
                self.stencil =
                    StencilOrder::from_int(k).ok_or_else(|| bad("expected 2, 3 or 4".into()))?;
            }
            "dt" => {
                self.dt = match value {
                    "auto" => None,
                    v => Some(num(v).map_err(bad)?),
                }
            }
            "cfl" => self.cfl = num(value).map_err(bad)?,
            "integrator" => {
                self.integrator = match value {
                    "ssprk3" => Integrator::Ssprk3,
                    "forward-euler" => Integrator::ForwardEuler,
                    _ => return Err(bad("expected ssprk3 or forward-euler".into())),
                }
            }
            "end_time" => self.end_time = num(value).map_err(bad)?,
            "regrid_interval" => self.regrid.interval_steps = num(value).map_err(bad)?,
            "regrid_count" => self.regrid_count = num(value).map_err(bad)?,
            "buffer" => self.regrid.buffer_cells = num(value).map_err(bad)?,
            "max_level" => self.regrid.max_level = num(value).map_err(bad)?,
            "refine_above" => self.regrid.refine_above = num(value).map_err(bad)?,
            "coarsen_below" => self.regrid.coarsen_below = num(value).map_err(bad)?,
            "indicator" => self.regrid.field = value.to_string(),
            "efficiency" => self.efficiency = num(value).map_err(bad)?,
            "blocking" => self.blocking = num(value).map_err(bad)?,
            "max_box" => self.max_box = num(value).map_err(bad)?,
            "reflux" => self.coupling.reflux = boolean(value).map_err(bad)?,
            "average_down" => self.coupling.average_down = boolean(value).map_err(bad)?,
            "rescale" => {
                self.rescale = match value {
                    "per-field" => RescaleMode::PerField,
                    "single-area" => RescaleMode::SingleAreaFactor,
                    _ => return Err(bad("expected per-field or single-area".into())),
                }
            }
            "p0" => self.constants.p0 = num(value).map_err(bad)?,
            "r_gas" => self.constants.r_gas = num(value).map_err(bad)?,
            "cp" => self.constants.cp = num(value).map_err(bad)?,
            "cv" => self.constants.cv = num(value).map_err(bad)?,
            "g" => self.constants.g = num(value).map_err(bad)?,
            "r_earth" => self.constants.r_earth = num(value).map_err(bad)?,
            "viscosity" => self.viscosity = num(value).map_err(bad)?,
            "diag_every" => self.diag_every = num(value).map_err(bad)?,
            "snapshot_every" => self.snapshot_every = num(value).map_err(bad)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    line: 0,
                })
            }
        }
        Ok(())
    }

    /// Cross-field consistency.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Inconsistent(msg));
        if self.case == CaseId::SphereAdvect && self.backend == Backend::Patch {
            return fail("sphere-advect runs on the tree backend only".into());
        }
        if self.flux != FluxMode::Mortar && self.backend == Backend::Patch {
            return fail("flux modes other than mortar apply to the tree backend only".into());
        }
        if self.flux == FluxMode::Linearized && !self.case.is_advection() {
            return fail("the linearized flux is defined for tracer advection only".into());
        }
        if self.root[0] == 0 || self.root[1] == 0 {
            return fail("root must be at least 1 in each direction".into());
        }
        if self.case == CaseId::SphereAdvect && self.root[0] != self.root[1] {
            return fail("the cubed sphere needs a square root mesh per tile".into());
        }
        if self.backend == Backend::Tree && !(1..=12).contains(&self.order) {
            return fail(format!(
                "order must be between 1 and 12, got {}",
                self.order
            ));
        }
        if self.backend == Backend::Patch && (self.blocking < 1 || self.max_box < self.blocking) {
            return fail("blocking must be at least 1 and at most max_box".into());
        }
        if self.backend == Backend::Patch && !(0.0..=1.0).contains(&self.efficiency) {
            return fail("efficiency must lie in [0, 1]".into());
        }
        if !(self.end_time >= 0.0) || !self.end_time.is_finite() {
            return fail("end_time must be a non-negative number".into());
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return fail("dt must be positive".into());
            }
        }
        if !(self.cfl > 0.0) {
            return fail("cfl must be positive".into());
        }
        if self.domain[1] <= self.domain[0] || self.domain[3] <= self.domain[2] {
            return fail("domain must have x1 > x0 and y1 > y0".into());
        }
        if self.regrid.max_level > 0 && self.regrid.interval_steps == 0 && self.regrid_count == 0 {
            return fail("adaptive runs need regrid_interval or regrid_count".into());
        }
        if self.regrid.coarsen_below > self.regrid.refine_above {
            return fail("coarsen_below must not exceed refine_above".into());
        }
        if !crate::setups::indicator_names(self.case).contains(&self.regrid.field.as_str()) {
            return fail(format!(
                "indicator '{}' is not defined for {} (choose from {:?})",
                self.regrid.field,
                self.case,
                crate::setups::indicator_names(self.case)
            ));
        }
        if self.backend == Backend::Patch && self.integrator != Integrator::Ssprk3 {
            return fail("the patch backend always uses subcycled SSP-RK3".into());
        }
        if self.backend == Backend::Patch && self.viscosity != 0.0 {
            return fail("the patch backend has no artificial viscosity; set viscosity = 0".into());
        }
        if self.viscosity < 0.0 {
            return fail("viscosity must be non-negative".into());
        }
        self.constants
            .validate()
            .map_err(|e| ConfigError::Inconsistent(e.to_string()))?;
        Ok(())
    }
}
