//! Dry-air closure for the compressible Euler equations in ρθ form.
//!
//! Prognostic vector `q = (ρ, Ux, Uy, Θ, C)` with `U = ρu` and `Θ = ρθ`.
//! Momentum fluxes and buoyancy are written relative to a hydrostatic
//! background `(ρ̄, P̄)` so that a balanced rest state has exactly zero
//! tendency.

use thiserror::Error;

pub const RHO: usize = 0;
pub const MOM_X: usize = 1;
pub const MOM_Y: usize = 2;
pub const THETA: usize = 3;
pub const TRACER: usize = 4;
pub const N_EULER_VARS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EulerError {
    #[error("non-positive density-weighted potential temperature {0}")]
    NonPositiveTheta(f64),
    #[error("height {z} m is above the zero-pressure level {z_top} m")]
    AboveModelTop { z: f64, z_top: f64 },
    #[error("invalid constants: {0}")]
    InvalidConstants(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Reference (sea-level) pressure, Pa.
    pub p0: f64,
    pub r_gas: f64,
    pub cp: f64,
    pub cv: f64,
    pub g: f64,
    /// Earth radius, m.
    pub r_earth: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            p0: 1.0e5,
            r_gas: 287.0,
            cp: 1004.5,
            cv: 717.5,
            g: 9.81,
            r_earth: 6.371e6,
        }
    }
}

impl PhysicalConstants {
    /// Nondimensional set with `p0 = R = 1` and `γ = 1.4`, no gravity.
    pub fn nondimensional() -> Self {
        Self {
            p0: 1.0,
            r_gas: 1.0,
            cp: 3.5,
            cv: 2.5,
            g: 0.0,
            r_earth: 6.371e6,
        }
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.cp / self.cv
    }

    pub fn validate(&self) -> Result<(), EulerError> {
        if (self.r_gas - (self.cp - self.cv)).abs() > 1e-9 * self.cp {
            return Err(EulerError::InvalidConstants(format!(
                "R = {} but cp - cv = {}",
                self.r_gas,
                self.cp - self.cv
            )));
        }
        if self.gamma() <= 1.0 || self.p0 <= 0.0 {
            return Err(EulerError::InvalidConstants(
                "need gamma > 1 and p0 > 0".into(),
            ));
        }
        Ok(())
    }

    /// `P = p0 (RΘ/p0)^γ` without the positivity check, for hot loops.
    #[inline]
    pub fn pressure_unchecked(&self, theta_rho: f64) -> f64 {
        self.p0 * (self.r_gas * theta_rho / self.p0).powf(self.gamma())
    }

    /// Inverse of the equation of state.
    #[inline]
    pub fn theta_rho_from_pressure(&self, p: f64) -> f64 {
        self.p0 / self.r_gas * (p / self.p0).powf(1.0 / self.gamma())
    }
}

pub fn equation_of_state(theta_rho: f64, c: &PhysicalConstants) -> Result<f64, EulerError> {
    if theta_rho <= 0.0 || !theta_rho.is_finite() {
        return Err(EulerError::NonPositiveTheta(theta_rho));
    }
    Ok(c.pressure_unchecked(theta_rho))
}

#[inline]
pub fn sound_speed(p: f64, rho: f64, c: &PhysicalConstants) -> f64 {
    (c.gamma() * p / rho).sqrt()
}

/// Hydrostatic reference profile for a neutrally stratified atmosphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundState {
    pub theta0: f64,
    pub constants: PhysicalConstants,
}

/// Background values at one height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundSample {
    pub z: f64,
    pub rho: f64,
    pub pressure: f64,
}

impl BackgroundState {
    pub fn model_top(&self) -> f64 {
        let c = &self.constants;
        if c.g == 0.0 {
            f64::INFINITY
        } else {
            c.cp * self.theta0 / c.g
        }
    }

    pub fn pressure(&self, z: f64) -> Result<f64, EulerError> {
        let c = &self.constants;
        let z_top = self.model_top();
        if z >= z_top {
            return Err(EulerError::AboveModelTop { z, z_top });
        }
        Ok(c.p0 * (1.0 - c.g * z / (c.cp * self.theta0)).powf(c.cp / c.r_gas))
    }

    pub fn density(&self, z: f64) -> Result<f64, EulerError> {
        let p = self.pressure(z)?;
        Ok(self.constants.theta_rho_from_pressure(p) / self.theta0)
    }

    pub fn sample(&self, z: f64) -> Result<BackgroundSample, EulerError> {
        Ok(BackgroundSample {
            z,
            rho: self.density(z)?,
            pressure: self.pressure(z)?,
        })
    }
}

pub fn hydrostatic_background(
    theta0: f64,
    constants: &PhysicalConstants,
    z: &[f64],
) -> Result<(BackgroundState, Vec<BackgroundSample>), EulerError> {
    if theta0 <= 0.0 {
        return Err(EulerError::NonPositiveTheta(theta0));
    }
    let bg = BackgroundState {
        theta0,
        constants: *constants,
    };
    let samples = z
        .iter()
        .map(|&zi| bg.sample(zi))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((bg, samples))
}

/// Which rows of the system evolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelMode {
    /// Full Euler system.
    Euler,
    /// Only the tracer row is active, driven by a prescribed wind.
    TracerAdvection,
}

/// Physical flux in the x and y directions for the Euler mode.
///
/// `p_pert` is `P(Θ) − P̄`. Returns `(F_x, F_y)`.
#[inline]
pub fn flux_tensor(
    q: &[f64; N_EULER_VARS],
    p_pert: f64,
) -> ([f64; N_EULER_VARS], [f64; N_EULER_VARS]) {
    let inv_rho = 1.0 / q[RHO];
    let u = q[MOM_X] * inv_rho;
    let v = q[MOM_Y] * inv_rho;
    (
        [
            q[MOM_X],
            q[MOM_X] * u + p_pert,
            q[MOM_Y] * u,
            q[THETA] * u,
            q[TRACER] * u,
        ],
        [
            q[MOM_Y],
            q[MOM_X] * v,
            q[MOM_Y] * v + p_pert,
            q[THETA] * v,
            q[TRACER] * v,
        ],
    )
}

/// Flux in direction `m` (not necessarily unit): `F_x m_x + F_y m_y`.
#[inline]
pub fn normal_flux(q: &[f64; N_EULER_VARS], p_pert: f64, m: [f64; 2]) -> [f64; N_EULER_VARS] {
    let inv_rho = 1.0 / q[RHO];
    let un = (q[MOM_X] * m[0] + q[MOM_Y] * m[1]) * inv_rho;
    [
        q[RHO] * un,
        q[MOM_X] * un + p_pert * m[0],
        q[MOM_Y] * un + p_pert * m[1],
        q[THETA] * un,
        q[TRACER] * un,
    ]
}

/// Buoyancy source `−(ρ − ρ̄) g ẑ` on the vertical momentum row.
#[inline]
pub fn source_terms(
    q: &[f64; N_EULER_VARS],
    rho_bar: f64,
    c: &PhysicalConstants,
) -> [f64; N_EULER_VARS] {
    [0.0, 0.0, -(q[RHO] - rho_bar) * c.g, 0.0, 0.0]
}

/// Integrated diagnostics of a state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Integrals {
    pub mass: f64,
    pub energy: f64,
    pub tracer: f64,
}

/// Energy density `|U|²/(2ρ) + ρ c_v T + ρ g z` with `T = P/(ρR)`.
#[inline]
pub fn energy_density(q: &[f64; N_EULER_VARS], z: f64, c: &PhysicalConstants) -> f64 {
    let p = c.pressure_unchecked(q[THETA]);
    let kinetic = 0.5 * (q[MOM_X] * q[MOM_X] + q[MOM_Y] * q[MOM_Y]) / q[RHO];
    kinetic + c.cv * p / c.r_gas + q[RHO] * c.g * z
}

#[inline]
pub fn relative_loss(now: f64, initial: f64) -> f64 {
    if initial == 0.0 {
        (now - initial).abs()
    } else {
        (now - initial).abs() / initial.abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eos_fixed_point_and_scaling() {
        let c = PhysicalConstants::default();
        let th = c.p0 / c.r_gas;
        assert!((equation_of_state(th, &c).unwrap() - c.p0).abs() < 1e-9);
        let p2 = equation_of_state(2.0 * th, &c).unwrap();
        assert!((p2 / c.p0 - 2f64.powf(c.gamma())).abs() < 1e-12);
        assert!(equation_of_state(0.0, &c).is_err());
        assert!(equation_of_state(-1.0, &c).is_err());
        let nd = PhysicalConstants::nondimensional();
        nd.validate().unwrap();
        assert!((nd.gamma() - 1.4).abs() < 1e-15);
        assert_eq!(equation_of_state(1.0, &nd).unwrap(), 1.0);
    }

    #[test]
    fn sound_speed_relations() {
        let c = PhysicalConstants::default();
        assert!((sound_speed(1.0 / c.gamma(), 1.0, &c) - 1.0).abs() < 1e-15);
        let a = sound_speed(2.0e5, 1.2, &c);
        assert!((sound_speed(8.0e5, 4.8, &c) - a).abs() < 1e-12);
        let (_, s) = hydrostatic_background(300.0, &c, &[0.0]).unwrap();
        let a0 = sound_speed(s[0].pressure, s[0].rho, &c);
        assert!((a0 - 347.3).abs() < 0.5, "a = {a0}");
    }

    #[test]
    fn background_profile() {
        let c = PhysicalConstants::default();
        let (bg, s) = hydrostatic_background(300.0, &c, &[0.0, 1000.0]).unwrap();
        assert_eq!(s[0].pressure, c.p0);
        let expected = (1.0 - c.g * 1000.0 / (c.cp * 300.0)).powf(c.cp / c.r_gas);
        assert!((s[1].pressure / c.p0 - expected).abs() < 1e-14);
        // Centered finite-difference balance check at mid-height.
        let z = 500.0;
        let h = 1e-2;
        let dp = (bg.pressure(z + h).unwrap() - bg.pressure(z - h).unwrap()) / (2.0 * h);
        let rho_g = bg.density(z).unwrap() * c.g;
        assert!((dp + rho_g).abs() / rho_g < 1e-8);
        assert!(bg.pressure(bg.model_top() + 1.0).is_err());
        assert!(hydrostatic_background(-1.0, &c, &[0.0]).is_err());
    }

    #[test]
    fn flux_at_rest_and_unit_velocity() {
        let q = [1.0, 0.0, 0.0, 300.0, 0.0];
        let (fx, fy) = flux_tensor(&q, 0.0);
        assert!(fx.iter().chain(fy.iter()).all(|v| *v == 0.0));
        let c = PhysicalConstants::default();
        assert!(source_terms(&q, 1.0, &c).iter().all(|v| *v == 0.0));
        let q = [1.0, 1.0, 1.0, 1.0, 0.5];
        let (fx, fy) = flux_tensor(&q, 0.25);
        assert_eq!((fx[0], fy[0]), (1.0, 1.0));
        assert_eq!((fx[1], fy[2]), (1.25, 1.25));
        assert_eq!(fx[4], 0.5);
        let fnm = normal_flux(&q, 0.25, [0.3, -0.7]);
        for v in 0..N_EULER_VARS {
            assert!((fnm[v] - (0.3 * fx[v] - 0.7 * fy[v])).abs() < 1e-15);
        }
    }

    #[test]
    fn energy_density_components() {
        let c = PhysicalConstants::default();
        let q = [1.0, 2.0, 0.0, 300.0, 0.0];
        let e = energy_density(&q, 10.0, &c);
        let p = c.pressure_unchecked(300.0);
        assert!((e - (2.0 + c.cv * p / c.r_gas + c.g * 10.0)).abs() < 1e-9);
        assert_eq!(relative_loss(2.0, 2.0), 0.0);
        assert!((relative_loss(1.5, 2.0) - 0.25).abs() < 1e-15);
    }
}
