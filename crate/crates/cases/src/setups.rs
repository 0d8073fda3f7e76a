//! Initial conditions, prescribed winds, exact solutions and refinement
//! indicators of the benchmark cases.

use std::f64::consts::PI;

use amrlab_core::dg::PrescribedWind;
use amrlab_core::euler::{PhysicalConstants, MOM_X, MOM_Y, N_EULER_VARS, RHO, THETA, TRACER};
use amrlab_core::sphere::{self, Vec3};

use crate::config::{CaseConfig, CaseId};

/// Peak of every cosine bell.
pub const H_MAX: f64 = 1.0;

/// `(h_max / 2)(1 + cos(π r / r_c))` inside the bell, zero outside.
pub fn cosine_bell(r: f64, rc: f64, h_max: f64) -> f64 {
    if r <= rc {
        0.5 * h_max * (1.0 + (PI * r / rc).cos())
    } else {
        0.0
    }
}

// ----- isentropic vortex -----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VortexParams {
    pub beta: f64,
    pub u_inf: [f64; 2],
    pub centre: [f64; 2],
    /// `[x0, x1, y0, y1]`, periodic.
    pub domain: [f64; 4],
    pub gamma: f64,
}

impl VortexParams {
    pub fn new(cfg: &CaseConfig) -> Self {
        Self {
            beta: 5.0,
            u_inf: [1.0, 1.0],
            centre: [0.0, 0.0],
            domain: cfg.domain,
            gamma: cfg.constants.gamma(),
        }
    }

    /// Periodic displacement from the vortex centre at time `t`.
    pub fn offset(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let mut d = [0.0; 2];
        for k in 0..2 {
            let len = self.domain[2 * k + 1] - self.domain[2 * k];
            let c = self.centre[k] + self.u_inf[k] * t;
            let raw = x[k] - c;
            d[k] = raw - len * (raw / len).round();
        }
        d
    }

    /// Temperature deficit `(γ−1)β²/(8γπ²)·exp(1−r²)`.
    pub fn temperature_deficit(&self, r2: f64) -> f64 {
        (self.gamma - 1.0) * self.beta * self.beta / (8.0 * self.gamma * PI * PI) * (1.0 - r2).exp()
    }
}

/// Exact state `(ρ, ρu, ρv, Θ, C)` of the translating vortex. Free stream
/// `ρ = p = T = θ = 1`; the flow is isentropic, so `θ ≡ 1` and `Θ = ρ`.
pub fn exact_isentropic_vortex(p: &VortexParams, x: Vec3, t: f64) -> Vec<f64> {
    let d = p.offset([x[0], x[1]], t);
    let r2 = d[0] * d[0] + d[1] * d[1];
    let temp = 1.0 - p.temperature_deficit(r2);
    let rho = temp.powf(1.0 / (p.gamma - 1.0));
    let swirl = p.beta / (2.0 * PI) * (0.5 * (1.0 - r2)).exp();
    let u = p.u_inf[0] - swirl * d[1];
    let v = p.u_inf[1] + swirl * d[0];
    let mut q = vec![0.0; N_EULER_VARS];
    q[RHO] = rho;
    q[MOM_X] = rho * u;
    q[MOM_Y] = rho * v;
    q[THETA] = rho;
    q[TRACER] = 0.0;
    q
}

// ----- swirling deformation flow ---------------------------------------------

/// `u = sin²(πx) sin(2πy) g(t)`, `v = −sin²(πy) sin(2πx) g(t)` with
/// `g(t) = cos(πt/T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwirlWind {
    pub period: f64,
}

impl PrescribedWind for SwirlWind {
    fn n_terms(&self) -> usize {
        1
    }

    fn coefficients(&self, t: f64, out: &mut [f64]) {
        out[0] = (PI * t / self.period).cos();
    }

    fn term(&self, _m: usize, x: Vec3) -> Vec3 {
        let (sx, sy) = ((PI * x[0]).sin(), (PI * x[1]).sin());
        [
            sx * sx * (2.0 * PI * x[1]).sin(),
            -sy * sy * (2.0 * PI * x[0]).sin(),
            0.0,
        ]
    }
}

pub const SWIRL_CENTRE: [f64; 2] = [0.25, 0.25];
pub const SWIRL_RADIUS: f64 = 0.25;

pub fn swirl_tracer(x: Vec3) -> f64 {
    let r = ((x[0] - SWIRL_CENTRE[0]).powi(2) + (x[1] - SWIRL_CENTRE[1]).powi(2)).sqrt();
    cosine_bell(r, SWIRL_RADIUS, H_MAX)
}

// ----- rising thermal bubble ---------------------------------------------------

pub const RRTB_THETA0: f64 = 300.0;
pub const RRTB_THETA_C: f64 = 0.5;
pub const RRTB_CENTRE: [f64; 2] = [500.0, 350.0];
pub const RRTB_RADIUS: f64 = 250.0;

pub fn rrtb_theta_perturbation(x: Vec3) -> f64 {
    let r = ((x[0] - RRTB_CENTRE[0]).powi(2) + (x[1] - RRTB_CENTRE[1]).powi(2)).sqrt();
    cosine_bell(r, RRTB_RADIUS, RRTB_THETA_C)
}

/// Bubble state at rest. The pressure keeps its hydrostatic value, and since
/// pressure depends on `Θ` alone, `Θ = Θ̄(z)` while `ρ = Θ̄ / (θ0 + θ′)`. The
/// tracer marks the bubble: `C = ρ θ′ / θ_c`.
pub fn rrtb_state(c: &PhysicalConstants, x: Vec3) -> Vec<f64> {
    let p = c.p0 * (1.0 - c.g * x[1] / (c.cp * RRTB_THETA0)).powf(c.cp / c.r_gas);
    let theta_rho = c.theta_rho_from_pressure(p);
    let dtheta = rrtb_theta_perturbation(x);
    let rho = theta_rho / (RRTB_THETA0 + dtheta);
    let mut q = vec![0.0; N_EULER_VARS];
    q[RHO] = rho;
    q[THETA] = theta_rho;
    q[TRACER] = rho * dtheta / RRTB_THETA_C;
    q
}

// ----- deformational flow on the sphere ---------------------------------------

const DAY: f64 = 86_400.0;

/// Reversing deformational wind with a solid-body zonal drift:
///
/// `u = A sin²(λ′) sin(2φ) g(t) + B cos φ`, `v = A sin(2λ′) cos φ g(t)`,
/// `λ′ = λ − 2πt/T`, `g = cos(πt/T)`, `A = 10 r/T`, `B = 2π r/T`.
///
/// Expanding `λ′` gives six fixed spatial terms with time-dependent
/// coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereWind {
    pub radius: f64,
    pub period: f64,
}

impl SphereWind {
    pub fn new(radius: f64) -> Self {
        Self {
            radius,
            period: 12.0 * DAY,
        }
    }

    /// Zonal and meridional components at `(λ, φ)`, straight from the
    /// closed form (used to check the term expansion).
    pub fn lon_lat_components(&self, lon: f64, lat: f64, t: f64) -> (f64, f64) {
        let a = 10.0 * self.radius / self.period;
        let b = 2.0 * PI * self.radius / self.period;
        let g = (PI * t / self.period).cos();
        let lp = lon - 2.0 * PI * t / self.period;
        let u = a * lp.sin().powi(2) * (2.0 * lat).sin() * g + b * lat.cos();
        let v = a * (2.0 * lp).sin() * lat.cos() * g;
        (u, v)
    }
}

impl PrescribedWind for SphereWind {
    fn n_terms(&self) -> usize {
        6
    }

    fn coefficients(&self, t: f64, out: &mut [f64]) {
        let a = 10.0 * self.radius / self.period;
        let b = 2.0 * PI * self.radius / self.period;
        let g = (PI * t / self.period).cos();
        let (s, c) = (4.0 * PI * t / self.period).sin_cos();
        out[0] = 0.5 * a * g;
        out[1] = -0.5 * a * g * c;
        out[2] = -0.5 * a * g * s;
        out[3] = b;
        out[4] = a * g * c;
        out[5] = -a * g * s;
    }

    fn term(&self, m: usize, x: Vec3) -> Vec3 {
        let (lon, lat) = sphere::lon_lat(x);
        let (east, north) = sphere::east_north(lon, lat);
        let (s2p, cp) = ((2.0 * lat).sin(), lat.cos());
        let (s2l, c2l) = (2.0 * lon).sin_cos();
        match m {
            0 => sphere::scale(east, s2p),
            1 => sphere::scale(east, s2p * c2l),
            2 => sphere::scale(east, s2p * s2l),
            3 => sphere::scale(east, cp),
            4 => sphere::scale(north, cp * s2l),
            5 => sphere::scale(north, cp * c2l),
            _ => [0.0; 3],
        }
    }
}

pub const SPHERE_BELLS: [(f64, f64); 2] = [(5.0 * PI / 6.0, 0.0), (7.0 * PI / 6.0, 0.0)];

/// Two cosine bells of radius `r/2`.
pub fn sphere_tracer(x: Vec3, radius: f64) -> f64 {
    let (lon, lat) = sphere::lon_lat(x);
    SPHERE_BELLS
        .iter()
        .map(|&(l0, p0)| {
            cosine_bell(
                sphere::geodesic_distance(lon, lat, l0, p0, radius),
                0.5 * radius,
                H_MAX,
            )
        })
        .sum()
}

// ----- dispatch ----------------------------------------------------------------

/// Initial state of `cfg.case` at a point.
pub fn initial_state(cfg: &CaseConfig, x: Vec3) -> Vec<f64> {
    match cfg.case {
        CaseId::Vortex => exact_isentropic_vortex(&VortexParams::new(cfg), x, 0.0),
        CaseId::Swirl => vec![swirl_tracer(x)],
        CaseId::Rrtb => rrtb_state(&cfg.constants, x),
        CaseId::SphereAdvect => vec![sphere_tracer(x, cfg.constants.r_earth)],
    }
}

/// Exact solution at time `t`, where one is known: always for the vortex,
/// and at whole periods for the reversing flows.
pub fn exact_solution(cfg: &CaseConfig, x: Vec3, t: f64) -> Option<Vec<f64>> {
    let period = match cfg.case {
        CaseId::Vortex => return Some(exact_isentropic_vortex(&VortexParams::new(cfg), x, t)),
        CaseId::Rrtb => return None,
        CaseId::Swirl => 5.0,
        CaseId::SphereAdvect => SphereWind::new(cfg.constants.r_earth).period,
    };
    let k = (t / period).round();
    ((t - k * period).abs() <= 1e-9 * period).then(|| initial_state(cfg, x))
}

pub fn indicator_names(case: CaseId) -> &'static [&'static str] {
    match case {
        CaseId::Vortex => &["density-deficit"],
        CaseId::Swirl | CaseId::SphereAdvect => &["tracer"],
        CaseId::Rrtb => &["theta-perturbation"],
    }
}

/// Pointwise refinement indicator.
pub fn point_indicator(case: CaseId, q: &[f64]) -> f64 {
    match case {
        CaseId::Vortex => 1.0 - q[RHO],
        CaseId::Swirl | CaseId::SphereAdvect => q[0],
        CaseId::Rrtb => q[THETA] / q[RHO] - RRTB_THETA0,
    }
}

/// Element indicator for the tree backend: the largest nodal value.
/// `field` is laid out `[v * nn + k]`.
pub fn element_indicator(case: CaseId, nv: usize, field: &[f64]) -> f64 {
    let nn = field.len() / nv;
    let mut q = vec![0.0; nv];
    let mut best = f64::NEG_INFINITY;
    for k in 0..nn {
        for v in 0..nv {
            q[v] = field[v * nn + k];
        }
        best = best.max(point_indicator(case, &q));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vortex_centre_and_far_field() {
        let cfg = CaseConfig::defaults(CaseId::Vortex);
        let p = VortexParams::new(&cfg);
        let q = exact_isentropic_vortex(&p, [0.0, 0.0, 0.0], 0.0);
        assert!((q[MOM_X] / q[RHO] - 1.0).abs() < 1e-15 && (q[MOM_Y] / q[RHO] - 1.0).abs() < 1e-15);
        let far = exact_isentropic_vortex(&p, [5.9, -5.9, 0.0], 0.0);
        assert!((far[RHO] - 1.0).abs() < 1e-12);
        // Translation with periodic wrap: after 12 s the vortex is back.
        let a = exact_isentropic_vortex(&p, [0.3, -0.2, 0.0], 0.0);
        let b = exact_isentropic_vortex(&p, [0.3, -0.2, 0.0], 12.0);
        for v in 0..5 {
            assert!((a[v] - b[v]).abs() < 1e-12);
        }
        // Isentropic: p = ρ^γ with p = ρT.
        let c = cfg.constants;
        let q = exact_isentropic_vortex(&p, [0.4, 0.1, 0.0], 0.0);
        let pr = c.pressure_unchecked(q[THETA]);
        assert!((pr - q[RHO].powf(c.gamma())).abs() < 1e-12);
    }

    #[test]
    fn swirl_wind_and_bell() {
        let w = SwirlWind { period: 5.0 };
        let mut g = [0.0];
        for (t, want) in [(0.0, 1.0), (2.5, 0.0), (5.0, -1.0)] {
            w.coefficients(t, &mut g);
            assert!((g[0] - want).abs() < 1e-15);
        }
        for s in [0.0, 0.3, 0.77, 1.0] {
            for x in [[0.0, s, 0.0], [1.0, s, 0.0], [s, 0.0, 0.0], [s, 1.0, 0.0]] {
                let u = w.velocity(x, 0.3);
                assert!(u[0].abs() < 1e-15 && u[1].abs() < 1e-15);
            }
        }
        assert_eq!(swirl_tracer([0.25, 0.25, 0.0]), H_MAX);
        assert!(swirl_tracer([0.5, 0.25, 0.0]).abs() < 1e-16);
    }

    #[test]
    fn sphere_wind_terms_match_closed_form_and_are_tangent() {
        let r = 6.371e6;
        let w = SphereWind::new(r);
        for &(lon, lat) in &[(0.3, 0.2), (2.0, -1.1), (4.5, 0.7), (5.9, -0.05)] {
            let x = sphere::from_lon_lat(lon, lat, r);
            for t in [0.0, 1.3e5, 0.5 * w.period, 0.9 * w.period] {
                let u = w.velocity(x, t);
                assert!(sphere::dot(u, x).abs() / r < 1e-12);
                let (ue, un) = w.lon_lat_components(lon, lat, t);
                let (east, north) = sphere::east_north(lon, lat);
                assert!((sphere::dot(u, east) - ue).abs() < 1e-9);
                assert!((sphere::dot(u, north) - un).abs() < 1e-9);
            }
        }
        // Half period: only solid-body rotation remains.
        let (u, v) = w.lon_lat_components(1.0, 0.4, 0.5 * w.period);
        assert!((u - 2.0 * PI * r / w.period * 0.4f64.cos()).abs() < 1e-9 && v.abs() < 1e-9);
    }

    #[test]
    fn rrtb_bubble_values() {
        let c = PhysicalConstants::default();
        let q = rrtb_state(&c, [500.0, 350.0, 0.0]);
        assert!((point_indicator(CaseId::Rrtb, &q) - 0.5).abs() < 1e-12);
        let q = rrtb_state(&c, [750.0, 350.0, 0.0]);
        assert!(point_indicator(CaseId::Rrtb, &q).abs() < 1e-12);
        assert_eq!(q[MOM_X], 0.0);
    }
}
