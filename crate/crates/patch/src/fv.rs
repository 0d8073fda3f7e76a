//! Cell-centred finite-volume models for the patch hierarchy.
//!
//! A model turns each cell's conserved state into a short vector of
//! reconstruction variables once per stage; face fluxes then see the four
//! cells `m−2..m+1` around face `m−1/2`.

use std::sync::Arc;

use amrlab_core::dg::{Background, PrescribedWind};
use amrlab_core::euler::{self, PhysicalConstants, MOM_X, MOM_Y, N_EULER_VARS, RHO, THETA, TRACER};

use crate::stencil::{face_interp, StencilOrder};

pub trait FvModel: Send + Sync + std::fmt::Debug {
    /// Conserved variables per cell.
    fn n_vars(&self) -> usize;
    /// Reconstruction variables per cell.
    fn n_prim(&self) -> usize;
    /// Variable whose sign flips when mirrored across a wall normal to `dir`.
    fn normal_momentum(&self, dir: usize) -> Option<usize>;
    fn primitives(&self, q: &[f64], x: [f64; 2], out: &mut [f64]);
    /// Flux in the `+dir` direction through the face at `x` from the
    /// reconstruction variables of the four cells around it.
    fn face_flux(
        &self,
        dir: usize,
        p: [&[f64]; 4],
        x: [f64; 2],
        t: f64,
        order: StencilOrder,
        out: &mut [f64],
    );
    fn source(&self, _q: &[f64], _x: [f64; 2], _out: &mut [f64]) {}
    fn has_source(&self) -> bool {
        false
    }
    /// Largest signal speed along `dir` in a cell.
    fn max_speed(&self, q: &[f64], x: [f64; 2], t: f64, dir: usize) -> f64;
}

/// Passive tracer in a prescribed wind.
#[derive(Debug, Clone)]
pub struct TracerAdvection {
    pub wind: Arc<dyn PrescribedWind>,
}

impl FvModel for TracerAdvection {
    fn n_vars(&self) -> usize {
        1
    }
    fn n_prim(&self) -> usize {
        1
    }
    fn normal_momentum(&self, _dir: usize) -> Option<usize> {
        None
    }
    fn primitives(&self, q: &[f64], _x: [f64; 2], out: &mut [f64]) {
        out[0] = q[0];
    }
    fn face_flux(
        &self,
        dir: usize,
        p: [&[f64]; 4],
        x: [f64; 2],
        t: f64,
        order: StencilOrder,
        out: &mut [f64],
    ) {
        let u = self.wind.velocity([x[0], x[1], 0.0], t)[dir];
        out[0] = u * face_interp([p[0][0], p[1][0], p[2][0], p[3][0]], order, u);
    }
    fn max_speed(&self, _q: &[f64], x: [f64; 2], t: f64, dir: usize) -> f64 {
        self.wind.velocity([x[0], x[1], 0.0], t)[dir].abs()
    }
}

/// Compressible Euler in `(ρ, ρu, ρv, ρθ, ρc)` with a background state.
///
/// Face mass flux is the interpolated normal momentum; velocity, θ and c
/// are interpolated upwind of it and multiplied by the mass flux. The
/// pressure perturbation `P(Θ) − P̄` is interpolated with the centred stencil
/// so that a resting background is balanced exactly.
#[derive(Debug, Clone, Copy)]
pub struct CompressibleEuler {
    pub constants: PhysicalConstants,
    pub background: Background,
}

const P_RHO: usize = 0;
const P_MX: usize = 1;
const P_MY: usize = 2;
const P_U: usize = 3;
const P_V: usize = 4;
const P_TH: usize = 5;
const P_C: usize = 6;
const P_PP: usize = 7;

impl CompressibleEuler {
    fn background_at(&self, y: f64) -> (f64, f64) {
        let (rho, th) = self.background.at(y);
        (rho, self.constants.pressure_unchecked(th))
    }
}

impl FvModel for CompressibleEuler {
    fn n_vars(&self) -> usize {
        N_EULER_VARS
    }
    fn n_prim(&self) -> usize {
        8
    }
    fn normal_momentum(&self, dir: usize) -> Option<usize> {
        Some(if dir == 0 { MOM_X } else { MOM_Y })
    }
    fn primitives(&self, q: &[f64], x: [f64; 2], out: &mut [f64]) {
        let inv = 1.0 / q[RHO];
        let (_, p_bar) = self.background_at(x[1]);
        out[P_RHO] = q[RHO];
        out[P_MX] = q[MOM_X];
        out[P_MY] = q[MOM_Y];
        out[P_U] = q[MOM_X] * inv;
        out[P_V] = q[MOM_Y] * inv;
        out[P_TH] = q[THETA] * inv;
        out[P_C] = q[TRACER] * inv;
        out[P_PP] = self.constants.pressure_unchecked(q[THETA]) - p_bar;
    }
    fn face_flux(
        &self,
        dir: usize,
        p: [&[f64]; 4],
        _x: [f64; 2],
        _t: f64,
        order: StencilOrder,
        out: &mut [f64],
    ) {
        let line = |k: usize| [p[0][k], p[1][k], p[2][k], p[3][k]];
        let mk = if dir == 0 { P_MX } else { P_MY };
        let guess = face_interp(line(mk), StencilOrder::Fourth, 0.0);
        let m = face_interp(line(mk), order, guess);
        let centred = if order == StencilOrder::Second {
            StencilOrder::Second
        } else {
            StencilOrder::Fourth
        };
        let pp = face_interp(line(P_PP), centred, 0.0);
        out[RHO] = m;
        out[MOM_X] = m * face_interp(line(P_U), order, m);
        out[MOM_Y] = m * face_interp(line(P_V), order, m);
        out[THETA] = m * face_interp(line(P_TH), order, m);
        out[TRACER] = m * face_interp(line(P_C), order, m);
        out[if dir == 0 { MOM_X } else { MOM_Y }] += pp;
    }
    fn source(&self, q: &[f64], x: [f64; 2], out: &mut [f64]) {
        let (rho_bar, _) = self.background_at(x[1]);
        out[MOM_Y] -= self.constants.g * (q[RHO] - rho_bar);
    }
    fn has_source(&self) -> bool {
        self.constants.g != 0.0
    }
    fn max_speed(&self, q: &[f64], _x: [f64; 2], _t: f64, dir: usize) -> f64 {
        let p = self.constants.pressure_unchecked(q[THETA]);
        let u = q[if dir == 0 { MOM_X } else { MOM_Y }] / q[RHO];
        u.abs() + euler::sound_speed(p, q[RHO], &self.constants)
    }
}
