//! Coupling across 2:1 faces and solution transfer between parents and
//! children.
//!
//! Traces are stored variable-major: `trace[v * n + k]` for variable `v` at
//! face node `k`, `n = N + 1`. Element fields use `field[v * n² + i + n * j]`.
//! Normals handed to the face routines point out of the coarse element and
//! carry the surface Jacobian of the fine side (their length is the fine
//! face's arc length per unit of the fine face parameter).
//!
//! Mortar outputs for both halves are packed into one slice: half `i` at
//! offset `i * nv * n`.

use crate::basis::{apply_tensor, Half, NodalBasis, ProjectionSet};
use crate::sphere::Vec3;

/// Coarse trace restricted to one mortar: `out = P_i · coarse`, per variable.
pub fn project_to_mortar(
    proj: &ProjectionSet,
    half: Half,
    nv: usize,
    coarse: &[f64],
    out: &mut [f64],
) {
    let n = proj.order + 1;
    let p = proj.parent_to_child(half);
    for v in 0..nv {
        p.apply(&coarse[v * n..(v + 1) * n], &mut out[v * n..(v + 1) * n]);
    }
}

/// Per-coarse-parameter density from per-mortar-parameter mortar data:
/// `out = Σ_i s_i M⁻¹ S_iᵀ (2 f_i)`. Preserves `∫ f` exactly.
pub fn project_flux_back(proj: &ProjectionSet, nv: usize, mortar_flux: &[f64], out: &mut [f64]) {
    let n = proj.order + 1;
    let mut scaled = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    out[..nv * n].iter_mut().for_each(|x| *x = 0.0);
    for half in Half::BOTH {
        let c = proj.child_to_parent(half);
        let f = &mortar_flux[half.index() * nv * n..];
        for v in 0..nv {
            for k in 0..n {
                scaled[k] = 2.0 * f[v * n + k];
            }
            c.apply(&scaled, &mut tmp);
            for k in 0..n {
                out[v * n + k] += tmp[k];
            }
        }
    }
}

/// Nodal average back onto the coarse face (no factor 2): the L² projection
/// of a piecewise field given on the two mortars.
pub fn project_state_back(proj: &ProjectionSet, nv: usize, mortar_state: &[f64], out: &mut [f64]) {
    let n = proj.order + 1;
    let mut tmp = vec![0.0; n];
    out[..nv * n].iter_mut().for_each(|x| *x = 0.0);
    for half in Half::BOTH {
        let c = proj.child_to_parent(half);
        let f = &mortar_state[half.index() * nv * n..];
        for v in 0..nv {
            c.apply(&f[v * n..(v + 1) * n], &mut tmp);
            for k in 0..n {
                out[v * n + k] += tmp[k];
            }
        }
    }
}

/// Numerical flux callback: `(q_inside, q_outside, m, node, out)` writes the
/// flux leaving the inside state through a face with scaled normal `m`.
/// `node` is the mortar node index `half * n + k` (or the face node index).
pub trait FaceFlux {
    fn flux(&mut self, q_in: &[f64], q_out: &[f64], m: Vec3, node: usize, out: &mut [f64]);
}

impl<F: FnMut(&[f64], &[f64], Vec3, usize, &mut [f64])> FaceFlux for F {
    fn flux(&mut self, q_in: &[f64], q_out: &[f64], m: Vec3, node: usize, out: &mut [f64]) {
        self(q_in, q_out, m, node, out)
    }
}

#[inline]
fn gather(trace: &[f64], nv: usize, n: usize, k: usize, out: &mut [f64]) {
    for v in 0..nv {
        out[v] = trace[v * n + k];
    }
}

/// Mortar method on one 2:1 face.
///
/// The coarse trace is projected onto both mortars while the fine traces
/// are used as they are; the numerical flux is evaluated at each mortar node
/// with the fine-side normal; fine sides take the mortar flux directly and
/// the coarse side takes its L² projection.
///
/// `fine` (packed halves) and `normals` (`2n` entries) are in mortar
/// parameter order. Traces carry `nv` values per node and the flux `nv_out`.
/// Outputs are fluxes out of the coarse element: `coarse_out` per coarse face
/// parameter, `fine_out` per mortar parameter.
#[allow(clippy::too_many_arguments)]
pub fn mortar_face_flux(
    proj: &ProjectionSet,
    nv: usize,
    nv_out: usize,
    coarse: &[f64],
    fine: &[f64],
    normals: &[Vec3],
    flux: &mut impl FaceFlux,
    coarse_out: &mut [f64],
    fine_out: &mut [f64],
) {
    let n = proj.order + 1;
    let mut projected = vec![0.0; nv * n];
    let mut ql = vec![0.0; nv];
    let mut qr = vec![0.0; nv];
    let mut f = vec![0.0; nv_out];
    for half in Half::BOTH {
        let i = half.index();
        project_to_mortar(proj, half, nv, coarse, &mut projected);
        let fine_i = &fine[i * nv * n..(i + 1) * nv * n];
        for k in 0..n {
            gather(&projected, nv, n, k, &mut ql);
            gather(fine_i, nv, n, k, &mut qr);
            flux.flux(&ql, &qr, normals[i * n + k], i * n + k, &mut f);
            for v in 0..nv_out {
                fine_out[i * nv_out * n + v * n + k] = f[v];
            }
        }
    }
    project_flux_back(proj, nv_out, fine_out, coarse_out);
}

/// Point-to-point interpolation baseline on one 2:1 face.
///
/// Each side evaluates the numerical flux at its own nodes, with the other
/// side's trace interpolated there. No projection, so the two sides'
/// integrated fluxes generally disagree. Coarse node `k` is reported to the
/// flux callback as node `2n + k`.
#[allow(clippy::too_many_arguments)]
pub fn pointwise_face_flux(
    basis: &NodalBasis,
    nv: usize,
    nv_out: usize,
    coarse: &[f64],
    fine: &[f64],
    coarse_normals: &[Vec3],
    fine_normals: &[Vec3],
    flux: &mut impl FaceFlux,
    coarse_out: &mut [f64],
    fine_out: &mut [f64],
) {
    let n = basis.n_nodes();
    let mut ql = vec![0.0; nv];
    let mut qr = vec![0.0; nv];
    let mut f = vec![0.0; nv_out];
    // Fine nodes: coarse trace interpolated at the fine node locations.
    for half in Half::BOTH {
        let i = half.index();
        let fine_i = &fine[i * nv * n..(i + 1) * nv * n];
        for k in 0..n {
            let l = basis.lagrange_at(half.to_parent(basis.nodes[k]));
            for v in 0..nv {
                ql[v] = (0..n).map(|j| l[j] * coarse[v * n + j]).sum();
            }
            gather(fine_i, nv, n, k, &mut qr);
            flux.flux(&ql, &qr, fine_normals[i * n + k], i * n + k, &mut f);
            for v in 0..nv_out {
                fine_out[i * nv_out * n + v * n + k] = f[v];
            }
        }
    }
    // Coarse nodes: fine trace of the half containing the node.
    for k in 0..n {
        let s = basis.nodes[k];
        let half = if s <= 0.0 { Half::Lo } else { Half::Hi };
        let x = match half {
            Half::Lo => 2.0 * s + 1.0,
            Half::Hi => 2.0 * s - 1.0,
        };
        let l = basis.lagrange_at(x);
        let fine_h = &fine[half.index() * nv * n..];
        gather(coarse, nv, n, k, &mut ql);
        for v in 0..nv {
            qr[v] = (0..n).map(|j| l[j] * fine_h[v * n + j]).sum();
        }
        flux.flux(&ql, &qr, coarse_normals[k], 2 * n + k, &mut f);
        for v in 0..nv_out {
            coarse_out[v * n + k] = f[v];
        }
    }
}

/// Linearized surface flux for scalar advection on one 2:1 face.
///
/// On each mortar the flux is split into a mass flux `F_m* = u·m` and an
/// upwind value `q*`. The fine sides take `F_m* q*`; the coarse side takes the
/// nodal product of the separately projected factors, which is not the
/// projection of the product.
///
/// `mass_flux` holds `u·m` at the `2n` mortar nodes (out of the coarse side).
pub fn linearized_advective_flux(
    proj: &ProjectionSet,
    coarse: &[f64],
    fine: &[f64],
    mass_flux: &[f64],
    coarse_out: &mut [f64],
    fine_out: &mut [f64],
) {
    let n = proj.order + 1;
    let mut projected = vec![0.0; n];
    let mut q_star = vec![0.0; 2 * n];
    for half in Half::BOTH {
        let i = half.index();
        project_to_mortar(proj, half, 1, coarse, &mut projected);
        for k in 0..n {
            let fm = mass_flux[i * n + k];
            let qs = if fm >= 0.0 {
                projected[k]
            } else {
                fine[i * n + k]
            };
            q_star[i * n + k] = qs;
            fine_out[i * n + k] = fm * qs;
        }
    }
    let mut fm_back = vec![0.0; n];
    let mut q_back = vec![0.0; n];
    project_flux_back(proj, 1, mass_flux, &mut fm_back);
    project_state_back(proj, 1, &q_star, &mut q_back);
    for k in 0..n {
        coarse_out[k] = fm_back[k] * q_back[k];
    }
}

/// Child `c` (0 = ξ−η−, 1 = ξ+η−, 2 = ξ−η+, 3 = ξ+η+) as a pair of halves.
#[inline]
pub fn child_halves(c: usize) -> (Half, Half) {
    let h = |b: usize| if b == 0 { Half::Lo } else { Half::Hi };
    (h(c & 1), h(c >> 1))
}

/// Tensor-product interpolation of a parent field (all `nv` variables) onto
/// its four children.
pub fn transfer_refine(proj: &ProjectionSet, nv: usize, parent: &[f64]) -> [Vec<f64>; 4] {
    let n = proj.order + 1;
    let nn = n * n;
    [0, 1, 2, 3].map(|c| {
        let (hx, hy) = child_halves(c);
        let mut out = vec![0.0; nv * nn];
        for v in 0..nv {
            apply_tensor(
                proj.parent_to_child(hx),
                proj.parent_to_child(hy),
                &parent[v * nn..(v + 1) * nn],
                &mut out[v * nn..(v + 1) * nn],
            );
        }
        out
    })
}

/// L² projection of four children onto the parent (reference-element
/// matrices): `parent = Σ_c (C_x ⊗ C_y) child_c`.
pub fn transfer_coarsen(proj: &ProjectionSet, nv: usize, children: [&[f64]; 4]) -> Vec<f64> {
    let n = proj.order + 1;
    let nn = n * n;
    let mut out = vec![0.0; nv * nn];
    let mut tmp = vec![0.0; nn];
    for (c, child) in children.iter().enumerate() {
        let (hx, hy) = child_halves(c);
        for v in 0..nv {
            apply_tensor(
                proj.child_to_parent(hx),
                proj.child_to_parent(hy),
                &child[v * nn..(v + 1) * nn],
                &mut tmp,
            );
            for k in 0..nn {
                out[v * nn + k] += tmp[k];
            }
        }
    }
    out
}

/// Volume-weighted coarsening for curved elements: `J·q` of each child
/// (scaled by the area ratio 4) is projected to the parent and divided by the
/// parent's Jacobian. Conserves `Σ w J q` exactly for any Jacobians.
pub fn transfer_coarsen_weighted(
    proj: &ProjectionSet,
    nv: usize,
    children: [&[f64]; 4],
    child_jac: [&[f64]; 4],
    parent_jac: &[f64],
) -> Vec<f64> {
    let n = proj.order + 1;
    let nn = n * n;
    let weighted: Vec<Vec<f64>> = (0..4)
        .map(|c| {
            let mut w = vec![0.0; nv * nn];
            for v in 0..nv {
                for k in 0..nn {
                    w[v * nn + k] = 4.0 * child_jac[c][k] * children[c][v * nn + k];
                }
            }
            w
        })
        .collect();
    let mut out = transfer_coarsen(
        proj,
        nv,
        [&weighted[0], &weighted[1], &weighted[2], &weighted[3]],
    );
    for v in 0..nv {
        for k in 0..nn {
            out[v * nn + k] /= parent_jac[k];
        }
    }
    out
}

/// How refined fields are corrected on curved elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RescaleMode {
    /// One multiplicative factor per field so that each integral is kept.
    PerField,
    /// One factor for all fields, the ratio of parent to children area.
    SingleAreaFactor,
}

/// Integral `Σ_k w_k J_k q_k` of variable `v` of a field.
pub fn weighted_integral(basis: &NodalBasis, jac: &[f64], field: &[f64], v: usize) -> f64 {
    let n = basis.n_nodes();
    let nn = n * n;
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            let k = i + n * j;
            s += basis.weights[i] * basis.weights[j] * jac[k] * field[v * nn + k];
        }
    }
    s
}

/// Correct interpolated children on curved elements so that each field's
/// integral matches the parent's. Returns the largest relative mismatch
/// before correction.
///
/// Per-field mode uses a multiplicative factor, falling back to an additive
/// shift when the children's integral is too small for a stable ratio.
pub fn rescale_children(
    basis: &NodalBasis,
    nv: usize,
    parent: &[f64],
    parent_jac: &[f64],
    children: &mut [Vec<f64>; 4],
    child_jac: [&[f64]; 4],
    mode: RescaleMode,
) -> f64 {
    let nn = basis.n_nodes().pow(2);
    let mut worst: f64 = 0.0;
    let area_p: f64 = weighted_integral(basis, parent_jac, &vec![1.0; nn], 0);
    let area_c: f64 = (0..4)
        .map(|c| weighted_integral(basis, child_jac[c], &vec![1.0; nn], 0))
        .sum();
    for v in 0..nv {
        let target = weighted_integral(basis, parent_jac, parent, v);
        let got: f64 = (0..4)
            .map(|c| weighted_integral(basis, child_jac[c], &children[c], v))
            .sum();
        let abs_scale: f64 = (0..4)
            .map(|c| {
                let abs: Vec<f64> = children[c].iter().map(|x| x.abs()).collect();
                weighted_integral(basis, child_jac[c], &abs, v)
            })
            .sum();
        if abs_scale > 0.0 {
            worst = worst.max((got - target).abs() / abs_scale);
        }
        match mode {
            RescaleMode::SingleAreaFactor => {
                let f = area_p / area_c;
                for ch in children.iter_mut() {
                    ch[v * nn..(v + 1) * nn].iter_mut().for_each(|x| *x *= f);
                }
            }
            RescaleMode::PerField => {
                if got == target {
                    continue;
                }
                let ratio = target / got;
                if got.abs() > 1e-8 * abs_scale && (0.5..2.0).contains(&ratio) {
                    for ch in children.iter_mut() {
                        ch[v * nn..(v + 1) * nn]
                            .iter_mut()
                            .for_each(|x| *x *= ratio);
                    }
                } else {
                    let shift = (target - got) / area_c;
                    for ch in children.iter_mut() {
                        ch[v * nn..(v + 1) * nn]
                            .iter_mut()
                            .for_each(|x| *x += shift);
                    }
                }
            }
        }
    }
    worst
}

/// Finite-volume coarsening: `q_p = Σ q_c V_c / Σ V_c`.
pub fn fv_coarsen(values: &[f64], volumes: &[f64]) -> f64 {
    let num: f64 = values.iter().zip(volumes).map(|(q, v)| q * v).sum();
    let den: f64 = volumes.iter().sum();
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_projection_set, lgl_nodes_and_weights};

    fn setup(n: usize) -> (NodalBasis, ProjectionSet) {
        let b = lgl_nodes_and_weights(n).unwrap();
        let p = build_projection_set(&b).unwrap();
        (b, p)
    }

    fn upwind(u: f64) -> impl FnMut(&[f64], &[f64], Vec3, usize, &mut [f64]) {
        move |ql: &[f64], qr: &[f64], m: Vec3, _k: usize, out: &mut [f64]| {
            let un = u * m[0];
            out[0] = 0.5 * un * (ql[0] + qr[0]) + 0.5 * un.abs() * (ql[0] - qr[0]);
        }
    }

    fn integral(b: &NodalBasis, f: &[f64]) -> f64 {
        b.weights.iter().zip(f).map(|(w, x)| w * x).sum()
    }

    #[test]
    fn constant_state_gives_conformal_flux() {
        let (b, p) = setup(4);
        let n = 5;
        let coarse = vec![2.0; n];
        let fine = vec![2.0; 2 * n];
        let normals = vec![[0.5, 0.0, 0.0]; 2 * n];
        let mut co = vec![0.0; n];
        let mut fo = vec![0.0; 2 * n];
        mortar_face_flux(
            &p,
            1,
            1,
            &coarse,
            &fine,
            &normals,
            &mut upwind(1.5),
            &mut co,
            &mut fo,
        );
        // per coarse parameter the normal has length 1
        assert!(co.iter().all(|x| (x - 3.0).abs() < 1e-13));
        assert!(fo.iter().all(|x| (x - 1.5).abs() < 1e-13));
        let out = integral(&b, &co);
        let into = integral(&b, &fo[..n]) + integral(&b, &fo[n..]);
        assert!((out - into).abs() < 1e-13);

        let mut pc = vec![0.0; n];
        let mut pf = vec![0.0; 2 * n];
        let cn = vec![[1.0, 0.0, 0.0]; n];
        pointwise_face_flux(
            &b,
            1,
            1,
            &coarse,
            &fine,
            &cn,
            &normals,
            &mut upwind(1.5),
            &mut pc,
            &mut pf,
        );
        for k in 0..n {
            assert!((pc[k] - co[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn mortar_conserves_for_discontinuous_fine_data() {
        let (b, p) = setup(3);
        let n = 4;
        let coarse = vec![0.3, -1.0, 2.0, 0.7];
        let fine = vec![1.0, 0.2, -0.5, 0.9, 0.1, 0.4, 3.0, -2.0];
        let normals: Vec<Vec3> = (0..2 * n)
            .map(|k| [0.5 + 0.01 * k as f64, 0.0, 0.0])
            .collect();
        let mut co = vec![0.0; n];
        let mut fo = vec![0.0; 2 * n];
        mortar_face_flux(
            &p,
            1,
            1,
            &coarse,
            &fine,
            &normals,
            &mut upwind(-0.7),
            &mut co,
            &mut fo,
        );
        let out = integral(&b, &co);
        let into = integral(&b, &fo[..n]) + integral(&b, &fo[n..]);
        assert!((out - into).abs() < 1e-14 * (1.0 + out.abs()));

        let mut pc = vec![0.0; n];
        let mut pf = vec![0.0; 2 * n];
        let cn = vec![[1.0, 0.0, 0.0]; n];
        pointwise_face_flux(
            &b,
            1,
            1,
            &coarse,
            &fine,
            &cn,
            &normals,
            &mut upwind(-0.7),
            &mut pc,
            &mut pf,
        );
        let pout = integral(&b, &pc);
        let pinto = integral(&b, &pf[..n]) + integral(&b, &pf[n..]);
        assert!(
            (pout - pinto).abs() > 1e-6,
            "pointwise flux is not conservative here"
        );
    }

    #[test]
    fn linearized_defect_matches_product_rule_oracle() {
        let (b, p) = setup(3);
        let n = 4;
        let coarse = vec![1.0, 2.0, 0.5, -1.0];
        let fine = vec![0.0; 2 * n];
        let mass: Vec<f64> = (0..2 * n).map(|k| 0.2 + 0.1 * (k as f64).sin()).collect();
        let mut co = vec![0.0; n];
        let mut fo = vec![0.0; 2 * n];
        linearized_advective_flux(&p, &coarse, &fine, &mass, &mut co, &mut fo);
        // Oracle: direct evaluation of both formulas with explicit matrices.
        let mut fm_back = vec![0.0; n];
        let mut q_back = vec![0.0; n];
        for (i, half) in Half::BOTH.into_iter().enumerate() {
            let c = p.child_to_parent(half);
            let pr = p.parent_to_child(half).apply_vec(&coarse);
            for r in 0..n {
                for k in 0..n {
                    fm_back[r] += c.get(r, k) * 2.0 * mass[i * n + k];
                    q_back[r] += c.get(r, k) * pr[k];
                }
            }
        }
        for k in 0..n {
            assert!((co[k] - fm_back[k] * q_back[k]).abs() < 1e-13);
        }
        let defect = integral(&b, &co) - (integral(&b, &fo[..n]) + integral(&b, &fo[n..]));
        assert!(defect.abs() > 1e-4);

        // Uniform wind and constant tracer: no defect.
        let coarse = vec![1.0; n];
        let fine = vec![1.0; 2 * n];
        let mass = vec![0.5; 2 * n];
        linearized_advective_flux(&p, &coarse, &fine, &mass, &mut co, &mut fo);
        let defect = integral(&b, &co) - (integral(&b, &fo[..n]) + integral(&b, &fo[n..]));
        assert!(defect.abs() < 1e-14);
    }

    #[test]
    fn refine_and_coarsen_round_trip() {
        let (b, p) = setup(4);
        let n = 5;
        let f: Vec<f64> = (0..n * n)
            .map(|k| {
                let (x, y) = (b.nodes[k % n], b.nodes[k / n]);
                x.powi(4) * y - 2.0 * y.powi(3) + x * y + 1.0
            })
            .collect();
        let children = transfer_refine(&p, 1, &f);
        for (c, ch) in children.iter().enumerate() {
            let (hx, hy) = child_halves(c);
            for k in 0..n * n {
                let (x, y) = (hx.to_parent(b.nodes[k % n]), hy.to_parent(b.nodes[k / n]));
                let exact = x.powi(4) * y - 2.0 * y.powi(3) + x * y + 1.0;
                assert!((ch[k] - exact).abs() < 1e-12);
            }
        }
        let back = transfer_coarsen(
            &p,
            1,
            [&children[0], &children[1], &children[2], &children[3]],
        );
        for k in 0..n * n {
            assert!((back[k] - f[k]).abs() < 1e-12);
        }
        let jp = vec![1.0; n * n];
        let jc = vec![0.25; n * n];
        let wb = transfer_coarsen_weighted(
            &p,
            1,
            [&children[0], &children[1], &children[2], &children[3]],
            [&jc, &jc, &jc, &jc],
            &jp,
        );
        for k in 0..n * n {
            assert!((wb[k] - f[k]).abs() < 1e-12);
        }
        let before = weighted_integral(&b, &jp, &f, 0);
        let after: f64 = (0..4)
            .map(|c| weighted_integral(&b, &jc, &children[c], 0))
            .sum();
        assert!((before - after).abs() < 1e-13);
    }

    #[test]
    fn fv_coarsening() {
        assert_eq!(fv_coarsen(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4]), 2.5);
        assert_eq!(
            fv_coarsen(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]),
            3.0
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mortar_flux_is_conservative(
                order in 1usize..7,
                data in proptest::collection::vec(-3.0f64..3.0, 40),
                u in -2.0f64..2.0,
            ) {
                let (b, p) = setup(order);
                let n = order + 1;
                let coarse = data[..n].to_vec();
                let fine = data[n..3 * n].to_vec();
                let normals: Vec<Vec3> = (0..2 * n).map(|k| [0.4 + 0.05 * data[3 * n + k % 4], 0.0, 0.0]).collect();
                let mut co = vec![0.0; n];
                let mut fo = vec![0.0; 2 * n];
                mortar_face_flux(&p, 1, 1, &coarse, &fine, &normals, &mut upwind(u), &mut co, &mut fo);
                let out = integral(&b, &co);
                let into = integral(&b, &fo[..n]) + integral(&b, &fo[n..]);
                let scale = 1.0 + integral(&b, &fo[..n].iter().map(|x| x.abs()).collect::<Vec<_>>());
                prop_assert!((out - into).abs() <= 1e-13 * scale);
            }

            #[test]
            fn weighted_coarsening_conserves(
                vals in proptest::collection::vec(-5.0f64..5.0, 100),
                jac in proptest::collection::vec(0.1f64..1.0, 4),
            ) {
                let (b, p) = setup(4);
                let nn = 25;
                let children: Vec<Vec<f64>> = (0..4).map(|c| vals[c * nn..(c + 1) * nn].to_vec()).collect();
                let cj: Vec<Vec<f64>> = (0..4).map(|c| (0..nn).map(|k| jac[c] * (1.0 + 0.01 * k as f64)).collect()).collect();
                let pj: Vec<f64> = (0..nn).map(|k| 2.0 + 0.02 * k as f64).collect();
                let parent = transfer_coarsen_weighted(
                    &p, 1,
                    [&children[0], &children[1], &children[2], &children[3]],
                    [&cj[0], &cj[1], &cj[2], &cj[3]],
                    &pj,
                );
                let before: f64 = (0..4).map(|c| weighted_integral(&b, &cj[c], &children[c], 0)).sum();
                let after = weighted_integral(&b, &pj, &parent, 0);
                prop_assert!((before - after).abs() < 1e-12 * (1.0 + before.abs()));
            }
        }
    }
}
