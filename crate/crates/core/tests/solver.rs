use std::collections::BTreeSet;
use std::sync::Arc;

use amrlab_core::dg::{Background, FluxMode, Physics, PrescribedWind, SolverConfig, TreeSolver};
use amrlab_core::euler::{hydrostatic_background, PhysicalConstants, N_EULER_VARS};
use amrlab_core::mortar::RescaleMode;
use amrlab_core::sphere::Vec3;
use amrlab_core::tree::{CellKey, FaceKind, QuadForest};

#[derive(Debug)]
struct Constant(Vec3);

impl PrescribedWind for Constant {
    fn n_terms(&self) -> usize {
        1
    }
    fn coefficients(&self, _t: f64, out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn term(&self, _m: usize, _x: Vec3) -> Vec3 {
        self.0
    }
}

fn cfg(order: usize, mode: FluxMode) -> SolverConfig {
    SolverConfig {
        order,
        mode,
        rescale: RescaleMode::PerField,
    }
}

/// 4×4 periodic roots, one root refined twice in a corner so that levels
/// 0, 1 and 2 all touch.
fn mixed_forest() -> QuadForest {
    let mut f = QuadForest::planar([0.0, 0.0], [1.0, 1.0], [4, 4], [true, true]).unwrap();
    let c = f
        .find(CellKey {
            tile: 0,
            level: 0,
            i: 1,
            j: 1,
        })
        .unwrap();
    f.refine_cells(&BTreeSet::from([c]), 3);
    let g = f
        .find(CellKey {
            tile: 0,
            level: 1,
            i: 3,
            j: 3,
        })
        .unwrap();
    f.refine_cells(&BTreeSet::from([g]), 3);
    f.check_invariants().unwrap();
    assert!(f
        .faces()
        .iter()
        .any(|l| l.kind() == FaceKind::NonConformal2to1));
    assert!(f.faces().iter().any(|l| l.kind() == FaceKind::Conformal));
    f
}

#[test]
fn advection_free_stream_survives_100_steps() {
    for mode in [FluxMode::Mortar, FluxMode::Pointwise, FluxMode::Linearized] {
        let physics = Physics::Advection {
            wind: Arc::new(Constant([0.6, -0.35, 0.0])),
        };
        let mut s = TreeSolver::new(mixed_forest(), physics, &cfg(4, mode)).unwrap();
        s.set_state(&|_| vec![1.75]);
        let dt = s.max_stable_dt(0.8);
        for _ in 0..100 {
            s.step_ssprk3(dt).unwrap();
        }
        let dev = s.state.iter().map(|q| (q - 1.75).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-12, "{mode:?}: {dev}");
    }
}

#[test]
fn euler_free_stream_survives_100_steps() {
    let c = PhysicalConstants::nondimensional();
    let physics = Physics::Euler {
        constants: c,
        background: Background::Uniform {
            rho: 1.0,
            theta_rho: 1.0,
        },
        viscosity: 0.0,
    };
    let q0 = [1.0, 0.5, -0.3, 1.0, 0.2];
    let mut s = TreeSolver::new(mixed_forest(), physics, &cfg(3, FluxMode::Mortar)).unwrap();
    s.set_state(&|_| q0.to_vec());
    let dt = s.max_stable_dt(0.8);
    for _ in 0..100 {
        s.step_ssprk3(dt).unwrap();
    }
    let nn = s.nn();
    for (idx, q) in s.state.iter().enumerate() {
        let v = (idx / nn) % N_EULER_VARS;
        assert!((q - q0[v]).abs() < 1e-12, "var {v}: {q}");
    }
}

#[test]
fn hydrostatic_rest_state_is_balanced_with_walls_and_mortars() {
    let c = PhysicalConstants::default();
    let (bg, _) = hydrostatic_background(300.0, &c, &[]).unwrap();
    let background = Background::Hydrostatic(bg);
    let mut f = QuadForest::planar([0.0, 0.0], [1000.0, 1000.0], [5, 5], [false, false]).unwrap();
    let id = f
        .find(CellKey {
            tile: 0,
            level: 0,
            i: 2,
            j: 0,
        })
        .unwrap();
    f.refine_cells(&BTreeSet::from([id]), 2);
    let physics = Physics::Euler {
        constants: c,
        background,
        viscosity: 1.5,
    };
    let mut s = TreeSolver::new(f, physics, &cfg(4, FluxMode::Mortar)).unwrap();
    s.set_state(&|x| {
        let (rho, th) = background.at(x[1]);
        vec![rho, 0.0, 0.0, th, 0.0]
    });
    let mut out = vec![0.0; s.state.len()];
    let st = s.state.clone();
    s.strong_form_rhs(&st, 0.0, &mut out);
    let worst = out.iter().map(|x| x.abs()).fold(0.0, f64::max);
    assert!(worst < 1e-10, "rest-state tendency {worst}");
}

/// A global polynomial of degree ≤ N is continuous across every face, so the
/// tendency on a 2:1 mesh must match the conformal mesh node for node.
#[test]
fn mortar_tendency_matches_conformal_mesh_for_resolved_polynomials() {
    let order = 4;
    let wind = Arc::new(Constant([0.9, 0.4, 0.0]));
    let poly =
        |x: Vec3| vec![1.0 + x[0] - 2.0 * x[1] * x[1] + x[0].powi(3) * x[1] - 0.5 * x[1].powi(4)];

    let mut conformal = QuadForest::planar([0.0, 0.0], [1.0, 1.0], [4, 4], [false, false]).unwrap();
    conformal.refine_uniformly(1);
    let mut mixed = QuadForest::planar([0.0, 0.0], [1.0, 1.0], [4, 4], [false, false]).unwrap();
    let id = mixed
        .find(CellKey {
            tile: 0,
            level: 0,
            i: 2,
            j: 1,
        })
        .unwrap();
    mixed.refine_cells(&BTreeSet::from([id]), 1);

    let tendency = |f: QuadForest| {
        let mut s = TreeSolver::new(
            f,
            Physics::Advection { wind: wind.clone() },
            &cfg(order, FluxMode::Mortar),
        )
        .unwrap();
        s.set_state(&poly);
        let mut out = vec![0.0; s.state.len()];
        let st = s.state.clone();
        s.strong_form_rhs(&st, 0.0, &mut out);
        (s, out)
    };
    let (sc, oc) = tendency(conformal);
    let (sm, om) = tendency(mixed);
    let nn = sc.nn();
    let mut compared = 0;
    for (e, &cell) in sm.mesh.elements.iter().enumerate() {
        if sm.forest.cell(cell).level() != 1 {
            continue;
        }
        let key = sm.forest.cell(cell).key;
        let ce = sc.mesh.elem_of[&sc.forest.find(key).unwrap()];
        for k in 0..nn {
            let (a, b) = (om[e * nn + k], oc[ce * nn + k]);
            assert!((a - b).abs() < 1e-13 * (1.0 + b.abs()) * 10.0, "{a} vs {b}");
        }
        compared += 1;
    }
    assert_eq!(compared, 4);
    // Level-0 elements adjacent to the refined cell see mortars; compare
    // them against the exact derivative since the conformal mesh has no
    // counterpart element.
    for (e, &cell) in sm.mesh.elements.iter().enumerate() {
        if sm.forest.cell(cell).level() != 0 {
            continue;
        }
        for k in 0..nn {
            let x = sm.mesh.x[e * nn + k];
            let exact = -(0.9 * (1.0 + 3.0 * x[0] * x[0] * x[1])
                + 0.4 * (-4.0 * x[1] + x[0].powi(3) - 2.0 * x[1].powi(3)));
            assert!(
                (om[e * nn + k] - exact).abs() < 1e-11,
                "{} vs {exact}",
                om[e * nn + k]
            );
        }
    }
}

#[test]
fn pointwise_and_linearized_leak_mass_while_mortar_does_not() {
    let mut losses = Vec::new();
    for mode in [FluxMode::Mortar, FluxMode::Pointwise, FluxMode::Linearized] {
        let wind = Arc::new(Constant([1.0, 0.7, 0.0]));
        let mut s =
            TreeSolver::new(mixed_forest(), Physics::Advection { wind }, &cfg(3, mode)).unwrap();
        s.set_state(&|x| vec![(-40.0 * ((x[0] - 0.4).powi(2) + (x[1] - 0.4).powi(2))).exp()]);
        let m0 = s.integral(0);
        let dt = s.max_stable_dt(0.8);
        for _ in 0..50 {
            s.step_ssprk3(dt).unwrap();
        }
        losses.push(((s.integral(0) - m0) / m0).abs());
    }
    assert!(losses[0] < 1e-13, "{losses:?}");
    assert!(losses[1] > 1e3 * losses[0].max(1e-16), "{losses:?}");
}

#[test]
fn regrid_conserves_mass_on_planar_mesh() {
    let wind = Arc::new(Constant([1.0, 0.0, 0.0]));
    let f = QuadForest::planar([0.0, 0.0], [1.0, 1.0], [6, 6], [true, true]).unwrap();
    let mut s = TreeSolver::new(f, Physics::Advection { wind }, &cfg(4, FluxMode::Mortar)).unwrap();
    let blob = |x: Vec3| vec![(-60.0 * ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2))).exp()];
    let policy = amrlab_core::tree::RegridPolicy {
        interval_steps: 1,
        buffer_cells: 1,
        max_level: 2,
        field: "q".into(),
        refine_above: 0.3,
        coarsen_below: 0.05,
    };
    let ind = |f: &[f64], _x: &[Vec3]| f.iter().cloned().fold(f64::MIN, f64::max);
    s.adapt_initial(&policy, &ind, &blob, 4).unwrap();
    assert!(s.forest.max_leaf_level() >= 1);
    let m0 = s.integral(0);
    let dt = s.max_stable_dt(0.8);
    for step in 0..60 {
        s.step_ssprk3(dt).unwrap();
        if step % 5 == 4 {
            s.regrid(&policy, &ind).unwrap();
            s.forest.check_invariants().unwrap();
        }
    }
    assert!(((s.integral(0) - m0) / m0).abs() < 1e-13);
}
