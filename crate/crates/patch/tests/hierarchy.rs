use std::sync::Arc;

use amrlab_core::dg::{Background, PrescribedWind};
use amrlab_core::euler::PhysicalConstants;
use amrlab_core::sphere::Vec3;
use amrlab_core::tree::RegridPolicy;
use amrlab_patch::fv::{CompressibleEuler, TracerAdvection};
use amrlab_patch::hierarchy::Patch;
use amrlab_patch::*;

#[derive(Debug)]
struct Constant([f64; 2]);

impl PrescribedWind for Constant {
    fn n_terms(&self) -> usize {
        1
    }
    fn coefficients(&self, _t: f64, out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn term(&self, _m: usize, _x: Vec3) -> Vec3 {
        [self.0[0], self.0[1], 0.0]
    }
}

fn unit_domain(n: i64, periodic: bool) -> ProblemDomain {
    ProblemDomain {
        origin: [0.0, 0.0],
        extent: [1.0, 1.0],
        cells: [n, n],
        periodic: [periodic, periodic],
    }
}

fn advection(u: [f64; 2]) -> Arc<TracerAdvection> {
    Arc::new(TracerAdvection {
        wind: Arc::new(Constant(u)),
    })
}

fn config(order: StencilOrder, coupling: Coupling) -> HierarchyConfig {
    HierarchyConfig {
        order,
        coupling,
        cluster: ClusterParams {
            efficiency: 0.7,
            blocking: 4,
            max_size: 64,
        },
        ..Default::default()
    }
}

/// Level 0 as two boxes, level 1 as two sibling boxes in the middle.
fn two_level(n: i64, model: Arc<dyn fv::FvModel>, cfg: HierarchyConfig) -> Hierarchy {
    let d = unit_domain(n, true);
    let h = n / 2;
    let l0 = vec![
        IndexBox::new([0, 0], [h - 1, n - 1], 0),
        IndexBox::new([h, 0], [n - 1, n - 1], 0),
    ];
    let q = n / 4;
    let l1 = vec![
        IndexBox::new([2 * q, 2 * q], [2 * h - 1, 6 * q - 1], 1),
        IndexBox::new([2 * h, 2 * q], [6 * q - 1, 6 * q - 1], 1),
    ];
    Hierarchy::with_levels(d, model, cfg, vec![l0, l1]).unwrap()
}

fn blob(x: [f64; 2]) -> Vec<f64> {
    vec![(-80.0 * ((x[0] - 0.45).powi(2) + (x[1] - 0.5).powi(2))).exp()]
}

#[test]
fn ghost_rules_sibling_copy_coarse_constant_and_periodic_wrap() {
    let mut h = two_level(
        16,
        advection([1.0, 0.0]),
        config(StencilOrder::Third, Coupling::TWO_WAY),
    );
    h.set_state(&|x| vec![3.0 + x[0] * 0.0]);
    h.fill_ghost_cells(0, 0.0).unwrap();
    h.fill_ghost_cells(1, 0.0).unwrap();
    let l1 = &h.levels[1];
    // Constant coarse data interpolates to the same constant.
    for p in &l1.patches {
        for c in p.bx.grow(p.ng).cells() {
            assert!((p.get(0, c) - 3.0).abs() < 1e-14);
        }
    }
    // Distinct data: sibling ghosts are bitwise copies, periodic ghosts wrap.
    h.set_state(&|x| vec![x[0] * 10.0 + x[1]]);
    h.fill_ghost_cells(0, 0.0).unwrap();
    h.fill_ghost_cells(1, 0.0).unwrap();
    let (a, b): (&Patch, &Patch) = (&h.levels[1].patches[0], &h.levels[1].patches[1]);
    let c = [b.bx.lo[0], b.bx.lo[1] + 3];
    assert_eq!(a.get(0, c).to_bits(), b.get(0, c).to_bits());
    let l0 = &h.levels[0].patches[0];
    let ghost = [-1, 5];
    let owner = &h.levels[0].patches[h.levels[0].owner_of([15, 5]).unwrap()];
    assert_eq!(l0.get(0, ghost).to_bits(), owner.get(0, [15, 5]).to_bits());
}

#[test]
fn single_level_reflux_and_average_down_examples() {
    let d = unit_domain(8, true);
    let cfg = config(StencilOrder::Second, Coupling::TWO_WAY);
    let mut h = Hierarchy::with_levels(
        d,
        advection([0.0, 0.0]),
        cfg.clone(),
        vec![vec![d.level_box(0)]],
    )
    .unwrap();
    h.set_state(&|_| vec![1.0]);
    // +1 flux unit on one face for dt = 0.5: change of dt·area/volume.
    let mut reg = FluxRegister::default();
    let (dt, area, vol) = (0.5, 1.0 / 8.0, 1.0 / 64.0);
    reg.add([3, 3], 1, &[1.0], dt * area);
    reflux(&reg, &mut h.levels[0], vol);
    let p = &h.levels[0].patches[0];
    assert!((p.get(0, [3, 3]) - (1.0 - dt * area / vol)).abs() < 1e-12);
    assert_eq!(p.get(0, [4, 3]), 1.0);
    // Identical fluxes cancel.
    let mut reg = FluxRegister::default();
    reg.add([2, 2], 0, &[0.7], 0.1);
    reg.add([2, 2], 0, &[0.7], -0.1);
    let before = h.levels[0].patches[0].get(0, [2, 2]);
    reflux(&reg, &mut h.levels[0], vol);
    assert_eq!(h.levels[0].patches[0].get(0, [2, 2]), before);

    // average_down: children 1..4 → 2.5; linear field → exact mean.
    let mut h = two_level(16, advection([0.0, 0.0]), cfg);
    let fine_box = h.levels[1].patches[0].bx;
    let c0 = fine_box.lo;
    for (k, (di, dj)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
        h.levels[1].patches[0].set(0, [c0[0] + di, c0[1] + dj], (k + 1) as f64);
    }
    let (lo, hi) = h.levels.split_at_mut(1);
    average_down(&hi[0], &mut lo[0]);
    let cc = [c0[0] / 2, c0[1] / 2];
    let owner = lo[0].owner_of(cc).unwrap();
    assert_eq!(lo[0].patches[owner].get(0, cc), 2.5);

    h.set_state(&|x| vec![2.0 * x[0] - x[1]]);
    let centre = h.domain.centre(0, cc);
    let owner = h.levels[0].owner_of(cc).unwrap();
    assert!((h.levels[0].patches[owner].get(0, cc) - (2.0 * centre[0] - centre[1])).abs() < 1e-14);
}

#[test]
fn two_level_free_stream_stays_uniform() {
    let mut h = two_level(
        16,
        advection([0.8, -0.3]),
        config(StencilOrder::Fourth, Coupling::TWO_WAY),
    );
    h.set_state(&|_| vec![2.0]);
    let dt = h.max_stable_dt(0.8);
    for _ in 0..100 {
        h.step(dt).unwrap();
    }
    for lv in &h.levels {
        for p in &lv.patches {
            for c in p.bx.cells() {
                assert!((p.get(0, c) - 2.0).abs() < 1e-12);
            }
        }
    }
    assert_eq!(h.diagnostics.cfl_warnings, 0);
}

#[test]
fn euler_two_level_free_stream() {
    let c = PhysicalConstants::nondimensional();
    let model = Arc::new(CompressibleEuler {
        constants: c,
        background: Background::Uniform {
            rho: 1.0,
            theta_rho: 1.0,
        },
    });
    let mut h = two_level(16, model, config(StencilOrder::Third, Coupling::TWO_WAY));
    let q0 = vec![1.0, 0.5, 0.5, 1.0, 0.3];
    h.set_state(&|_| q0.clone());
    let dt = h.max_stable_dt(0.5);
    for _ in 0..100 {
        h.step(dt).unwrap();
    }
    for lv in &h.levels {
        for p in &lv.patches {
            for cell in p.bx.cells() {
                for v in 0..5 {
                    assert!((p.get(v, cell) - q0[v]).abs() < 1e-12);
                }
            }
        }
    }
}

fn blob_drift(coupling: Coupling) -> f64 {
    let mut h = two_level(
        32,
        advection([1.0, 0.5]),
        config(StencilOrder::Third, coupling),
    );
    h.set_state(&blob);
    let m0 = h.integral(0);
    let dt = h.max_stable_dt(0.8);
    for _ in 0..40 {
        h.step(dt).unwrap();
    }
    ((h.integral(0) - m0) / m0).abs()
}

#[test]
fn reflux_conserves_and_its_absence_does_not() {
    let two_way = blob_drift(Coupling::TWO_WAY);
    let no_reflux = blob_drift(Coupling {
        reflux: false,
        average_down: true,
    });
    let one_way = blob_drift(Coupling::ONE_WAY);
    eprintln!("drift: two-way {two_way:.3e}, no reflux {no_reflux:.3e}, one-way {one_way:.3e}");
    assert!(two_way < 1e-12, "{two_way}");
    assert!(no_reflux > 1e-8 && no_reflux > two_way, "{no_reflux}");
    assert!(one_way > two_way, "{one_way}");
}

#[test]
fn fine_boxes_are_clipped_to_nest() {
    let d = unit_domain(16, true);
    let cfg = config(StencilOrder::Second, Coupling::TWO_WAY);
    let l0 = vec![d.level_box(0)];
    let l1 = vec![IndexBox::new([8, 8], [15, 15], 1)];
    let l2 = vec![IndexBox::new([16, 16], [31, 31], 2)];
    let mut h = Hierarchy::with_levels(d, advection([1.0, 0.0]), cfg, vec![l0, l1, l2]).unwrap();
    assert_eq!(
        h.levels[2].boxes(),
        vec![IndexBox::new([20, 20], [27, 27], 2)]
    );
    assert!(is_properly_nested(&h.domain, &h.boxes(), 2));
    h.set_state(&|_| vec![1.0]);
    h.fill_ghost_cells(1, 0.0).unwrap();
    h.fill_ghost_cells(2, 0.0).unwrap();
}

#[test]
fn regrid_follows_the_blob_and_keeps_invariants() {
    let d = unit_domain(32, true);
    let mut h = Hierarchy::new(
        d,
        advection([1.0, 0.0]),
        config(StencilOrder::Third, Coupling::TWO_WAY),
    )
    .unwrap();
    h.set_state(&blob);
    let policy = RegridPolicy {
        interval_steps: 4,
        buffer_cells: 1,
        max_level: 1,
        field: "tracer".into(),
        refine_above: 0.2,
        coarsen_below: 0.0,
    };
    let ind = |q: &[f64], _x: [f64; 2]| q[0];
    h.regrid(&policy, &ind).unwrap();
    h.set_state(&blob);
    assert_eq!(h.levels.len(), 2);
    let m0 = h.integral(0);
    let dt = h.max_stable_dt(0.8);
    for step in 0..32 {
        h.step(dt).unwrap();
        if step % 4 == 3 {
            h.regrid(&policy, &ind).unwrap();
            let boxes = h.boxes();
            assert!(is_properly_nested(
                &h.domain,
                &boxes,
                h.config.nesting_width
            ));
            for lv in &boxes {
                assert!(index_box::pairwise_disjoint(lv));
            }
        }
    }
    assert!(((h.integral(0) - m0) / m0).abs() < 1e-12);
    assert!(h.diagnostics.regrids >= 8);
}

fn sine_error(n: i64) -> f64 {
    let mut h = two_level(
        n,
        advection([1.0, 1.0]),
        config(StencilOrder::Second, Coupling::TWO_WAY),
    );
    let tau = 2.0 * std::f64::consts::PI;
    let exact = |x: [f64; 2], t: f64| (tau * (x[0] - t)).sin() * (tau * (x[1] - t)).sin();
    h.set_state(&|x| vec![exact(x, 0.0)]);
    let t_end = 0.25;
    let steps = (t_end / h.max_stable_dt(0.4)).ceil() as usize;
    let dt = t_end / steps as f64;
    for _ in 0..steps {
        h.step(dt).unwrap();
    }
    // Compare against the initial cell averages of the shifted field.
    let mut reference = h.clone();
    reference.set_state(&|x| vec![exact(x, t_end)]);
    let mut err = 0.0;
    let mut vol = 0.0;
    let mut refs = Vec::new();
    reference.for_each_leaf(|_, _, _, q| refs.push(q[0]));
    let mut k = 0;
    h.for_each_leaf(|l, _, _, q| {
        let v = h.cell_volume(l);
        err += (q[0] - refs[k]).abs() * v;
        vol += v;
        k += 1;
    });
    err / vol
}

#[test]
fn subcycled_second_order_converges() {
    let e = [sine_error(16), sine_error(32), sine_error(64)];
    let rate = (e[1] / e[2]).log2();
    eprintln!("errors {e:?}, rate {rate:.3}");
    assert!(rate >= 1.9, "errors {e:?}, rate {rate}");
}

#[test]
fn vtk_output_lists_composite_cells() {
    let h = two_level(
        16,
        advection([1.0, 0.0]),
        config(StencilOrder::Second, Coupling::TWO_WAY),
    );
    let dir = tempfile::tempdir().unwrap();
    let file = vtk::write_hierarchy(&h, dir.path(), "snap_0", &["tracer"]).unwrap();
    assert_eq!(file.file_name().unwrap(), "snap_0.vtk");
    let text = std::fs::read_to_string(&file).unwrap();
    let mut leaves = 0;
    h.for_each_leaf(|_, _, _, _| leaves += 1);
    assert!(text.contains(&format!("CELL_TYPES {leaves}")));
    assert_eq!(round_robin(5, 2), vec![0, 1, 0, 1, 0]);
}
