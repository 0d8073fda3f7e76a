//! Verification suites: the acceptance checks of both backends, runnable
//! from the CLI (`amrlab verify --suite <name>`) and from the test harness.
//!
//! Runs shared between checks (the swirl family, for instance) are cached in
//! a [`Context`], so a full suite performs each simulation once.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use amrlab_core::basis::{build_projection_set, NodalBasis};
use amrlab_core::dg::{Background, FluxMode, Physics, PrescribedWind, SolverConfig, TreeSolver};
use amrlab_core::euler::{self, PhysicalConstants, N_EULER_VARS};
use amrlab_core::mortar::{transfer_coarsen, transfer_refine, RescaleMode};
use amrlab_core::sphere::{build_cubed_sphere, volume_loss_metric, Vec3};
use amrlab_core::tree::{CellKey, QuadForest};
use amrlab_patch::cluster::fill_ratio;
use amrlab_patch::fv::TracerAdvection;
use amrlab_patch::index_box::pairwise_disjoint;
use amrlab_patch::{
    berger_rigoutsos, face_interp, Cell, ClusterParams, Coupling, Hierarchy, HierarchyConfig,
    IndexBox, ProblemDomain, StencilOrder,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Backend, CaseId};
use crate::run::{build_hierarchy, RunOutcome, Simulation};
use crate::setups::{exact_solution, initial_state, point_indicator, VortexParams};
use crate::{load_config, run_case};

pub const SUITES: [&str; 3] = ["quick", "acceptance", "long"];

/// Criterion ids of a suite. `quick` needs seconds, `long` holds the
/// multi-minute simulations, `acceptance` is everything. A list such as
/// `1,4` selects single criteria.
pub fn suite(name: &str) -> Option<Vec<u32>> {
    let ids: &[u32] = match name {
        "quick" => &[5, 6, 7, 9, 10, 11],
        "long" => &[1, 2, 3, 4, 8, 12],
        "acceptance" => &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12],
        // A comma-separated list of criterion numbers.
        _ => {
            return name
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<u32>()
                        .ok()
                        .filter(|id| (1..=12).contains(id))
                })
                .collect();
        }
    };
    Some(ids.to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        format!(
            "criterion {:>2} [{verdict}] {}: {}",
            self.id, self.name, self.detail
        )
    }
}

/// Cached runs plus the directory their outputs go to.
pub struct Context {
    out: Option<PathBuf>,
    runs: HashMap<String, Result<RunOutcome, String>>,
}

impl Context {
    pub fn new(out: Option<PathBuf>) -> Self {
        Self {
            out,
            runs: HashMap::new(),
        }
    }

    /// Run `case` with `overrides` once under `label`.
    fn run(
        &mut self,
        label: &str,
        case: CaseId,
        overrides: &[(&str, &str)],
    ) -> Result<&RunOutcome, String> {
        if !self.runs.contains_key(label) {
            let dir = self.out.as_ref().map(|d| d.join(label));
            let result = load_config(case, Some(Backend::Tree), None, overrides)
                .map_err(|e| e.to_string())
                .and_then(|cfg| run_case(&cfg, dir.as_deref()).map_err(|e| e.to_string()));
            self.runs.insert(label.to_string(), result);
        }
        self.runs[label]
            .as_ref()
            .map_err(|e| format!("{label}: {e}"))
    }

    pub fn criterion(&mut self, id: u32) -> CheckResult {
        let (name, outcome): (&'static str, Result<(bool, String), String>) = match id {
            1 => ("isentropic vortex accuracy", self.vortex()),
            2 => ("swirl conservation by flux mode", self.swirl_conservation()),
            3 => ("swirl accuracy ordering", self.swirl_accuracy()),
            4 => ("rising bubble conservation and tracking", self.rrtb()),
            5 => ("Berger-Rigoutsos clustering", clustering()),
            6 => ("patch reflux conservation", patch_conservation()),
            7 => ("face stencil exactness", Ok(stencil_exactness())),
            8 => ("cubed sphere area and advection", self.sphere()),
            9 => ("free-stream preservation", free_stream()),
            10 => ("mortar and transfer exactness", mortar_exactness()),
            11 => ("sound speed", Ok(sound_speed())),
            12 => ("AMR versus uniform wall time", self.performance()),
            _ => ("unknown", Err(format!("no criterion {id}"))),
        };
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        CheckResult {
            id,
            name,
            passed,
            detail,
        }
    }

    fn vortex(&mut self) -> Result<(bool, String), String> {
        let out = self.run("vortex", CaseId::Vortex, &[])?;
        let l2 = out.report.l2_error.ok_or("no exact solution")?;
        let Simulation::Tree(s) = &out.sim else {
            return Err("expected a tree run".into());
        };
        let p = VortexParams::new(&out.config);
        let nv = s.n_vars();
        let nn = s.nn();
        let (mut peak, mut outside, mut sq) = (0.0f64, 0.0f64, 0.0f64);
        // Max error beyond radius 3 and 4, reported for context.
        let mut beyond = [0.0f64; 2];
        for e in 0..s.mesh.n_elements() {
            for k in 0..nn {
                let x = s.mesh.x[e * nn + k];
                let ex = exact_solution(&out.config, x, s.time).ok_or("no exact solution")?;
                let err2 = (0..nv)
                    .map(|v| (s.state[(e * nv + v) * nn + k] - ex[v]).powi(2))
                    .sum::<f64>();
                sq += err2;
                let err = err2.sqrt();
                peak = peak.max(err);
                let d = p.offset([x[0], x[1]], s.time);
                let r = d[0].hypot(d[1]);
                if r > 2.0 {
                    outside = outside.max(err);
                }
                for (b, radius) in beyond.iter_mut().zip([3.0, 4.0]) {
                    if r > radius {
                        *b = b.max(err);
                    }
                }
            }
        }
        let target = 8.75e-4;
        let rms = (sq / s.state.len() as f64).sqrt();
        let secs = out.report.wall_seconds;
        let ok_l2 = l2 >= target / 2.0 && l2 <= 2.0 * target;
        let ok_far = outside < 0.05 * peak;
        let ok_time = secs < 600.0;
        Ok((
            ok_l2 && ok_far && ok_time,
            format!(
                "L2 {l2:.3e} (target {target:.2e}, factor 2; nodal RMS {rms:.3e}) [{}]; far-field max {outside:.2e} vs 0.05 x peak {:.2e} [{}] (beyond r=3: {:.2e}, r=4: {:.2e}); {secs:.0} s [{}]",
                tag(ok_l2),
                0.05 * peak,
                tag(ok_far),
                beyond[0],
                beyond[1],
                tag(ok_time)
            ),
        ))
    }

    fn swirl_conservation(&mut self) -> Result<(bool, String), String> {
        let mortar = self
            .run("swirl-mortar", CaseId::Swirl, &[])?
            .report
            .max_tracer_loss;
        let pointwise = self
            .run("swirl-pointwise", CaseId::Swirl, &[("flux", "pointwise")])?
            .report
            .max_tracer_loss;
        let linearized = self
            .run("swirl-linearized", CaseId::Swirl, &[("flux", "linearized")])?
            .report
            .max_tracer_loss;
        let conformal = self
            .run("swirl-uniform16", CaseId::Swirl, &[("max_level", "0")])?
            .report
            .max_tracer_loss;
        let ok = [
            mortar <= 1e-12,
            pointwise >= 1e3 * mortar,
            linearized >= 1e3 * mortar,
            conformal <= 1e-12,
        ];
        Ok((
            ok.iter().all(|&b| b),
            format!(
                "tracer loss: mortar {mortar:.2e} [{}], pointwise {pointwise:.2e} [{}], linearized {linearized:.2e} [{}], conformal {conformal:.2e} [{}]",
                tag(ok[0]),
                tag(ok[1]),
                tag(ok[2]),
                tag(ok[3])
            ),
        ))
    }

    fn swirl_errors(&mut self) -> Result<[(f64, f64, f64); 3], String> {
        let mut out = [(0.0, 0.0, 0.0); 3];
        let runs: [(&str, &[(&str, &str)]); 3] = [
            ("swirl-mortar", &[]),
            ("swirl-uniform16", &[("max_level", "0")]),
            ("swirl-uniform32", &[("max_level", "0"), ("root", "32")]),
        ];
        for (slot, (label, ov)) in out.iter_mut().zip(runs) {
            let r = &self.run(label, CaseId::Swirl, ov)?.report;
            *slot = (
                r.rms_error.ok_or("no exact solution")?,
                r.l2_error.unwrap_or(f64::NAN),
                r.wall_seconds,
            );
        }
        Ok(out)
    }

    fn swirl_accuracy(&mut self) -> Result<(bool, String), String> {
        let [amr, u16, u32] = self.swirl_errors()?;
        let ok = [amr.0 < u16.0, amr.0 <= 2.0 * u32.0];
        Ok((
            ok[0] && ok[1],
            format!(
                "RMS error: AMR {:.3e}, uniform 16 {:.3e} [{}], uniform 32 {:.3e} [{}]; dof-normalised L2 {:.2e} / {:.2e} / {:.2e}",
                amr.0,
                u16.0,
                tag(ok[0]),
                u32.0,
                tag(ok[1]),
                amr.1,
                u16.1,
                u32.1
            ),
        ))
    }

    fn performance(&mut self) -> Result<(bool, String), String> {
        let [amr, _, u32] = self.swirl_errors()?;
        Ok((
            amr.2 < u32.2,
            format!(
                "swirl wall time: AMR {:.2} s, uniform 32x32 {:.2} s",
                amr.2, u32.2
            ),
        ))
    }

    fn rrtb(&mut self) -> Result<(bool, String), String> {
        let r = &self.run("rrtb", CaseId::Rrtb, &[])?.report;
        let ok = [
            r.max_mass_loss <= 1e-12,
            r.max_energy_loss <= 1e-5,
            r.untracked_cells == 0 && r.regrids > 0,
        ];
        Ok((
            ok.iter().all(|&b| b),
            format!(
                "mass loss {:.2e} [{}], energy drift {:.2e} [{}], untracked cells {} over {} regrids [{}]; {:.0} s",
                r.max_mass_loss,
                tag(ok[0]),
                r.max_energy_loss,
                tag(ok[1]),
                r.untracked_cells,
                r.regrids,
                tag(ok[2]),
                r.wall_seconds
            ),
        ))
    }

    fn sphere(&mut self) -> Result<(bool, String), String> {
        let (area_err, seq_loss) = sphere_areas()?;
        let amr = self
            .run("sphere-amr", CaseId::SphereAdvect, &[])?
            .report
            .clone();
        let u30 = self
            .run(
                "sphere-uniform30",
                CaseId::SphereAdvect,
                &[("max_level", "0")],
            )?
            .report
            .clone();
        let u60 = self
            .run(
                "sphere-uniform60",
                CaseId::SphereAdvect,
                &[("max_level", "0"), ("root", "60")],
            )?
            .report
            .clone();
        let e = |r: &crate::ErrorReport| r.rms_error.unwrap_or(f64::NAN);
        let ok = [
            area_err <= 1e-12,
            seq_loss <= 1e-13 && amr.max_volume_loss <= 1e-13,
            amr.max_tracer_loss <= 1e-12,
            e(&amr) < e(&u30),
            e(&amr) <= 2.0 * e(&u60),
        ];
        Ok((
            ok.iter().all(|&b| b),
            format!(
                "area error {area_err:.1e} [{}]; volume loss {seq_loss:.1e} under refinement, {:.1e} in the run [{}]; tracer loss {:.2e} [{}]; RMS error AMR {:.3e}, uniform 30 {:.3e} [{}], uniform 60 {:.3e} [{}]",
                tag(ok[0]),
                amr.max_volume_loss,
                tag(ok[1]),
                amr.max_tracer_loss,
                tag(ok[2]),
                e(&amr),
                e(&u30),
                tag(ok[3]),
                e(&u60),
                tag(ok[4])
            ),
        ))
    }
}

fn tag(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

// ----- patch backend -----------------------------------------------------------

/// Brute-force check of every clustering postcondition.
pub fn check_clusters(tags: &[Cell], boxes: &[IndexBox], p: &ClusterParams) -> Result<(), String> {
    for t in tags {
        if !boxes.iter().any(|b| b.contains(*t)) {
            return Err(format!("tag {t:?} uncovered"));
        }
    }
    if !pairwise_disjoint(boxes) {
        return Err("boxes overlap".into());
    }
    let side = (p.max_size / p.blocking).max(1) * p.blocking;
    for b in boxes {
        let s = b.size();
        for d in 0..2 {
            if b.lo[d].rem_euclid(p.blocking) != 0 || s[d] % p.blocking != 0 {
                return Err(format!("{b:?} not aligned to {}", p.blocking));
            }
            if s[d] > side {
                return Err(format!("{b:?} longer than {side}"));
            }
        }
        let fill = fill_ratio(tags, b);
        if fill == 0.0 {
            return Err(format!("{b:?} is empty"));
        }
        if fill < p.efficiency && s != [p.blocking, p.blocking] {
            return Err(format!("{b:?} fill {fill:.3} below {}", p.efficiency));
        }
    }
    Ok(())
}

fn random_tags(rng: &mut ChaCha8Rng) -> Vec<Cell> {
    let mut tags = BTreeSet::new();
    match rng.gen_range(0..3) {
        0 => {
            for _ in 0..rng.gen_range(1..200) {
                tags.insert([rng.gen_range(-40..40), rng.gen_range(-40..40)]);
            }
        }
        1 => {
            for _ in 0..rng.gen_range(1..5) {
                let lo = [rng.gen_range(-30..30), rng.gen_range(-30..30)];
                tags.extend(
                    IndexBox::from_size(lo, [rng.gen_range(1..25), rng.gen_range(1..25)], 0)
                        .cells(),
                );
            }
        }
        _ => {
            let (cx, cy) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let r1: f64 = rng.gen_range(2.0..20.0);
            let r0 = r1 * rng.gen_range(0.0..0.9);
            for j in -40..40 {
                for i in -40..40 {
                    let r = (i as f64 - cx).hypot(j as f64 - cy);
                    if r >= r0 && r <= r1 {
                        tags.insert([i, j]);
                    }
                }
            }
        }
    }
    tags.into_iter().collect()
}

/// Boxes the patch vortex setup clusters its level-0 tags into at
/// `efficiency`, with the blocking and size limits a regrid uses.
pub fn vortex_box_count(efficiency: f64) -> Result<usize, String> {
    let cfg =
        load_config(CaseId::Vortex, Some(Backend::Patch), None, &[]).map_err(|e| e.to_string())?;
    let params = ClusterParams {
        efficiency,
        blocking: cfg.blocking,
        max_size: cfg.max_box,
    }
    .coarsened();
    let mut h = build_hierarchy(&cfg).map_err(|e| e.to_string())?;
    h.set_state(&|x| initial_state(&cfg, [x[0], x[1], 0.0]));
    let indicator = |q: &[f64], _x: [f64; 2]| point_indicator(CaseId::Vortex, q);
    let tags = h.tag_cells(
        0,
        &indicator,
        cfg.regrid.refine_above,
        cfg.regrid.buffer_cells as i64,
    );
    let boxes = berger_rigoutsos(&tags, 0, &params);
    check_clusters(&tags, &boxes, &params)?;
    Ok(boxes.len())
}

fn clustering() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = Vec::new();
    for case in 0..1000 {
        let tags = random_tags(&mut rng);
        let params = ClusterParams {
            efficiency: rng.gen_range(0.3..0.95),
            blocking: [1, 2, 4, 8][rng.gen_range(0..4)],
            max_size: rng.gen_range(8..64),
        };
        if let Err(e) = check_clusters(&tags, &berger_rigoutsos(&tags, 0, &params), &params) {
            failures.push(format!("set {case}: {e}"));
        }
    }
    let low = vortex_box_count(0.7)?;
    let high = vortex_box_count(0.9)?;
    let ok = [failures.is_empty(), low <= 3, high >= 10];
    Ok((
        ok.iter().all(|&b| b),
        format!(
            "{} of 1000 random tag sets violate a postcondition [{}]{}; vortex boxes at efficiency 0.7: {low} [{}], at 0.9: {high} [{}]",
            failures.len(),
            tag(ok[0]),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default(),
            tag(ok[1]),
            tag(ok[2])
        ),
    ))
}

#[derive(Debug)]
struct UniformWind([f64; 2]);

impl PrescribedWind for UniformWind {
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

/// Periodic unit square with level 0 in two boxes and level 1 as two sibling
/// boxes over the middle half.
fn two_level_hierarchy(n: i64, wind: [f64; 2], coupling: Coupling) -> Result<Hierarchy, String> {
    let d = ProblemDomain {
        origin: [0.0, 0.0],
        extent: [1.0, 1.0],
        cells: [n, n],
        periodic: [true, true],
    };
    let h = n / 2;
    let q = n / 4;
    let l0 = vec![
        IndexBox::new([0, 0], [h - 1, n - 1], 0),
        IndexBox::new([h, 0], [n - 1, n - 1], 0),
    ];
    let l1 = vec![
        IndexBox::new([2 * q, 2 * q], [2 * h - 1, 6 * q - 1], 1),
        IndexBox::new([2 * h, 2 * q], [6 * q - 1, 6 * q - 1], 1),
    ];
    let cfg = HierarchyConfig {
        coupling,
        cluster: ClusterParams {
            efficiency: 0.7,
            blocking: 4,
            max_size: 64,
        },
        ..Default::default()
    };
    let model = Arc::new(TracerAdvection {
        wind: Arc::new(UniformWind(wind)),
    });
    Hierarchy::with_levels(d, model, cfg, vec![l0, l1]).map_err(|e| e.to_string())
}

fn blob_drift(coupling: Coupling) -> Result<f64, String> {
    let mut h = two_level_hierarchy(32, [1.0, 0.5], coupling)?;
    h.set_state(&|x| vec![(-80.0 * ((x[0] - 0.45).powi(2) + (x[1] - 0.5).powi(2))).exp()]);
    let m0 = h.integral(0);
    let dt = h.max_stable_dt(0.8);
    for _ in 0..40 {
        h.step(dt).map_err(|e| e.to_string())?;
    }
    Ok(euler::relative_loss(h.integral(0), m0))
}

fn patch_conservation() -> Result<(bool, String), String> {
    let with = blob_drift(Coupling::TWO_WAY)?;
    let without = blob_drift(Coupling {
        reflux: false,
        average_down: true,
    })?;
    let ok = [with <= 1e-12, without >= 1e-8 && without > with];
    Ok((
        ok[0] && ok[1],
        format!(
            "tracer drift with reflux {with:.2e} [{}], without {without:.2e} [{}]",
            tag(ok[0]),
            tag(ok[1])
        ),
    ))
}

fn poly_average(coef: &[f64], a: f64, b: f64) -> f64 {
    coef.iter()
        .enumerate()
        .map(|(k, c)| {
            c * (b.powi(k as i32 + 1) - a.powi(k as i32 + 1)) / ((k as f64 + 1.0) * (b - a))
        })
        .sum()
}

fn stencil_exactness() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = [0.0f64; 3];
    for _ in 0..1000 {
        let coef: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let face = rng.gen_range(-1.0..1.0);
        let h = rng.gen_range(0.05..0.5);
        let wind = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for (slot, (order, degree)) in [
            (StencilOrder::Second, 1),
            (StencilOrder::Third, 2),
            (StencilOrder::Fourth, 3),
        ]
        .into_iter()
        .enumerate()
        {
            let c = &coef[..=degree];
            let q = [-2.0, -1.0, 0.0, 1.0]
                .map(|s: f64| poly_average(c, face + s * h, face + (s + 1.0) * h));
            let exact: f64 = c
                .iter()
                .enumerate()
                .map(|(k, ck)| ck * face.powi(k as i32))
                .sum();
            let err = (face_interp(q, order, wind) - exact).abs() / (1.0 + exact.abs());
            worst[slot] = worst[slot].max(err);
        }
    }
    let ok = worst.iter().all(|&w| w <= 1e-13);
    (
        ok,
        format!(
            "worst relative error over 1000 random polynomials: order 2 {:.1e}, order 3 {:.1e}, order 4 {:.1e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

// ----- tree backend ------------------------------------------------------------

/// 4×4 periodic roots with one corner refined twice: levels 0, 1 and 2 meet.
fn mixed_forest() -> Result<QuadForest, String> {
    let mut f = QuadForest::planar([0.0, 0.0], [1.0, 1.0], [4, 4], [true, true])
        .map_err(|e| e.to_string())?;
    let c = f
        .find(CellKey {
            tile: 0,
            level: 0,
            i: 1,
            j: 1,
        })
        .ok_or("missing root")?;
    f.refine_cells(&BTreeSet::from([c]), 3);
    let g = f
        .find(CellKey {
            tile: 0,
            level: 1,
            i: 3,
            j: 3,
        })
        .ok_or("missing child")?;
    f.refine_cells(&BTreeSet::from([g]), 3);
    f.check_invariants()?;
    Ok(f)
}

fn solver_config(order: usize, mode: FluxMode) -> SolverConfig {
    SolverConfig {
        order,
        mode,
        rescale: RescaleMode::PerField,
    }
}

fn free_stream() -> Result<(bool, String), String> {
    // Tree, advection in all three flux modes.
    let mut tree_dev = 0.0f64;
    for mode in [FluxMode::Mortar, FluxMode::Pointwise, FluxMode::Linearized] {
        let physics = Physics::Advection {
            wind: Arc::new(UniformWind([0.6, -0.35])),
        };
        let mut s = TreeSolver::new(mixed_forest()?, physics, &solver_config(4, mode))
            .map_err(|e| e.to_string())?;
        s.set_state(&|_| vec![1.75]);
        let dt = s.max_stable_dt(0.8);
        for _ in 0..100 {
            s.step_ssprk3(dt).map_err(|e| e.to_string())?;
        }
        tree_dev = tree_dev.max(s.state.iter().map(|q| (q - 1.75).abs()).fold(0.0, f64::max));
    }
    // Tree, Euler.
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
    let mut s = TreeSolver::new(
        mixed_forest()?,
        physics,
        &solver_config(3, FluxMode::Mortar),
    )
    .map_err(|e| e.to_string())?;
    s.set_state(&|_| q0.to_vec());
    let dt = s.max_stable_dt(0.8);
    for _ in 0..100 {
        s.step_ssprk3(dt).map_err(|e| e.to_string())?;
    }
    let nn = s.nn();
    let euler_dev = s
        .state
        .iter()
        .enumerate()
        .map(|(i, q)| (q - q0[(i / nn) % N_EULER_VARS]).abs())
        .fold(0.0, f64::max);
    // Patch, two levels.
    let mut h = two_level_hierarchy(16, [0.8, -0.3], Coupling::TWO_WAY)?;
    h.set_state(&|_| vec![2.0]);
    let dt = h.max_stable_dt(0.8);
    for _ in 0..100 {
        h.step(dt).map_err(|e| e.to_string())?;
    }
    let mut patch_dev = 0.0f64;
    h.for_each_leaf(|_, _, _, q| patch_dev = patch_dev.max((q[0] - 2.0).abs()));
    let ok = [tree_dev <= 1e-12, euler_dev <= 1e-12, patch_dev <= 1e-12];
    Ok((
        ok.iter().all(|&b| b),
        format!(
            "max deviation after 100 steps: tree advection {tree_dev:.1e} [{}], tree Euler {euler_dev:.1e} [{}], patch {patch_dev:.1e} [{}]",
            tag(ok[0]),
            tag(ok[1]),
            tag(ok[2])
        ),
    ))
}

/// Tendencies of a global polynomial of degree `N`: on a mesh with one
/// refined root (mortar faces) the refined elements must match the same
/// elements of the globally refined conformal mesh.
fn mortar_tendency_mismatch() -> Result<f64, String> {
    let order = 4;
    let wind = Arc::new(UniformWind([0.9, 0.4]));
    let poly =
        |x: Vec3| vec![1.0 + x[0] - 2.0 * x[1] * x[1] + x[0].powi(3) * x[1] - 0.5 * x[1].powi(4)];
    let planar = || {
        QuadForest::planar([0.0, 0.0], [1.0, 1.0], [4, 4], [false, false])
            .map_err(|e| e.to_string())
    };
    let mut conformal = planar()?;
    conformal.refine_uniformly(1);
    let mut mixed = planar()?;
    let id = mixed
        .find(CellKey {
            tile: 0,
            level: 0,
            i: 2,
            j: 1,
        })
        .ok_or("missing root")?;
    mixed.refine_cells(&BTreeSet::from([id]), 1);
    let tendency = |f: QuadForest| -> Result<(TreeSolver, Vec<f64>), String> {
        let physics = Physics::Advection { wind: wind.clone() };
        let mut s = TreeSolver::new(f, physics, &solver_config(order, FluxMode::Mortar))
            .map_err(|e| e.to_string())?;
        s.set_state(&poly);
        let mut out = vec![0.0; s.state.len()];
        let st = s.state.clone();
        s.strong_form_rhs(&st, 0.0, &mut out);
        Ok((s, out))
    };
    let (sc, oc) = tendency(conformal)?;
    let (sm, om) = tendency(mixed)?;
    let nn = sc.nn();
    let scale = oc.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut worst = 0.0f64;
    for (e, &cell) in sm.mesh.elements.iter().enumerate() {
        if sm.forest.cell(cell).level() != 1 {
            continue;
        }
        let other = sc
            .forest
            .find(sm.forest.cell(cell).key)
            .ok_or("missing element")?;
        let ce = sc.mesh.elem_of[&other];
        for k in 0..nn {
            worst = worst.max((om[e * nn + k] - oc[ce * nn + k]).abs());
        }
    }
    Ok(worst / scale)
}

fn transfer_round_trip() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for order in 1..=6 {
        let basis = NodalBasis::new(order).map_err(|e| e.to_string())?;
        let proj = build_projection_set(&basis).map_err(|e| e.to_string())?;
        let n = order + 1;
        let nodes = &basis.nodes;
        // Degree-N polynomial with all mixed terms up to total degree N.
        let f = |x: f64, y: f64| -> f64 {
            let mut s = 0.0;
            for a in 0..=order {
                for b in 0..=order - a {
                    s += (1.0 + a as f64 - 0.5 * b as f64) * x.powi(a as i32) * y.powi(b as i32);
                }
            }
            s
        };
        let mut parent = vec![0.0; 2 * n * n];
        for j in 0..n {
            for i in 0..n {
                parent[i + n * j] = f(nodes[i], nodes[j]);
                parent[n * n + i + n * j] = 1.0 - f(nodes[j], -nodes[i]);
            }
        }
        let children = transfer_refine(&proj, 2, &parent);
        // Children carry the polynomial exactly.
        for (c, child) in children.iter().enumerate() {
            let (ox, oy) = ((c & 1) as f64 - 0.5, (c >> 1) as f64 - 0.5);
            for j in 0..n {
                for i in 0..n {
                    let (x, y) = (0.5 * nodes[i] + ox, 0.5 * nodes[j] + oy);
                    worst = worst.max((child[i + n * j] - f(x, y)).abs() / (1.0 + f(x, y).abs()));
                }
            }
        }
        let back = transfer_coarsen(
            &proj,
            2,
            [&children[0], &children[1], &children[2], &children[3]],
        );
        for (a, b) in back.iter().zip(&parent) {
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        }
    }
    Ok(worst)
}

fn mortar_exactness() -> Result<(bool, String), String> {
    let tend = mortar_tendency_mismatch()?;
    let trip = transfer_round_trip()?;
    let ok = [tend <= 1e-13, trip <= 1e-12];
    Ok((
        ok[0] && ok[1],
        format!(
            "mortar vs conformal tendency mismatch {tend:.1e} (relative to max tendency) [{}]; refine/coarsen round trip {trip:.1e} [{}]",
            tag(ok[0]),
            tag(ok[1])
        ),
    ))
}

/// Area error of the 30×30 cubed sphere and the largest area change under a
/// random refine/coarsen sequence.
fn sphere_areas() -> Result<(f64, f64), String> {
    let r = PhysicalConstants::default().r_earth;
    let mut f = build_cubed_sphere(30, r).map_err(|e| e.to_string())?;
    let exact = 4.0 * PI * r * r;
    let area0 = f.total_leaf_area();
    let area_err = ((area0 - exact) / exact).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for round in 0..12 {
        let leaves: Vec<_> = f.leaves().to_vec();
        if round % 3 == 2 {
            let parents: BTreeSet<_> = leaves
                .iter()
                .filter(|_| rng.gen_bool(0.5))
                .filter_map(|&id| f.cell(id).parent)
                .collect();
            f.coarsen_cells(&parents);
        } else {
            let pick: BTreeSet<_> = leaves.into_iter().filter(|_| rng.gen_bool(0.05)).collect();
            f.refine_cells(&pick, 3);
        }
        worst = worst.max(volume_loss_metric(area0, f.total_leaf_area()));
    }
    Ok((area_err, worst))
}

fn sound_speed() -> (bool, String) {
    let c = PhysicalConstants::default();
    let (t, p) = (300.0, c.p0);
    let rho = p / (c.r_gas * t);
    let a = euler::sound_speed(p, rho, &c);
    (
        (a - 347.3).abs() <= 0.5,
        format!("a = {a:.2} m/s at 300 K (expected 347.3 +/- 0.5)"),
    )
}
