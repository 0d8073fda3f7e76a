//! Driving a case on either backend and collecting its diagnostics.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use amrlab_core::dg::{Background, DgError, Physics, PrescribedWind, SolverConfig, TreeSolver};
use amrlab_core::euler::{self, hydrostatic_background, Integrals, RHO, TRACER};
use amrlab_core::sphere::{build_cubed_sphere, Vec3};
use amrlab_core::tree::QuadForest;
use amrlab_patch::fv::{CompressibleEuler, FvModel, TracerAdvection};
use amrlab_patch::{ClusterParams, Hierarchy, HierarchyConfig, PatchError, ProblemDomain};

use crate::config::{flux_name, Backend, CaseConfig, CaseId, Integrator};
use crate::norms::{l2_error_norm, weighted_rms};
use crate::output::{write_tree_snapshot, DiagRow, DiagnosticsSeries, ErrorReport};
use crate::setups::{
    self, element_indicator, exact_solution, initial_state, point_indicator, SphereWind, SwirlWind,
};
use crate::{ConfigError, RunError};

const SWIRL_PERIOD: f64 = 5.0;

/// A running simulation on one of the two backends.
#[derive(Debug)]
pub enum Simulation {
    Tree(Box<TreeSolver>),
    Patch(Box<Hierarchy>),
}

/// Everything a run produces.
#[derive(Debug)]
pub struct RunOutcome {
    pub config: CaseConfig,
    pub series: DiagnosticsSeries,
    pub report: ErrorReport,
    pub sim: Simulation,
}

fn dg_error(e: DgError) -> RunError {
    match e {
        DgError::NonFinite(_) | DgError::InvertedElement(_) => RunError::Numerical(e.to_string()),
        other => RunError::Config(ConfigError::Inconsistent(other.to_string())),
    }
}

fn patch_error(e: PatchError) -> RunError {
    match e {
        PatchError::Config(msg) => RunError::Config(ConfigError::Inconsistent(msg)),
        other => RunError::Numerical(other.to_string()),
    }
}

pub fn variable_names(case: CaseId) -> &'static [&'static str] {
    if case.is_advection() {
        &["tracer"]
    } else {
        &["rho", "rho_u", "rho_v", "rho_theta", "tracer"]
    }
}

fn wind(cfg: &CaseConfig) -> Arc<dyn PrescribedWind> {
    match cfg.case {
        CaseId::SphereAdvect => Arc::new(SphereWind::new(cfg.constants.r_earth)),
        _ => Arc::new(SwirlWind {
            period: SWIRL_PERIOD,
        }),
    }
}

fn background(cfg: &CaseConfig) -> Result<Background, RunError> {
    Ok(match cfg.case {
        CaseId::Rrtb => {
            let (bg, _) = hydrostatic_background(setups::RRTB_THETA0, &cfg.constants, &[])
                .map_err(|e| RunError::Config(ConfigError::Inconsistent(e.to_string())))?;
            Background::Hydrostatic(bg)
        }
        _ => Background::Uniform {
            rho: 1.0,
            theta_rho: 1.0,
        },
    })
}

/// Forest and physics of a tree-backend run, before any adaptation.
pub fn build_tree_solver(cfg: &CaseConfig) -> Result<TreeSolver, RunError> {
    let forest = if cfg.case == CaseId::SphereAdvect {
        build_cubed_sphere(cfg.root[0], cfg.constants.r_earth)
            .map_err(|e| RunError::Config(ConfigError::Inconsistent(e.to_string())))?
    } else {
        let [x0, x1, y0, y1] = cfg.domain;
        QuadForest::planar([x0, y0], [x1 - x0, y1 - y0], cfg.root, cfg.periodic)
            .map_err(|e| RunError::Config(ConfigError::Inconsistent(e.to_string())))?
    };
    let physics = if cfg.case.is_advection() {
        Physics::Advection { wind: wind(cfg) }
    } else {
        Physics::Euler {
            constants: cfg.constants,
            background: background(cfg)?,
            viscosity: cfg.viscosity,
        }
    };
    let sc = SolverConfig {
        order: cfg.order,
        mode: cfg.flux,
        rescale: cfg.rescale,
    };
    TreeSolver::new(forest, physics, &sc).map_err(dg_error)
}

fn patch_model(cfg: &CaseConfig) -> Result<Arc<dyn FvModel>, RunError> {
    Ok(if cfg.case.is_advection() {
        Arc::new(TracerAdvection { wind: wind(cfg) })
    } else {
        Arc::new(CompressibleEuler {
            constants: cfg.constants,
            background: background(cfg)?,
        })
    })
}

pub fn build_hierarchy(cfg: &CaseConfig) -> Result<Hierarchy, RunError> {
    let [x0, x1, y0, y1] = cfg.domain;
    let domain = ProblemDomain {
        origin: [x0, y0],
        extent: [x1 - x0, y1 - y0],
        cells: [cfg.root[0] as i64, cfg.root[1] as i64],
        periodic: cfg.periodic,
    };
    let hc = HierarchyConfig {
        order: cfg.stencil,
        cluster: ClusterParams {
            efficiency: cfg.efficiency,
            blocking: cfg.blocking,
            max_size: cfg.max_box,
        },
        max_level: cfg.regrid.max_level,
        coupling: cfg.coupling,
        cfl: cfg.cfl.max(1.0),
        ..Default::default()
    };
    Hierarchy::new(domain, patch_model(cfg)?, hc).map_err(patch_error)
}

/// Integrals of mass, energy and tracer plus the covered area.
fn tree_integrals(s: &TreeSolver) -> (Integrals, f64) {
    (s.integrals(), s.mesh_area())
}

fn patch_integrals(h: &Hierarchy, cfg: &CaseConfig) -> Integrals {
    if cfg.case.is_advection() {
        return Integrals {
            mass: 0.0,
            energy: 0.0,
            tracer: h.integral(0),
        };
    }
    let c = cfg.constants;
    let mut energy = 0.0;
    h.for_each_leaf(|l, _, x, q| {
        let q5 = [q[0], q[1], q[2], q[3], q[4]];
        energy += euler::energy_density(&q5, x[1], &c) * h.cell_volume(l);
    });
    Integrals {
        mass: h.integral(RHO),
        energy,
        tracer: h.integral(TRACER),
    }
}

fn loss_row(
    step: usize,
    time: f64,
    cells: Vec<usize>,
    now: Integrals,
    start: Integrals,
    area: (f64, f64),
) -> DiagRow {
    DiagRow {
        step,
        time,
        cells,
        mass_loss: euler::relative_loss(now.mass, start.mass),
        energy_loss: euler::relative_loss(now.energy, start.energy),
        tracer_loss: euler::relative_loss(now.tracer, start.tracer),
        volume_loss: euler::relative_loss(area.0, area.1),
    }
}

/// Tree elements whose indicator exceeds the refinement threshold but which
/// sit below the finest allowed level.
pub fn tree_untracked(s: &TreeSolver, cfg: &CaseConfig) -> usize {
    let nv = s.n_vars();
    (0..s.mesh.n_elements())
        .filter(|&e| {
            let level = s.forest.cell(s.mesh.elements[e]).level();
            level < cfg.regrid.max_level
                && element_indicator(cfg.case, nv, s.element_field(e)) > cfg.regrid.refine_above
        })
        .count()
}

pub fn patch_untracked(h: &Hierarchy, cfg: &CaseConfig) -> usize {
    let mut n = 0;
    h.for_each_leaf(|l, _, _, q| {
        if l < cfg.regrid.max_level && point_indicator(cfg.case, q) > cfg.regrid.refine_above {
            n += 1;
        }
    });
    n
}

/// Steps and step size: a fixed `dt` is shortened so that it divides the
/// end time; otherwise `dt_est` is used the same way.
fn schedule(end_time: f64, dt: f64) -> (usize, f64) {
    if end_time == 0.0 {
        return (0, dt);
    }
    let n = (end_time / dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    (n, end_time / n as f64)
}

fn regrid_interval(cfg: &CaseConfig, n_steps: usize) -> usize {
    if cfg.regrid.interval_steps > 0 {
        cfg.regrid.interval_steps
    } else {
        n_steps
            .checked_div(cfg.regrid_count)
            .map_or(usize::MAX, |k| k.max(1))
    }
}

/// Errors against the exact solution at the current time: the dof-normalised L² norm
/// over all nodal values and the area-weighted RMS.
pub fn tree_errors(s: &TreeSolver, cfg: &CaseConfig) -> Option<(f64, f64)> {
    let nv = s.n_vars();
    let nn = s.nn();
    let mut exact = vec![0.0; s.state.len()];
    for e in 0..s.mesh.n_elements() {
        for k in 0..nn {
            let q = exact_solution(cfg, s.mesh.x[e * nn + k], s.time)?;
            for v in 0..nv {
                exact[(e * nv + v) * nn + k] = q[v];
            }
        }
    }
    let t = s.time;
    let sq = s.integrate_with(&|q: &[f64], x: Vec3| {
        let ex = exact_solution(cfg, x, t).expect("exact solution exists");
        q.iter().zip(&ex).map(|(a, b)| (a - b) * (a - b)).sum()
    });
    Some((
        l2_error_norm(&s.state, &exact),
        weighted_rms(sq, s.mesh_area()),
    ))
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 18.0),
    (0.0, 8.0 / 18.0),
    (0.774_596_669_241_483_4, 5.0 / 18.0),
];

/// Patch errors against cell averages of the exact solution.
pub fn patch_errors(h: &Hierarchy, cfg: &CaseConfig) -> Option<(f64, f64)> {
    let t = h.time();
    exact_solution(cfg, [cfg.domain[0], cfg.domain[2], 0.0], t)?;
    let nv = h.n_vars();
    let (mut got, mut want) = (Vec::new(), Vec::new());
    let (mut sq, mut area) = (0.0, 0.0);
    h.for_each_leaf(|l, _, x0, q| {
        let dx = h.domain.dx(l);
        let mut avg = vec![0.0; nv];
        for (a, wa) in GAUSS3 {
            for (b, wb) in GAUSS3 {
                let ex = exact_solution(
                    cfg,
                    [x0[0] + 0.5 * a * dx[0], x0[1] + 0.5 * b * dx[1], 0.0],
                    t,
                )
                .unwrap();
                for v in 0..nv {
                    avg[v] += wa * wb * ex[v];
                }
            }
        }
        let vol = h.cell_volume(l);
        for v in 0..nv {
            sq += (q[v] - avg[v]).powi(2) * vol;
        }
        area += vol;
        got.extend_from_slice(q);
        want.extend(avg);
    });
    Some((l2_error_norm(&got, &want), weighted_rms(sq, area)))
}

fn snapshot_due(cfg: &CaseConfig, step: usize, last: usize) -> bool {
    step == 0 || step == last || (cfg.snapshot_every > 0 && step.is_multiple_of(cfg.snapshot_every))
}

/// Run `cfg` to its end time. With `out`, writes `diag.csv`,
/// `snap_<step>.vtk` and `report.txt` there.
pub fn run_case(cfg: &CaseConfig, out: Option<&Path>) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    match cfg.backend {
        Backend::Tree => run_tree(cfg, out),
        Backend::Patch => run_patch(cfg, out),
    }
}

fn base_report(cfg: &CaseConfig) -> ErrorReport {
    ErrorReport {
        case: cfg.case.name().into(),
        backend: match cfg.backend {
            Backend::Tree => "tree".into(),
            Backend::Patch => "patch".into(),
        },
        flux: flux_name(cfg.flux).into(),
        ..Default::default()
    }
}

fn finish(
    out: Option<&Path>,
    series: &DiagnosticsSeries,
    report: &mut ErrorReport,
) -> Result<(), RunError> {
    report.max_mass_loss = series.max_of(|r| r.mass_loss);
    report.max_energy_loss = series.max_of(|r| r.energy_loss);
    report.max_tracer_loss = series.max_of(|r| r.tracer_loss);
    report.max_volume_loss = series.max_of(|r| r.volume_loss);
    if let Some(last) = series.rows.last() {
        report.final_mass_loss = last.mass_loss;
        report.final_energy_loss = last.energy_loss;
        report.final_tracer_loss = last.tracer_loss;
        report.final_cells = last.cells.clone();
    }
    if let Some(dir) = out {
        std::fs::write(dir.join("diag.csv"), series.to_csv())?;
        std::fs::write(dir.join("report.txt"), report.to_text())?;
    }
    Ok(())
}

fn run_tree(cfg: &CaseConfig, out: Option<&Path>) -> Result<RunOutcome, RunError> {
    let clock = Instant::now();
    let mut s = build_tree_solver(cfg)?;
    let case = cfg.case;
    let init = |x: Vec3| initial_state(cfg, x);
    // Stable step of the root mesh, scaled to the finest level allowed.
    s.set_state(&init);
    let dt_est = cfg
        .dt
        .unwrap_or_else(|| s.max_stable_dt(cfg.cfl) / f64::from(1u32 << cfg.regrid.max_level));
    let max_level = cfg.regrid.max_level;
    let nv = s.n_vars();
    let indicator = move |field: &[f64], _x: &[Vec3]| element_indicator(case, nv, field);
    let mut report = base_report(cfg);
    if max_level > 0 {
        s.adapt_initial(&cfg.regrid, &indicator, &init, max_level as usize + 1)
            .map_err(dg_error)?;
        report.untracked_cells += tree_untracked(&s, cfg);
    }
    let (n_steps, dt) = schedule(cfg.end_time, dt_est);
    let interval = regrid_interval(cfg, n_steps);
    let levels = max_level.max(s.forest.max_leaf_level());
    let (start, area0) = tree_integrals(&s);
    let mut series = DiagnosticsSeries::default();
    series.push(loss_row(
        0,
        0.0,
        s.forest.leaf_counts_per_level(levels),
        start,
        start,
        (area0, area0),
    ));
    let names = variable_names(case);
    if let Some(dir) = out {
        write_tree_snapshot(&s, dir, "snap_0", names)?;
    }
    for step in 1..=n_steps {
        match cfg.integrator {
            Integrator::Ssprk3 => s.step_ssprk3_cfl(dt, cfg.cfl),
            Integrator::ForwardEuler => s.step_forward_euler_cfl(dt, cfg.cfl),
        }
        .map_err(dg_error)?;
        if max_level > 0 && step % interval == 0 && step < n_steps {
            s.regrid(&cfg.regrid, &indicator).map_err(dg_error)?;
            report.regrids += 1;
            report.untracked_cells += tree_untracked(&s, cfg);
        }
        if step % cfg.diag_every.max(1) == 0 || step == n_steps {
            let (now, area) = tree_integrals(&s);
            series.push(loss_row(
                step,
                s.time,
                s.forest.leaf_counts_per_level(levels),
                now,
                start,
                (area, area0),
            ));
        }
        if let Some(dir) = out {
            if snapshot_due(cfg, step, n_steps) {
                write_tree_snapshot(&s, dir, &format!("snap_{step}"), names)?;
            }
        }
    }
    report.steps = n_steps;
    report.dt = dt;
    report.final_time = s.time;
    report.n_dof = s.state.len();
    report.cfl_warnings = s.diagnostics.cfl_warnings;
    if let Some((l2, rms)) = tree_errors(&s, cfg) {
        report.l2_error = Some(l2);
        report.rms_error = Some(rms);
    }
    report.wall_seconds = clock.elapsed().as_secs_f64();
    finish(out, &series, &mut report)?;
    Ok(RunOutcome {
        config: cfg.clone(),
        series,
        report,
        sim: Simulation::Tree(Box::new(s)),
    })
}

fn patch_cells(h: &Hierarchy, max_level: u32) -> Vec<usize> {
    let mut cells = vec![0; max_level as usize + 1];
    for lv in &h.levels {
        if (lv.level as usize) < cells.len() {
            cells[lv.level as usize] = lv.n_cells() as usize;
        }
    }
    cells
}

fn run_patch(cfg: &CaseConfig, out: Option<&Path>) -> Result<RunOutcome, RunError> {
    let clock = Instant::now();
    let mut h = build_hierarchy(cfg)?;
    let case = cfg.case;
    let init = |x: [f64; 2]| initial_state(cfg, [x[0], x[1], 0.0]);
    h.set_state(&init);
    let indicator = move |q: &[f64], _x: [f64; 2]| point_indicator(case, q);
    let max_level = cfg.regrid.max_level;
    let mut report = base_report(cfg);
    for _ in 0..max_level {
        h.regrid(&cfg.regrid, &indicator).map_err(patch_error)?;
        h.set_state(&init);
    }
    if max_level > 0 {
        report.untracked_cells += patch_untracked(&h, cfg);
    }
    h.diagnostics.regrids = 0;
    let (n_steps, dt) = schedule(
        cfg.end_time,
        cfg.dt.unwrap_or_else(|| h.max_stable_dt(cfg.cfl)),
    );
    let interval = regrid_interval(cfg, n_steps);
    let start = patch_integrals(&h, cfg);
    let mut series = DiagnosticsSeries::default();
    series.push(loss_row(
        0,
        0.0,
        patch_cells(&h, max_level),
        start,
        start,
        (1.0, 1.0),
    ));
    let names = variable_names(case);
    if let Some(dir) = out {
        amrlab_patch::vtk::write_hierarchy(&h, dir, "snap_0", names)?;
    }
    for step in 1..=n_steps {
        h.step(dt).map_err(patch_error)?;
        if max_level > 0 && step % interval == 0 && step < n_steps {
            h.regrid(&cfg.regrid, &indicator).map_err(patch_error)?;
            report.regrids += 1;
            report.untracked_cells += patch_untracked(&h, cfg);
        }
        if step % cfg.diag_every.max(1) == 0 || step == n_steps {
            let now = patch_integrals(&h, cfg);
            series.push(loss_row(
                step,
                h.time(),
                patch_cells(&h, max_level),
                now,
                start,
                (1.0, 1.0),
            ));
        }
        if let Some(dir) = out {
            if snapshot_due(cfg, step, n_steps) {
                amrlab_patch::vtk::write_hierarchy(&h, dir, &format!("snap_{step}"), names)?;
            }
        }
    }
    report.steps = n_steps;
    report.dt = dt;
    report.final_time = h.time();
    let mut n_dof = 0;
    h.for_each_leaf(|_, _, _, q| n_dof += q.len());
    report.n_dof = n_dof;
    report.cfl_warnings = h.diagnostics.cfl_warnings;
    if let Some((l2, rms)) = patch_errors(&h, cfg) {
        report.l2_error = Some(l2);
        report.rms_error = Some(rms);
    }
    report.wall_seconds = clock.elapsed().as_secs_f64();
    finish(out, &series, &mut report)?;
    Ok(RunOutcome {
        config: cfg.clone(),
        series,
        report,
        sim: Simulation::Patch(Box::new(h)),
    })
}
