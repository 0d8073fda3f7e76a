use std::fs;

use amrlab_cases::config::Integrator;
use amrlab_cases::{load_config, run_case, Backend, CaseId, ConfigError, RunError, Simulation};

#[test]
fn zero_length_run_writes_initial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_config(CaseId::Swirl, None, None, &[("end_time", "0")]).unwrap();
    let out = run_case(&cfg, Some(dir.path())).unwrap();
    assert_eq!(out.report.steps, 0);
    assert_eq!(out.series.rows.len(), 1);
    assert!(dir.path().join("snap_0.vtk").exists());
    let csv = fs::read_to_string(dir.path().join("diag.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(csv.starts_with("step,time,cells_l0,cells_l1,"));
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("case = swirl"));
    assert!(report.contains("wall_seconds = "));
}

#[test]
fn short_tree_runs_conserve_on_every_case() {
    for (case, extra) in [
        (CaseId::Vortex, vec![("end_time", "0.01"), ("root", "8")]),
        (CaseId::Swirl, vec![("end_time", "0.05")]),
        (
            CaseId::Rrtb,
            vec![("end_time", "0.2"), ("root", "4"), ("max_level", "1")],
        ),
        (
            CaseId::SphereAdvect,
            vec![("end_time", "7200"), ("root", "6")],
        ),
    ] {
        let cfg = load_config(case, None, None, &extra).unwrap();
        let out = run_case(&cfg, None).unwrap();
        assert!(out.report.steps > 0);
        let r = &out.report;
        assert!(
            r.max_mass_loss < 1e-12 && r.max_tracer_loss < 1e-12,
            "{case}: {}",
            r.to_text()
        );
        assert!(matches!(out.sim, Simulation::Tree(_)));
        // Time stamps of the diagnostics rows increase.
        assert!(out.series.rows.windows(2).all(|w| w[1].time > w[0].time));
    }
}

#[test]
fn short_patch_runs_conserve() {
    for (case, extra) in [
        (
            CaseId::Swirl,
            vec![("end_time", "0.05"), ("root", "32"), ("max_level", "1")],
        ),
        (CaseId::Vortex, vec![("end_time", "0.05"), ("root", "48")]),
    ] {
        let cfg = load_config(case, Some(Backend::Patch), None, &extra).unwrap();
        assert_eq!(cfg.integrator, Integrator::Ssprk3);
        let out = run_case(&cfg, None).unwrap();
        let r = &out.report;
        assert!(
            r.max_mass_loss < 1e-12 && r.max_tracer_loss < 1e-12,
            "{case}: {}",
            r.to_text()
        );
        assert!(matches!(out.sim, Simulation::Patch(_)));
    }
}

#[test]
fn config_file_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "# header\nroot = 8\ncolour = blue\n").unwrap();
    let err = load_config(CaseId::Swirl, None, Some(&path), &[]).unwrap_err();
    assert_eq!(
        err,
        ConfigError::UnknownKey {
            key: "colour".into(),
            line: 3
        }
    );
    fs::write(&path, "case = rrtb\n").unwrap();
    assert!(matches!(
        load_config(CaseId::Swirl, None, Some(&path), &[]),
        Err(ConfigError::Inconsistent(_))
    ));
    let missing = dir.path().join("missing.cfg");
    assert!(matches!(
        load_config(CaseId::Swirl, None, Some(&missing), &[]),
        Err(ConfigError::Read { .. })
    ));
}

#[test]
fn inconsistent_settings_are_rejected() {
    type Setup = (CaseId, Option<Backend>, Vec<(&'static str, &'static str)>);
    let cases: [Setup; 4] = [
        (CaseId::SphereAdvect, Some(Backend::Patch), vec![]),
        (CaseId::Rrtb, None, vec![("flux", "linearized")]),
        (
            CaseId::Swirl,
            Some(Backend::Patch),
            vec![("flux", "pointwise")],
        ),
        (
            CaseId::Swirl,
            None,
            vec![("coarsen_below", "0.5"), ("refine_above", "0.1")],
        ),
    ];
    for (case, backend, ov) in cases {
        let err = load_config(case, backend, None, &ov).unwrap_err();
        assert!(matches!(err, ConfigError::Inconsistent(_)), "{case}: {err}");
        assert_eq!(RunError::from(err).exit_code(), 2);
    }
}

#[test]
fn blow_up_is_a_numerical_failure() {
    let cfg = load_config(
        CaseId::Vortex,
        None,
        None,
        &[
            ("root", "4"),
            ("max_level", "0"),
            ("dt", "2"),
            ("end_time", "4000"),
            ("integrator", "forward-euler"),
        ],
    )
    .unwrap();
    let err = run_case(&cfg, None).unwrap_err();
    assert!(matches!(err, RunError::Numerical(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}
