//! Diagnostics series, snapshots and the summary report.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use amrlab_core::dg::TreeSolver;

/// One row of `diag.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagRow {
    pub step: usize,
    pub time: f64,
    /// Active cells per level.
    pub cells: Vec<usize>,
    pub mass_loss: f64,
    pub energy_loss: f64,
    pub tracer_loss: f64,
    pub volume_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsSeries {
    pub rows: Vec<DiagRow>,
}

impl DiagnosticsSeries {
    /// Append a row; time must strictly increase.
    pub fn push(&mut self, row: DiagRow) {
        if let Some(last) = self.rows.last() {
            assert!(row.time > last.time, "diagnostics time must increase");
        }
        self.rows.push(row);
    }

    pub fn n_levels(&self) -> usize {
        self.rows.iter().map(|r| r.cells.len()).max().unwrap_or(1)
    }

    pub fn max_of(&self, f: impl Fn(&DiagRow) -> f64) -> f64 {
        self.rows.iter().map(f).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let k = self.n_levels();
        let mut s = String::from("step,time");
        for l in 0..k {
            write!(s, ",cells_l{l}").ok();
        }
        s.push_str(",mass_loss,energy_loss,tracer_loss,volume_loss\n");
        for r in &self.rows {
            write!(s, "{},{:e}", r.step, r.time).ok();
            for l in 0..k {
                write!(s, ",{}", r.cells.get(l).copied().unwrap_or(0)).ok();
            }
            writeln!(
                s,
                ",{:e},{:e},{:e},{:e}",
                r.mass_loss, r.energy_loss, r.tracer_loss, r.volume_loss
            )
            .ok();
        }
        s
    }
}

/// Legacy VTK unstructured grid of a dG solution: every element is split
/// into `N × N` quads through its nodes, with all variables as point data.
pub fn write_tree_snapshot(
    s: &TreeSolver,
    dir: &Path,
    stem: &str,
    names: &[&str],
) -> io::Result<PathBuf> {
    let n = s.mesh.n;
    let nn = n * n;
    let ne = s.mesh.n_elements();
    let nv = s.n_vars();
    let mut out = String::new();
    writeln!(
        out,
        "# vtk DataFile Version 3.0\ndG solution t={}\nASCII\nDATASET UNSTRUCTURED_GRID",
        s.time
    )
    .ok();
    writeln!(out, "POINTS {} double", ne * nn).ok();
    for x in &s.mesh.x {
        writeln!(out, "{} {} {}", x[0], x[1], x[2]).ok();
    }
    let quads = ne * (n - 1) * (n - 1);
    writeln!(out, "CELLS {quads} {}", 5 * quads).ok();
    for e in 0..ne {
        let b = e * nn;
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let k = b + i + n * j;
                writeln!(out, "4 {} {} {} {}", k, k + 1, k + 1 + n, k + n).ok();
            }
        }
    }
    writeln!(out, "CELL_TYPES {quads}").ok();
    for _ in 0..quads {
        writeln!(out, "9").ok();
    }
    writeln!(
        out,
        "CELL_DATA {quads}\nSCALARS level int 1\nLOOKUP_TABLE default"
    )
    .ok();
    for e in 0..ne {
        let l = s.forest.cell(s.mesh.elements[e]).level();
        for _ in 0..(n - 1) * (n - 1) {
            writeln!(out, "{l}").ok();
        }
    }
    writeln!(out, "POINT_DATA {}", ne * nn).ok();
    for v in 0..nv {
        let name = names.get(v).map_or(format!("q{v}"), |n| n.to_string());
        writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default").ok();
        for e in 0..ne {
            for k in 0..nn {
                writeln!(out, "{}", s.state[(e * nv + v) * nn + k]).ok();
            }
        }
    }
    let path = dir.join(format!("{stem}.vtk"));
    std::fs::write(&path, out)?;
    Ok(path)
}

/// Final summary of a run, written as `key = value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorReport {
    pub case: String,
    pub backend: String,
    pub flux: String,
    pub steps: usize,
    pub dt: f64,
    pub final_time: f64,
    pub regrids: usize,
    pub n_dof: usize,
    /// L² error normalised by the number of degrees of freedom, when an exact solution exists.
    pub l2_error: Option<f64>,
    /// Area-weighted RMS error, when an exact solution exists.
    pub rms_error: Option<f64>,
    pub max_mass_loss: f64,
    pub max_energy_loss: f64,
    pub max_tracer_loss: f64,
    pub max_volume_loss: f64,
    pub final_mass_loss: f64,
    pub final_energy_loss: f64,
    pub final_tracer_loss: f64,
    pub cfl_warnings: usize,
    /// Cells above the refinement threshold that were not on the finest
    /// allowed level right after a regrid, summed over all regrids.
    pub untracked_cells: usize,
    pub final_cells: Vec<usize>,
    pub wall_seconds: f64,
}

impl ErrorReport {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:e}"));
        let mut s = String::new();
        writeln!(s, "case = {}", self.case).ok();
        writeln!(s, "backend = {}", self.backend).ok();
        writeln!(s, "flux = {}", self.flux).ok();
        writeln!(s, "steps = {}", self.steps).ok();
        writeln!(s, "dt = {:e}", self.dt).ok();
        writeln!(s, "final_time = {:e}", self.final_time).ok();
        writeln!(s, "regrids = {}", self.regrids).ok();
        writeln!(s, "n_dof = {}", self.n_dof).ok();
        writeln!(s, "l2_error = {}", opt(self.l2_error)).ok();
        writeln!(s, "rms_error = {}", opt(self.rms_error)).ok();
        writeln!(s, "max_mass_loss = {:e}", self.max_mass_loss).ok();
        writeln!(s, "max_energy_loss = {:e}", self.max_energy_loss).ok();
        writeln!(s, "max_tracer_loss = {:e}", self.max_tracer_loss).ok();
        writeln!(s, "max_volume_loss = {:e}", self.max_volume_loss).ok();
        writeln!(s, "final_mass_loss = {:e}", self.final_mass_loss).ok();
        writeln!(s, "final_energy_loss = {:e}", self.final_energy_loss).ok();
        writeln!(s, "final_tracer_loss = {:e}", self.final_tracer_loss).ok();
        writeln!(s, "cfl_warnings = {}", self.cfl_warnings).ok();
        writeln!(s, "untracked_cells = {}", self.untracked_cells).ok();
        let cells: Vec<String> = self.final_cells.iter().map(|c| c.to_string()).collect();
        writeln!(s, "final_cells = {}", cells.join(",")).ok();
        writeln!(s, "wall_seconds = {:.3}", self.wall_seconds).ok();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_padding() {
        let mut d = DiagnosticsSeries::default();
        let row = |step, time, cells: Vec<usize>| DiagRow {
            step,
            time,
            cells,
            mass_loss: 0.0,
            energy_loss: 0.0,
            tracer_loss: 0.0,
            volume_loss: 0.0,
        };
        d.push(row(0, 0.0, vec![4]));
        d.push(row(5, 0.5, vec![4, 8]));
        let csv = d.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "step,time,cells_l0,cells_l1,mass_loss,energy_loss,tracer_loss,volume_loss"
        );
        assert_eq!(lines[1], "0,0e0,4,0,0e0,0e0,0e0,0e0");
        assert!(!csv.contains('\r'));
    }

    #[test]
    #[should_panic]
    fn time_must_increase() {
        let mut d = DiagnosticsSeries::default();
        let r = DiagRow {
            step: 0,
            time: 1.0,
            cells: vec![],
            mass_loss: 0.0,
            energy_loss: 0.0,
            tracer_loss: 0.0,
            volume_loss: 0.0,
        };
        d.push(r.clone());
        d.push(r);
    }
}
