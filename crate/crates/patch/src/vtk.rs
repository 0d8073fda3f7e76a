//! Legacy-format VTK output of the composite grid.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use crate::hierarchy::Hierarchy;

/// Write `<stem>.vtk`: every composite (uncovered) cell as a quad, with its
/// level and all variables as cell data.
pub fn write_hierarchy(
    h: &Hierarchy,
    dir: &Path,
    stem: &str,
    names: &[&str],
) -> io::Result<PathBuf> {
    let nv = h.n_vars();
    let mut corners: Vec<[f64; 2]> = Vec::new();
    let mut levels: Vec<u32> = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); nv];
    h.for_each_leaf(|l, _, x, q| {
        let dx = h.domain.dx(l);
        for (sx, sy) in [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)] {
            corners.push([x[0] + sx * dx[0], x[1] + sy * dx[1]]);
        }
        levels.push(l);
        for v in 0..nv {
            values[v].push(q[v]);
        }
    });
    let n = levels.len();
    let mut s = String::new();
    writeln!(
        s,
        "# vtk DataFile Version 3.0\npatch hierarchy t={}\nASCII\nDATASET UNSTRUCTURED_GRID",
        h.time()
    )
    .ok();
    writeln!(s, "POINTS {} double", corners.len()).ok();
    for c in &corners {
        writeln!(s, "{} {} 0", c[0], c[1]).ok();
    }
    writeln!(s, "CELLS {n} {}", 5 * n).ok();
    for i in 0..n {
        writeln!(s, "4 {} {} {} {}", 4 * i, 4 * i + 1, 4 * i + 2, 4 * i + 3).ok();
    }
    writeln!(s, "CELL_TYPES {n}").ok();
    for _ in 0..n {
        writeln!(s, "9").ok();
    }
    writeln!(
        s,
        "CELL_DATA {n}\nSCALARS level int 1\nLOOKUP_TABLE default"
    )
    .ok();
    for l in &levels {
        writeln!(s, "{l}").ok();
    }
    for (v, vals) in values.iter().enumerate() {
        let name = names.get(v).map_or(format!("q{v}"), |n| n.to_string());
        writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default").ok();
        for x in vals {
            writeln!(s, "{x}").ok();
        }
    }
    let path = dir.join(format!("{stem}.vtk"));
    std::fs::write(&path, s)?;
    Ok(path)
}
