//! Level hierarchy, ghost filling and the subcycled advance.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use amrlab_core::tree::RegridPolicy;

use crate::cluster::{berger_rigoutsos, ClusterParams};
use crate::fv::FvModel;
use crate::index_box::{pairwise_disjoint, Cell, IndexBox};
use crate::nesting::{enforce_proper_nesting, LevelMask, ProblemDomain};
use crate::stencil::StencilOrder;
use crate::PatchError;

/// One box of cells with a ghost halo.
#[derive(Debug, Clone)]
pub struct Patch {
    pub bx: IndexBox,
    pub ng: i64,
    nv: usize,
    /// `data[(v * gy + jj) * gx + ii]` over the grown box.
    pub data: Vec<f64>,
}

impl Patch {
    fn new(bx: IndexBox, ng: i64, nv: usize) -> Self {
        let g = bx.grow(ng).size();
        Self {
            bx,
            ng,
            nv,
            data: vec![0.0; nv * (g[0] * g[1]) as usize],
        }
    }

    fn grown(&self) -> IndexBox {
        self.bx.grow(self.ng)
    }

    #[inline]
    fn cell_offset(&self, c: Cell) -> usize {
        let g = self.grown();
        let gx = g.hi[0] - g.lo[0] + 1;
        ((c[1] - g.lo[1]) * gx + (c[0] - g.lo[0])) as usize
    }

    #[inline]
    fn stride(&self) -> usize {
        let g = self.grown().size();
        (g[0] * g[1]) as usize
    }

    #[inline]
    pub fn get(&self, v: usize, c: Cell) -> f64 {
        self.data[v * self.stride() + self.cell_offset(c)]
    }

    #[inline]
    pub fn set(&mut self, v: usize, c: Cell, x: f64) {
        let s = self.stride();
        let o = self.cell_offset(c);
        self.data[v * s + o] = x;
    }

    pub fn state(&self, c: Cell, out: &mut [f64]) {
        let (s, o) = (self.stride(), self.cell_offset(c));
        for v in 0..self.nv {
            out[v] = self.data[v * s + o];
        }
    }
}

/// All patches of one refinement level.
#[derive(Debug, Clone)]
pub struct Level {
    pub level: u32,
    pub patches: Vec<Patch>,
    pub time: f64,
    prev: Vec<Vec<f64>>,
    prev_time: f64,
    owner: Vec<i32>,
    n: [i64; 2],
}

impl Level {
    fn new(
        domain: &ProblemDomain,
        level: u32,
        boxes: &[IndexBox],
        ng: i64,
        nv: usize,
        time: f64,
    ) -> Self {
        let n = domain.level_box(level).size();
        let mut owner = vec![-1; (n[0] * n[1]) as usize];
        for (p, b) in boxes.iter().enumerate() {
            for c in b.cells() {
                owner[(c[0] + n[0] * c[1]) as usize] = p as i32;
            }
        }
        let patches: Vec<Patch> = boxes.iter().map(|&b| Patch::new(b, ng, nv)).collect();
        let prev = patches.iter().map(|p| p.data.clone()).collect();
        Self {
            level,
            patches,
            time,
            prev,
            prev_time: time,
            owner,
            n,
        }
    }

    pub fn boxes(&self) -> Vec<IndexBox> {
        self.patches.iter().map(|p| p.bx).collect()
    }

    /// Patch whose valid region holds in-domain cell `c`.
    #[inline]
    pub fn owner_of(&self, c: Cell) -> Option<usize> {
        if c[0] < 0 || c[1] < 0 || c[0] >= self.n[0] || c[1] >= self.n[1] {
            return None;
        }
        let o = self.owner[(c[0] + self.n[0] * c[1]) as usize];
        (o >= 0).then_some(o as usize)
    }

    pub fn n_cells(&self) -> i64 {
        self.patches.iter().map(|p| p.bx.n_cells()).sum()
    }

    fn mark_synchronized(&mut self) {
        self.prev = self.patches.iter().map(|p| p.data.clone()).collect();
        self.prev_time = self.time;
    }
}

/// Fine-minus-coarse flux integrals on one coarse/fine interface, keyed by
/// the uncovered coarse cell and its face (0 = x−, 1 = x+, 2 = y−, 3 = y+).
#[derive(Debug, Clone, Default)]
pub struct FluxRegister {
    entries: BTreeMap<(Cell, u8), Vec<f64>>,
}

impl FluxRegister {
    pub fn add(&mut self, cell: Cell, face: u8, flux: &[f64], scale: f64) {
        let e = self
            .entries
            .entry((cell, face))
            .or_insert_with(|| vec![0.0; flux.len()]);
        for (a, f) in e.iter_mut().zip(flux) {
            *a += scale * f;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(Cell, u8), &Vec<f64>)> {
        self.entries.iter()
    }
}

/// Replace the coarse fluxes recorded in `register` by the accumulated fine
/// fluxes: `q_A −= ±δ / V_A` (sign `+` on high faces).
pub fn reflux(register: &FluxRegister, coarse: &mut Level, cell_volume: f64) {
    for ((cell, face), delta) in register.entries() {
        let Some(p) = coarse.owner_of(*cell) else {
            continue;
        };
        let s = if face % 2 == 1 { -1.0 } else { 1.0 };
        let patch = &mut coarse.patches[p];
        for (v, d) in delta.iter().enumerate() {
            let q = patch.get(v, *cell);
            patch.set(v, *cell, q + s * d / cell_volume);
        }
    }
}

/// Overwrite covered coarse cells by the mean of their four children.
pub fn average_down(fine: &Level, coarse: &mut Level) {
    let nv = fine.patches.first().map_or(0, |p| p.nv);
    for fp in &fine.patches {
        for cc in fp.bx.coarsen(2).cells() {
            let Some(cp) = coarse.owner_of(cc) else {
                continue;
            };
            for v in 0..nv {
                let mut s = 0.0;
                for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let f = [2 * cc[0] + di, 2 * cc[1] + dj];
                    let owner = fine
                        .owner_of(f)
                        .expect("children of a covered cell are on the fine level");
                    s += fine.patches[owner].get(v, f);
                }
                coarse.patches[cp].set(v, cc, 0.25 * s);
            }
        }
    }
}

/// Which synchronisation steps run after fine levels catch up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coupling {
    pub reflux: bool,
    pub average_down: bool,
}

impl Coupling {
    pub const TWO_WAY: Coupling = Coupling {
        reflux: true,
        average_down: true,
    };
    pub const ONE_WAY: Coupling = Coupling {
        reflux: false,
        average_down: false,
    };
}

#[derive(Debug, Clone)]
pub struct HierarchyConfig {
    pub order: StencilOrder,
    pub ghost: i64,
    /// In coarse cells.
    pub nesting_width: i64,
    pub cluster: ClusterParams,
    pub max_level: u32,
    pub coupling: Coupling,
    /// Level-wise CFL bound used for warnings.
    pub cfl: f64,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            order: StencilOrder::Third,
            ghost: 3,
            nesting_width: 2,
            cluster: ClusterParams {
                efficiency: 0.7,
                blocking: 4,
                max_size: 32,
            },
            max_level: 1,
            coupling: Coupling::TWO_WAY,
            cfl: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchDiagnostics {
    pub steps: usize,
    pub cfl_warnings: usize,
    pub regrids: usize,
}

/// Round-robin assignment of boxes to ranks (no cost model).
pub fn round_robin(n_boxes: usize, n_ranks: usize) -> Vec<usize> {
    (0..n_boxes).map(|b| b % n_ranks.max(1)).collect()
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub domain: ProblemDomain,
    pub model: Arc<dyn FvModel>,
    pub config: HierarchyConfig,
    pub levels: Vec<Level>,
    registers: Vec<FluxRegister>,
    pub diagnostics: PatchDiagnostics,
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 18.0),
    (0.0, 8.0 / 18.0),
    (0.774_596_669_241_483_4, 5.0 / 18.0),
];

impl Hierarchy {
    /// Single level covering the domain, chopped at the maximum box size.
    pub fn new(
        domain: ProblemDomain,
        model: Arc<dyn FvModel>,
        config: HierarchyConfig,
    ) -> Result<Self, PatchError> {
        let l0 = domain.level_box(0).chop(
            config.cluster.max_size.max(1),
            config.cluster.blocking.max(1),
        );
        Self::with_levels(domain, model, config, vec![l0])
    }

    /// Explicit box layout. Level 0 must tile the domain; finer levels are
    /// clipped for proper nesting.
    pub fn with_levels(
        domain: ProblemDomain,
        model: Arc<dyn FvModel>,
        config: HierarchyConfig,
        boxes: Vec<Vec<IndexBox>>,
    ) -> Result<Self, PatchError> {
        if config.ghost < 2 {
            return Err(PatchError::Config("ghost width must be at least 2".into()));
        }
        let dom = domain.level_box(0);
        let covered: i64 = boxes[0].iter().map(|b| b.n_cells()).sum();
        if covered != dom.n_cells()
            || !boxes[0].iter().all(|b| dom.contains_box(b))
            || !pairwise_disjoint(&boxes[0])
        {
            return Err(PatchError::Config(
                "level 0 boxes must tile the domain".into(),
            ));
        }
        for lv in &boxes {
            if !pairwise_disjoint(lv) {
                return Err(PatchError::Overlap);
            }
        }
        let boxes = enforce_proper_nesting(
            &domain,
            &boxes,
            config.nesting_width,
            config.cluster.blocking,
            config.cluster.max_size,
        );
        let nv = model.n_vars();
        let levels = boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.is_empty())
            .map(|(l, b)| Level::new(&domain, l as u32, b, config.ghost, nv, 0.0))
            .collect::<Vec<_>>();
        let registers = vec![FluxRegister::default(); levels.len()];
        Ok(Self {
            domain,
            model,
            config,
            levels,
            registers,
            diagnostics: PatchDiagnostics::default(),
        })
    }

    pub fn n_vars(&self) -> usize {
        self.model.n_vars()
    }

    pub fn time(&self) -> f64 {
        self.levels[0].time
    }

    pub fn finest_level(&self) -> u32 {
        self.levels.len() as u32 - 1
    }

    pub fn boxes(&self) -> Vec<Vec<IndexBox>> {
        self.levels.iter().map(|l| l.boxes()).collect()
    }

    pub fn cell_volume(&self, level: u32) -> f64 {
        let dx = self.domain.dx(level);
        dx[0] * dx[1]
    }

    /// Cell averages of `init` (3×3 Gauss rule) on every level.
    pub fn set_state(&mut self, init: &dyn Fn([f64; 2]) -> Vec<f64>) {
        let nv = self.n_vars();
        for lv in &mut self.levels {
            let dx = self.domain.dx(lv.level);
            for p in &mut lv.patches {
                let bx = p.bx;
                for c in bx.cells() {
                    let x0 = self.domain.centre(lv.level, c);
                    let mut acc = vec![0.0; nv];
                    for (a, wa) in GAUSS3 {
                        for (b, wb) in GAUSS3 {
                            let q = init([x0[0] + 0.5 * a * dx[0], x0[1] + 0.5 * b * dx[1]]);
                            for v in 0..nv {
                                acc[v] += wa * wb * q[v];
                            }
                        }
                    }
                    for v in 0..nv {
                        p.set(v, c, acc[v]);
                    }
                }
            }
        }
        self.synchronize_all();
    }

    fn synchronize_all(&mut self) {
        if self.config.coupling.average_down {
            for l in (1..self.levels.len()).rev() {
                let (lo, hi) = self.levels.split_at_mut(l);
                average_down(&hi[0], &mut lo[l - 1]);
            }
        }
        for lv in &mut self.levels {
            lv.mark_synchronized();
        }
    }

    /// Valid cells of level `l` not covered by level `l + 1`.
    pub fn uncovered_mask(&self, l: usize) -> Option<LevelMask> {
        self.levels.get(l + 1).map(|f| {
            let b: Vec<IndexBox> = f.boxes().iter().map(|b| b.coarsen(2)).collect();
            LevelMask::from_boxes(&self.domain, l as u32, &b)
        })
    }

    /// `Σ q_v V` over the composite grid (each point counted on its finest level).
    pub fn integral(&self, v: usize) -> f64 {
        let mut total = 0.0;
        for (l, lv) in self.levels.iter().enumerate() {
            let vol = self.cell_volume(lv.level);
            let covered = self.uncovered_mask(l);
            let mut s = 0.0;
            for p in &lv.patches {
                for c in p.bx.cells() {
                    if covered.as_ref().is_some_and(|m| m.get(c)) {
                        continue;
                    }
                    s += p.get(v, c);
                }
            }
            total += s * vol;
        }
        total
    }

    /// Sum over level 0 only.
    pub fn level0_integral(&self, v: usize) -> f64 {
        let vol = self.cell_volume(0);
        self.levels[0]
            .patches
            .iter()
            .map(|p| p.bx.cells().map(|c| p.get(v, c)).sum::<f64>())
            .sum::<f64>()
            * vol
    }

    /// Composite cells: `(level, cell, centre, state)`.
    pub fn for_each_leaf(&self, mut f: impl FnMut(u32, Cell, [f64; 2], &[f64])) {
        let mut q = vec![0.0; self.n_vars()];
        for (l, lv) in self.levels.iter().enumerate() {
            let covered = self.uncovered_mask(l);
            for p in &lv.patches {
                for c in p.bx.cells() {
                    if covered.as_ref().is_some_and(|m| m.get(c)) {
                        continue;
                    }
                    p.state(c, &mut q);
                    f(lv.level, c, self.domain.centre(lv.level, c), &q);
                }
            }
        }
    }

    // ----- ghost filling ----------------------------------------------------

    /// Reflect a non-periodic out-of-domain index; returns the flipped dirs.
    fn fold(&self, level: u32, c: Cell) -> (Cell, [bool; 2]) {
        let n = self.domain.level_box(level).size();
        let mut c = self.domain.wrap(level, c);
        let mut flip = [false; 2];
        for d in 0..2 {
            if c[d] < 0 {
                c[d] = -1 - c[d];
                flip[d] = true;
            } else if c[d] >= n[d] {
                c[d] = 2 * n[d] - 1 - c[d];
                flip[d] = true;
            }
        }
        (c, flip)
    }

    fn apply_flips(&self, flip: [bool; 2], out: &mut [f64]) {
        for d in 0..2 {
            if flip[d] {
                if let Some(v) = self.model.normal_momentum(d) {
                    out[v] = -out[v];
                }
            }
        }
    }

    /// Level-`l` valid value at time `t` (linear in time between the last
    /// two synchronised states), through periodic wrap and wall mirroring.
    fn coarse_value(&self, l: usize, c: Cell, t: f64, out: &mut [f64]) -> bool {
        let (c, flip) = self.fold(self.levels[l].level, c);
        let lv = &self.levels[l];
        let Some(p) = lv.owner_of(c) else {
            return false;
        };
        let patch = &lv.patches[p];
        let (s, o) = (patch.stride(), patch.cell_offset(c));
        let span = lv.time - lv.prev_time;
        let a = if span > 0.0 {
            ((t - lv.prev_time) / span).clamp(0.0, 1.0)
        } else {
            1.0
        };
        for v in 0..patch.nv {
            let now = patch.data[v * s + o];
            out[v] = if a == 1.0 {
                now
            } else {
                (1.0 - a) * lv.prev[p][v * s + o] + a * now
            };
        }
        self.apply_flips(flip, out);
        true
    }

    /// Conservative piecewise-bilinear value of fine cell `c` (level `l`)
    /// from level `l − 1`, with van Leer limited slopes.
    fn interpolate_from_coarse(
        &self,
        l: usize,
        c: Cell,
        t: f64,
        out: &mut [f64],
    ) -> Result<(), PatchError> {
        let nv = self.n_vars();
        let cc = [c[0].div_euclid(2), c[1].div_euclid(2)];
        if !self.coarse_value(l - 1, cc, t, out) {
            return Err(PatchError::NestingViolation {
                level: l as u32,
                cell: c,
            });
        }
        let mut lo = vec![0.0; nv];
        let mut hi = vec![0.0; nv];
        let mut slopes = [vec![0.0; nv], vec![0.0; nv]];
        for d in 0..2 {
            let mut m = cc;
            m[d] -= 1;
            let mut p = cc;
            p[d] += 1;
            if self.coarse_value(l - 1, m, t, &mut lo) && self.coarse_value(l - 1, p, t, &mut hi) {
                for v in 0..nv {
                    slopes[d][v] = van_leer(out[v] - lo[v], hi[v] - out[v]);
                }
            }
        }
        let off = [
            if c[0].rem_euclid(2) == 0 { -0.25 } else { 0.25 },
            if c[1].rem_euclid(2) == 0 { -0.25 } else { 0.25 },
        ];
        for v in 0..nv {
            out[v] += off[0] * slopes[0][v] + off[1] * slopes[1][v];
        }
        Ok(())
    }

    /// Ghost value of level-`l` cell `c`: same-level copy, else coarse
    /// interpolation, else the domain boundary rule.
    fn ghost_value(&self, l: usize, c: Cell, t: f64, out: &mut [f64]) -> Result<(), PatchError> {
        let lv = &self.levels[l];
        let (f, flip) = self.fold(lv.level, c);
        if let Some(p) = lv.owner_of(f) {
            lv.patches[p].state(f, out);
        } else if l > 0 {
            self.interpolate_from_coarse(l, f, t, out)?;
        } else {
            return Err(PatchError::Uncovered { level: 0, cell: c });
        }
        self.apply_flips(flip, out);
        Ok(())
    }

    /// Fill the halos of every patch on level `l` for time `t`.
    pub fn fill_ghost_cells(&mut self, l: usize, t: f64) -> Result<(), PatchError> {
        let nv = self.n_vars();
        let mut writes: Vec<(usize, Cell, Vec<f64>)> = Vec::new();
        for (pi, p) in self.levels[l].patches.iter().enumerate() {
            for c in p.grown().cells() {
                if p.bx.contains(c) {
                    continue;
                }
                let mut q = vec![0.0; nv];
                self.ghost_value(l, c, t, &mut q)?;
                writes.push((pi, c, q));
            }
        }
        let lv = &mut self.levels[l];
        for (pi, c, q) in writes {
            for (v, x) in q.into_iter().enumerate() {
                lv.patches[pi].set(v, c, x);
            }
        }
        Ok(())
    }

    // ----- time stepping ------------------------------------------------------

    /// Largest level-0 step such that every level meets the CFL bound.
    pub fn max_stable_dt(&self, cfl: f64) -> f64 {
        let mut q = vec![0.0; self.n_vars()];
        let mut dt0 = f64::INFINITY;
        for lv in &self.levels {
            let dx = self.domain.dx(lv.level);
            let mut rate: f64 = 0.0;
            for p in &lv.patches {
                for c in p.bx.cells() {
                    p.state(c, &mut q);
                    let x = self.domain.centre(lv.level, c);
                    let r: f64 = (0..2)
                        .map(|d| self.model.max_speed(&q, x, lv.time, d) / dx[d])
                        .sum();
                    rate = rate.max(r);
                }
            }
            if rate > 0.0 {
                dt0 = dt0.min(cfl / rate * (1u64 << lv.level) as f64);
            }
        }
        dt0
    }

    /// Stage tendency of every patch on level `l`; face fluxes on
    /// coarse/fine interfaces go into the registers with weight `w`.
    fn level_rhs(&self, l: usize, t: f64, w: f64, regs: &mut [FluxRegister], k: &mut [Vec<f64>]) {
        let lv = &self.levels[l];
        let nv = self.n_vars();
        let np = self.model.n_prim();
        let dx = self.domain.dx(lv.level);
        let order = self.config.order;
        let finer = self.uncovered_mask(l);
        let n_dom = self.domain.level_box(lv.level).size();
        let in_domain = |c: Cell| (0..2).all(|d| (0..n_dom[d]).contains(&c[d]));
        let mut flux = vec![0.0; nv];
        let mut q = vec![0.0; nv];
        for (pi, p) in lv.patches.iter().enumerate() {
            let g = p.grown();
            let gs = g.size();
            let mut prim = vec![0.0; np * (gs[0] * gs[1]) as usize];
            for c in g.cells() {
                p.state(c, &mut q);
                let o = p.cell_offset(c);
                self.model.primitives(
                    &q,
                    self.domain.centre(lv.level, c),
                    &mut prim[o * np..(o + 1) * np],
                );
            }
            let kp = &mut k[pi];
            kp.iter_mut().for_each(|x| *x = 0.0);
            let vs = p.bx.n_cells() as usize;
            let valid =
                |c: Cell| ((c[1] - p.bx.lo[1]) * p.bx.size()[0] + (c[0] - p.bx.lo[0])) as usize;
            for dir in 0..2 {
                let other = 1 - dir;
                let length = dx[other];
                for a in p.bx.lo[other]..=p.bx.hi[other] {
                    for m in p.bx.lo[dir]..=p.bx.hi[dir] + 1 {
                        let cell = |s: i64| {
                            let mut c = [0; 2];
                            c[dir] = m + s;
                            c[other] = a;
                            c
                        };
                        let st = [-2, -1, 0, 1].map(|s| {
                            let o = p.cell_offset(cell(s));
                            &prim[o * np..(o + 1) * np]
                        });
                        let mut x = self.domain.centre(lv.level, cell(0));
                        x[dir] -= 0.5 * dx[dir];
                        self.model.face_flux(dir, st, x, t, order, &mut flux);
                        let (left, right) = (cell(-1), cell(0));
                        if m > p.bx.lo[dir] {
                            let i = valid(left);
                            for v in 0..nv {
                                kp[v * vs + i] -= flux[v] / dx[dir];
                            }
                        }
                        if m <= p.bx.hi[dir] {
                            let i = valid(right);
                            for v in 0..nv {
                                kp[v * vs + i] += flux[v] / dx[dir];
                            }
                        }
                        // Fine side of an interface with level l − 1.
                        if l > 0 && (m == p.bx.lo[dir] || m == p.bx.hi[dir] + 1) {
                            let outside = if m == p.bx.lo[dir] { left } else { right };
                            let o = self.domain.wrap(lv.level, outside);
                            if in_domain(o) && lv.owner_of(o).is_none() {
                                let cc = [o[0].div_euclid(2), o[1].div_euclid(2)];
                                let face = 2 * dir as u8 + u8::from(m == p.bx.lo[dir]);
                                regs[l].add(cc, face, &flux, w * length);
                            }
                        }
                        // Coarse side of an interface with level l + 1.
                        if let Some(mask) = &finer {
                            let (lw, rw) = (
                                self.domain.wrap(lv.level, left),
                                self.domain.wrap(lv.level, right),
                            );
                            if in_domain(lw) && in_domain(rw) {
                                let (cl, cr) = (mask.get(lw), mask.get(rw));
                                if cl && !cr && m <= p.bx.hi[dir] {
                                    regs[l + 1].add(rw, 2 * dir as u8, &flux, -w * length);
                                } else if cr && !cl && m > p.bx.lo[dir] {
                                    regs[l + 1].add(lw, 2 * dir as u8 + 1, &flux, -w * length);
                                }
                            }
                        }
                    }
                }
            }
            if self.model.has_source() {
                let mut s = vec![0.0; nv];
                for c in p.bx.cells() {
                    p.state(c, &mut q);
                    s.iter_mut().for_each(|x| *x = 0.0);
                    self.model
                        .source(&q, self.domain.centre(lv.level, c), &mut s);
                    let i = valid(c);
                    for v in 0..nv {
                        kp[v * vs + i] += s[v];
                    }
                }
            }
        }
    }

    /// Set the valid cells of level `l` to `base + Σ c_i k_i`.
    fn combine(&mut self, l: usize, base: &[Vec<f64>], terms: &[(f64, &[Vec<f64>])]) {
        let nv = self.n_vars();
        for (pi, p) in self.levels[l].patches.iter_mut().enumerate() {
            let vs = p.bx.n_cells() as usize;
            let nx = p.bx.size()[0];
            let (s, lo) = (p.stride(), p.bx.lo);
            let cells: Vec<Cell> = p.bx.cells().collect();
            for c in cells {
                let i = ((c[1] - lo[1]) * nx + (c[0] - lo[0])) as usize;
                let o = p.cell_offset(c);
                for v in 0..nv {
                    let mut x = base[pi][v * s + o];
                    for (coef, k) in terms {
                        x += coef * k[pi][v * vs + i];
                    }
                    p.data[v * s + o] = x;
                }
            }
        }
    }

    /// One SSP-RK3 step of level `l`, then (recursively) two half steps of
    /// each finer level and the synchronisation.
    fn advance_level(&mut self, l: usize, dt: f64) -> Result<(), PatchError> {
        if dt > self.level_stable_dt(l) {
            self.diagnostics.cfl_warnings += 1;
        }
        let t0 = self.levels[l].time;
        {
            let lv = &mut self.levels[l];
            lv.prev = lv.patches.iter().map(|p| p.data.clone()).collect();
            lv.prev_time = t0;
        }
        let base = self.levels[l].prev.clone();
        let sizes: Vec<usize> = self.levels[l]
            .patches
            .iter()
            .map(|p| self.n_vars() * p.bx.n_cells() as usize)
            .collect();
        let mut k1: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
        let mut k2 = k1.clone();
        let mut k3 = k1.clone();
        let mut regs = std::mem::take(&mut self.registers);

        self.fill_ghost_cells(l, t0)?;
        self.level_rhs(l, t0, dt / 6.0, &mut regs, &mut k1);
        self.combine(l, &base, &[(dt, &k1)]);
        self.fill_ghost_cells(l, t0 + dt)?;
        self.level_rhs(l, t0 + dt, dt / 6.0, &mut regs, &mut k2);
        self.combine(l, &base, &[(0.25 * dt, &k1), (0.25 * dt, &k2)]);
        self.fill_ghost_cells(l, t0 + 0.5 * dt)?;
        self.level_rhs(l, t0 + 0.5 * dt, 2.0 * dt / 3.0, &mut regs, &mut k3);
        self.combine(
            l,
            &base,
            &[(dt / 6.0, &k1), (dt / 6.0, &k2), (2.0 * dt / 3.0, &k3)],
        );
        self.registers = regs;
        self.levels[l].time = t0 + dt;

        if l + 1 < self.levels.len() {
            self.advance_level(l + 1, 0.5 * dt)?;
            self.advance_level(l + 1, 0.5 * dt)?;
            let coupling = self.config.coupling;
            let vol = self.cell_volume(self.levels[l].level);
            let (lo, hi) = self.levels.split_at_mut(l + 1);
            if coupling.average_down {
                average_down(&hi[0], &mut lo[l]);
            }
            if coupling.reflux {
                reflux(&self.registers[l + 1], &mut lo[l], vol);
            }
            self.registers[l + 1].clear();
        }
        Ok(())
    }

    fn level_stable_dt(&self, l: usize) -> f64 {
        let lv = &self.levels[l];
        let dx = self.domain.dx(lv.level);
        let mut q = vec![0.0; self.n_vars()];
        let mut rate: f64 = 0.0;
        for p in &lv.patches {
            for c in p.bx.cells() {
                p.state(c, &mut q);
                let x = self.domain.centre(lv.level, c);
                rate = rate.max(
                    (0..2)
                        .map(|d| self.model.max_speed(&q, x, lv.time, d) / dx[d])
                        .sum(),
                );
            }
        }
        if rate > 0.0 {
            self.config.cfl / rate
        } else {
            f64::INFINITY
        }
    }

    /// Advance the whole hierarchy by the level-0 step `dt0`.
    pub fn step(&mut self, dt0: f64) -> Result<(), PatchError> {
        self.advance_level(0, dt0)?;
        for lv in &mut self.levels {
            lv.mark_synchronized();
        }
        self.diagnostics.steps += 1;
        let t = self.time();
        for lv in &self.levels {
            for p in &lv.patches {
                if p.bx
                    .cells()
                    .any(|c| (0..p.nv).any(|v| !p.get(v, c).is_finite()))
                {
                    return Err(PatchError::NonFinite(t));
                }
            }
        }
        Ok(())
    }

    // ----- regridding ---------------------------------------------------------

    /// Level-`l` cells whose indicator exceeds the threshold, dilated by
    /// `buffer` cells in every direction (Chebyshev distance).
    pub fn tag_cells(
        &self,
        l: usize,
        indicator: &dyn Fn(&[f64], [f64; 2]) -> f64,
        threshold: f64,
        buffer: i64,
    ) -> Vec<Cell> {
        let lv = &self.levels[l];
        let n = self.domain.level_box(lv.level).size();
        let mut q = vec![0.0; self.n_vars()];
        let mut tags = BTreeSet::new();
        for p in &lv.patches {
            for c in p.bx.cells() {
                p.state(c, &mut q);
                if indicator(&q, self.domain.centre(lv.level, c)) > threshold {
                    for dj in -buffer..=buffer {
                        for di in -buffer..=buffer {
                            let w = self.domain.wrap(lv.level, [c[0] + di, c[1] + dj]);
                            if (0..2).all(|d| (0..n[d]).contains(&w[d])) {
                                tags.insert(w);
                            }
                        }
                    }
                }
            }
        }
        tags.into_iter().collect()
    }

    /// Rebuild levels 1.. from tags, level by level from the coarsest.
    /// Data on surviving fine cells is kept; new fine cells are filled by
    /// conservative interpolation.
    pub fn regrid(
        &mut self,
        policy: &RegridPolicy,
        indicator: &dyn Fn(&[f64], [f64; 2]) -> f64,
    ) -> Result<(), PatchError> {
        let max_level = policy.max_level.min(self.config.max_level) as usize;
        let old = std::mem::take(&mut self.levels);
        let nv = self.n_vars();
        let time = old[0].time;
        self.levels.push(old[0].clone());
        let cp = self.config.cluster;
        let coarse_params = cp.coarsened();
        for l in 0..max_level {
            let tags = self.tag_cells(
                l,
                indicator,
                policy.refine_above,
                policy.buffer_cells as i64,
            );
            if tags.is_empty() {
                break;
            }
            let fine: Vec<IndexBox> = berger_rigoutsos(&tags, l as u32, &coarse_params)
                .into_iter()
                .flat_map(|b| b.refine(2).chop(cp.max_size, cp.blocking))
                .collect();
            let mut layout = self.boxes();
            layout.push(fine);
            let nested = enforce_proper_nesting(
                &self.domain,
                &layout,
                self.config.nesting_width,
                cp.blocking,
                cp.max_size,
            );
            let boxes = nested[l + 1].clone();
            if boxes.is_empty() {
                break;
            }
            let mut lv = Level::new(
                &self.domain,
                l as u32 + 1,
                &boxes,
                self.config.ghost,
                nv,
                time,
            );
            let mut q = vec![0.0; nv];
            let mut values: Vec<Vec<(Cell, Vec<f64>)>> = Vec::new();
            for p in &lv.patches {
                let mut vals = Vec::new();
                for c in p.bx.cells() {
                    if let Some(op) = old
                        .get(l + 1)
                        .and_then(|o| o.owner_of(c).map(|i| &o.patches[i]))
                    {
                        op.state(c, &mut q);
                    } else {
                        self.interpolate_from_coarse(l + 1, c, time, &mut q)?;
                    }
                    vals.push((c, q.clone()));
                }
                values.push(vals);
            }
            for (p, vals) in lv.patches.iter_mut().zip(values) {
                for (c, q) in vals {
                    for v in 0..nv {
                        p.set(v, c, q[v]);
                    }
                }
            }
            lv.mark_synchronized();
            self.levels.push(lv);
        }
        self.registers = vec![FluxRegister::default(); self.levels.len()];
        self.synchronize_all();
        self.diagnostics.regrids += 1;
        Ok(())
    }
}

#[inline]
fn van_leer(a: f64, b: f64) -> f64 {
    if a * b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}
