//! Quad-tree forest over a structured root mesh.
//!
//! Cells live in an arena indexed by [`CellId`]; ancestors are kept (as
//! non-leaves) so that coarsening re-activates the original parent. Every
//! cell has a locational [`CellKey`] `(tile, level, i, j)`.
//!
//! Face connectivity is rebuilt after each mutation by hashing edges on an
//! integer super-lattice: each corner maps to an exact integer point (wrapped
//! for periodic boxes, a point on the cube surface for the sphere), so shared
//! edges are found without floating-point comparisons and tile seams need no
//! special cases.

use std::collections::hash_map::Entry;
use std::collections::{BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::sphere::{self, Vec3, TILE_FRAMES};

pub type CellId = usize;

/// Finest lattice level; cells may be refined up to `LATTICE_LEVEL - 1`.
pub const LATTICE_LEVEL: u32 = 24;

/// Local face index → (start corner, end corner) in the face parameter direction.
///
/// Corners are numbered counterclockwise: 0 = (ξ−, η−), 1 = (ξ+, η−),
/// 2 = (ξ+, η+), 3 = (ξ−, η+). Faces: 0 = ξ−, 1 = ξ+, 2 = η−, 3 = η+.
pub const FACE_CORNERS: [[usize; 2]; 4] = [[0, 3], [1, 2], [0, 1], [3, 2]];

/// Faces of the parent touched by each child (child order: 0 = (ξ−, η−),
/// 1 = (ξ+, η−), 2 = (ξ−, η+), 3 = (ξ+, η+)).
pub const CHILD_OUTER_FACES: [[usize; 2]; 4] = [[0, 2], [1, 2], [0, 3], [1, 3]];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("root mesh needs at least one cell per direction")]
    EmptyRootMesh,
    #[error("periodic direction {0} needs at least two root cells")]
    PeriodicTooSmall(usize),
    #[error("unknown cell {0}")]
    UnknownCell(CellId),
    #[error("cell {0} is not an active leaf")]
    NotALeaf(CellId),
    #[error("max level {0} exceeds the lattice depth")]
    LevelTooDeep(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub tile: u8,
    pub level: u8,
    pub i: u32,
    pub j: u32,
}

impl CellKey {
    pub fn parent(self) -> Option<CellKey> {
        (self.level > 0).then(|| CellKey {
            tile: self.tile,
            level: self.level - 1,
            i: self.i / 2,
            j: self.j / 2,
        })
    }

    pub fn child(self, c: usize) -> CellKey {
        CellKey {
            tile: self.tile,
            level: self.level + 1,
            i: 2 * self.i + (c & 1) as u32,
            j: 2 * self.j + (c >> 1) as u32,
        }
    }

    /// Interleaved bits of `(i, j)` scaled to the lattice depth, for ordering.
    fn morton(self) -> u64 {
        let shift = LATTICE_LEVEL - self.level as u32;
        let (i, j) = ((self.i as u64) << shift, (self.j as u64) << shift);
        let mut m = 0u64;
        for b in 0..32 {
            m |= ((i >> b) & 1) << (2 * b);
            m |= ((j >> b) & 1) << (2 * b + 1);
        }
        m
    }
}

/// Root-mesh geometry.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    /// Axis-aligned rectangle split into `roots[0] × roots[1]` cells.
    Planar {
        origin: [f64; 2],
        extent: [f64; 2],
        roots: [u32; 2],
        periodic: [bool; 2],
    },
    /// Six tiles of `n × n` cells on a sphere of the given radius.
    CubedSphere { n: u32, radius: f64 },
}

impl Domain {
    pub fn is_sphere(&self) -> bool {
        matches!(self, Domain::CubedSphere { .. })
    }

    fn n_tiles(&self) -> u8 {
        match self {
            Domain::Planar { .. } => 1,
            Domain::CubedSphere { .. } => 6,
        }
    }

    fn roots(&self) -> [u32; 2] {
        match self {
            Domain::Planar { roots, .. } => *roots,
            Domain::CubedSphere { n, .. } => [*n, *n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub id: CellId,
    pub key: CellKey,
    pub parent: Option<CellId>,
    pub children: Option<[CellId; 4]>,
    /// Counterclockwise corners (see [`FACE_CORNERS`]).
    pub corner_coords: [Vec3; 4],
    alive: bool,
}

impl Cell {
    #[inline]
    pub fn level(&self) -> u32 {
        self.key.level as u32
    }

    #[inline]
    pub fn tree_root(&self) -> (u8, u32, u32) {
        let s = self.key.level as u32;
        (self.key.tile, self.key.i >> s, self.key.j >> s)
    }

    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// One side of a face: a cell, its local face index, and whether its face
/// parameter runs opposite to the link's reference direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceSide {
    pub cell: CellId,
    pub face: u8,
    pub flipped: bool,
}

impl FaceSide {
    /// Axis (0 = ξ, 1 = η) and side (0 = low, 1 = high) of the local face.
    pub fn orientation(&self) -> (usize, usize) {
        (self.face as usize / 2, self.face as usize % 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceKind {
    Conformal,
    NonConformal2to1,
    Boundary,
}

/// Face connectivity. The reference parameter direction is the first side's
/// own face parameter (so `left.flipped` and `coarse.flipped` are always false).
#[derive(Debug, Clone, PartialEq)]
pub enum FaceLink {
    Conformal {
        left: FaceSide,
        right: FaceSide,
    },
    /// `fine[0]` covers the low half of the coarse face parameter.
    NonConformal {
        coarse: FaceSide,
        fine: [FaceSide; 2],
    },
    Boundary {
        side: FaceSide,
    },
}

impl FaceLink {
    pub fn kind(&self) -> FaceKind {
        match self {
            FaceLink::Conformal { .. } => FaceKind::Conformal,
            FaceLink::NonConformal { .. } => FaceKind::NonConformal2to1,
            FaceLink::Boundary { .. } => FaceKind::Boundary,
        }
    }

    pub fn left(&self) -> FaceSide {
        match self {
            FaceLink::Conformal { left, .. } => *left,
            FaceLink::NonConformal { coarse, .. } => *coarse,
            FaceLink::Boundary { side } => *side,
        }
    }

    pub fn right(&self) -> Vec<FaceSide> {
        match self {
            FaceLink::Conformal { right, .. } => vec![*right],
            FaceLink::NonConformal { fine, .. } => fine.to_vec(),
            FaceLink::Boundary { .. } => vec![],
        }
    }
}

/// Regridding parameters shared by both AMR backends.
#[derive(Debug, Clone, PartialEq)]
pub struct RegridPolicy {
    /// Regrid every `interval_steps` steps (T).
    pub interval_steps: usize,
    /// Buffer width in cells (B).
    pub buffer_cells: usize,
    pub max_level: u32,
    /// Name of the refinement indicator.
    pub field: String,
    pub refine_above: f64,
    pub coarsen_below: f64,
}

impl RegridPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.interval_steps == 0 {
            return Err("regrid interval must be at least 1".into());
        }
        if self.max_level >= LATTICE_LEVEL {
            return Err(format!("max_level must be below {LATTICE_LEVEL}"));
        }
        if self.coarsen_below > self.refine_above {
            return Err("coarsen threshold must not exceed refine threshold".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagSets {
    pub refine: BTreeSet<CellId>,
    /// Parents whose families should be merged.
    pub coarsen: BTreeSet<CellId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshEvent {
    Refined {
        parent: CellId,
        children: [CellId; 4],
    },
    Coarsened {
        parent: CellId,
        children: [CellId; 4],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    NotRefined,
    MixedLevels,
    WouldBreakBalance,
}

/// What a mesh mutation did, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegridReport {
    pub events: Vec<MeshEvent>,
    pub dropped_coarsen: Vec<(CellId, DropReason)>,
    /// Refinement requests ignored because the cell was at `max_level`.
    pub clamped: usize,
}

impl RegridReport {
    pub fn changed(&self) -> bool {
        !self.events.is_empty()
    }

    fn absorb(&mut self, other: RegridReport) {
        self.events.extend(other.events);
        self.dropped_coarsen.extend(other.dropped_coarsen);
        self.clamped += other.clamped;
    }
}

type Lattice = [i64; 3];
type EdgeKey = (Lattice, Lattice);

#[derive(Debug, Clone)]
pub struct QuadForest {
    domain: Domain,
    cells: Vec<Cell>,
    index: HashMap<CellKey, CellId>,
    roots: Vec<CellId>,
    leaves: Vec<CellId>,
    faces: Vec<FaceLink>,
}

impl QuadForest {
    pub fn new(domain: Domain) -> Result<Self, TreeError> {
        let roots = domain.roots();
        if roots[0] == 0 || roots[1] == 0 {
            return Err(TreeError::EmptyRootMesh);
        }
        if let Domain::Planar { periodic, .. } = &domain {
            for d in 0..2 {
                if periodic[d] && roots[d] < 2 {
                    return Err(TreeError::PeriodicTooSmall(d));
                }
            }
        }
        let mut forest = Self {
            domain,
            cells: Vec::new(),
            index: HashMap::new(),
            roots: Vec::new(),
            leaves: Vec::new(),
            faces: Vec::new(),
        };
        for tile in 0..forest.domain.n_tiles() {
            for j in 0..roots[1] {
                for i in 0..roots[0] {
                    let id = forest.push_cell(
                        CellKey {
                            tile,
                            level: 0,
                            i,
                            j,
                        },
                        None,
                    );
                    forest.roots.push(id);
                }
            }
        }
        forest.rebuild();
        Ok(forest)
    }

    /// Uniform planar box.
    pub fn planar(
        origin: [f64; 2],
        extent: [f64; 2],
        roots: [u32; 2],
        periodic: [bool; 2],
    ) -> Result<Self, TreeError> {
        Self::new(Domain::Planar {
            origin,
            extent,
            roots,
            periodic,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn roots(&self) -> &[CellId] {
        &self.roots
    }

    /// Active leaves in deterministic (tile, Morton) order.
    pub fn leaves(&self) -> &[CellId] {
        &self.leaves
    }

    pub fn faces(&self) -> &[FaceLink] {
        &self.faces
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id]
    }

    pub fn get(&self, id: CellId) -> Option<&Cell> {
        self.cells.get(id).filter(|c| c.alive)
    }

    pub fn is_active_leaf(&self, id: CellId) -> bool {
        self.get(id).is_some_and(|c| c.is_leaf())
    }

    pub fn find(&self, key: CellKey) -> Option<CellId> {
        self.index.get(&key).copied()
    }

    pub fn max_leaf_level(&self) -> u32 {
        self.leaves
            .iter()
            .map(|&id| self.cells[id].level())
            .max()
            .unwrap_or(0)
    }

    /// Number of active leaves per level, indices `0..=levels`.
    pub fn leaf_counts_per_level(&self, levels: u32) -> Vec<usize> {
        let mut counts = vec![0; levels as usize + 1];
        for &id in &self.leaves {
            let l = self.cells[id].level() as usize;
            if l >= counts.len() {
                counts.resize(l + 1, 0);
            }
            counts[l] += 1;
        }
        counts
    }

    fn push_cell(&mut self, key: CellKey, parent: Option<CellId>) -> CellId {
        let id = self.cells.len();
        let corner_coords = [
            self.point(key, -1.0, -1.0),
            self.point(key, 1.0, -1.0),
            self.point(key, 1.0, 1.0),
            self.point(key, -1.0, 1.0),
        ];
        self.cells.push(Cell {
            id,
            key,
            parent,
            children: None,
            corner_coords,
            alive: true,
        });
        self.index.insert(key, id);
        id
    }

    /// Parameter range of a cell within its tile: `([lo_a, hi_a], [lo_b, hi_b])`
    /// in root-grid units (planar) or equiangular parameters (sphere).
    fn param_bounds(&self, key: CellKey) -> ([f64; 2], [f64; 2]) {
        let roots = self.domain.roots();
        let cells = [
            (roots[0] as u64) << key.level,
            (roots[1] as u64) << key.level,
        ];
        let frac = |k: u32, n: u64| (k as f64 / n as f64, (k as f64 + 1.0) / n as f64);
        let (a0, a1) = frac(key.i, cells[0]);
        let (b0, b1) = frac(key.j, cells[1]);
        match &self.domain {
            Domain::Planar { .. } => ([a0, a1], [b0, b1]),
            Domain::CubedSphere { .. } => (
                [2.0 * a0 - 1.0, 2.0 * a1 - 1.0],
                [2.0 * b0 - 1.0, 2.0 * b1 - 1.0],
            ),
        }
    }

    /// Physical position of the reference point `(ξ, η) ∈ [-1, 1]²` of a cell.
    ///
    /// Planar cells are affine; sphere cells follow the equiangular mapping
    /// and lie exactly on the sphere.
    pub fn point(&self, key: CellKey, xi: f64, eta: f64) -> Vec3 {
        let (pa, pb) = self.param_bounds(key);
        let lerp = |r: [f64; 2], s: f64| {
            if s == -1.0 {
                r[0]
            } else if s == 1.0 {
                r[1]
            } else {
                r[0] + 0.5 * (s + 1.0) * (r[1] - r[0])
            }
        };
        let (a, b) = (lerp(pa, xi), lerp(pb, eta));
        match &self.domain {
            Domain::Planar { origin, extent, .. } => {
                [origin[0] + a * extent[0], origin[1] + b * extent[1], 0.0]
            }
            Domain::CubedSphere { radius, .. } => {
                sphere::tile_point(key.tile as usize, a, b, *radius)
            }
        }
    }

    /// Area of a cell: exact rectangle (planar) or spherical excess (sphere).
    pub fn cell_area(&self, id: CellId) -> f64 {
        let c = &self.cells[id];
        match &self.domain {
            Domain::Planar { .. } => {
                (c.corner_coords[1][0] - c.corner_coords[0][0])
                    * (c.corner_coords[3][1] - c.corner_coords[0][1])
            }
            Domain::CubedSphere { radius, .. } => {
                sphere::spherical_quad_area(c.corner_coords, *radius).expect("non-degenerate cell")
            }
        }
    }

    pub fn total_leaf_area(&self) -> f64 {
        self.leaves.iter().map(|&id| self.cell_area(id)).sum()
    }

    /// Area of the inscribed flat-faceted surface (sphere) or the plain area.
    pub fn total_chordal_area(&self) -> f64 {
        match &self.domain {
            Domain::Planar { .. } => self.total_leaf_area(),
            Domain::CubedSphere { .. } => self
                .leaves
                .iter()
                .map(|&id| sphere::chordal_quad_area(self.cells[id].corner_coords))
                .sum(),
        }
    }

    /// Length of a cell face (great-circle arc on the sphere).
    pub fn face_length(&self, side: FaceSide) -> f64 {
        let c = &self.cells[side.cell];
        let [s, e] = FACE_CORNERS[side.face as usize];
        let (a, b) = (c.corner_coords[s], c.corner_coords[e]);
        match &self.domain {
            Domain::Planar { .. } => sphere::norm(sphere::sub(a, b)),
            Domain::CubedSphere { radius, .. } => {
                let cosang = (sphere::dot(a, b) / (radius * radius)).clamp(-1.0, 1.0);
                radius * cosang.acos()
            }
        }
    }

    // ----- lattice keys ---------------------------------------------------

    /// Unwrapped lattice coordinates of a cell corner within its tile.
    fn corner_lattice(key: CellKey, corner: usize) -> (i64, i64) {
        let shift = LATTICE_LEVEL - key.level as u32;
        let (di, dj) = match corner {
            0 => (0, 0),
            1 => (1, 0),
            2 => (1, 1),
            _ => (0, 1),
        };
        (
            ((key.i + di) as i64) << shift,
            ((key.j + dj) as i64) << shift,
        )
    }

    fn lattice_key(&self, tile: u8, ii: i64, jj: i64) -> Lattice {
        match &self.domain {
            Domain::Planar {
                roots, periodic, ..
            } => {
                let wrap = |v: i64, d: usize| {
                    if periodic[d] {
                        v.rem_euclid((roots[d] as i64) << LATTICE_LEVEL)
                    } else {
                        v
                    }
                };
                [wrap(ii, 0), wrap(jj, 1), 0]
            }
            Domain::CubedSphere { n, .. } => {
                let k = (*n as i64) << LATTICE_LEVEL;
                let (a, b) = (2 * ii - k, 2 * jj - k);
                let [nn, u, v] = TILE_FRAMES[tile as usize];
                [
                    k * nn[0] + a * u[0] + b * v[0],
                    k * nn[1] + a * u[1] + b * v[1],
                    k * nn[2] + a * u[2] + b * v[2],
                ]
            }
        }
    }

    /// `(start, mid, end)` lattice keys of a face in its own parameter direction.
    fn face_keys(&self, key: CellKey, face: usize) -> (Lattice, Lattice, Lattice) {
        let [s, e] = FACE_CORNERS[face];
        let (si, sj) = Self::corner_lattice(key, s);
        let (ei, ej) = Self::corner_lattice(key, e);
        (
            self.lattice_key(key.tile, si, sj),
            self.lattice_key(key.tile, (si + ei) / 2, (sj + ej) / 2),
            self.lattice_key(key.tile, ei, ej),
        )
    }

    fn edge_key(a: Lattice, b: Lattice) -> EdgeKey {
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    // ----- neighbours -----------------------------------------------------

    /// Key of the same-level cell across face `dir`, or `None` at a physical
    /// boundary. Crosses periodic seams and cube edges.
    pub fn same_level_neighbor(&self, key: CellKey, dir: usize) -> Option<CellKey> {
        match &self.domain {
            Domain::Planar {
                roots, periodic, ..
            } => {
                let n = [
                    (roots[0] as i64) << key.level,
                    (roots[1] as i64) << key.level,
                ];
                let (mut i, mut j) = (key.i as i64, key.j as i64);
                match dir {
                    0 => i -= 1,
                    1 => i += 1,
                    2 => j -= 1,
                    _ => j += 1,
                }
                for (d, v) in [(0, &mut i), (1, &mut j)] {
                    if *v < 0 || *v >= n[d] {
                        if !periodic[d] {
                            return None;
                        }
                        *v = v.rem_euclid(n[d]);
                    }
                }
                Some(CellKey {
                    tile: key.tile,
                    level: key.level,
                    i: i as u32,
                    j: j as u32,
                })
            }
            Domain::CubedSphere { n, .. } => {
                let k = (*n as i64) << key.level;
                let [nn, u, v] = TILE_FRAMES[key.tile as usize];
                let a = 2 * key.i as i64 + 1 - k;
                let b = 2 * key.j as i64 + 1 - k;
                let mut p = [0i64; 3];
                for d in 0..3 {
                    p[d] = k * nn[d] + a * u[d] + b * v[d];
                }
                let step = match dir {
                    0 => u.map(|x| -x),
                    1 => u,
                    2 => v.map(|x| -x),
                    _ => v,
                };
                for d in 0..3 {
                    p[d] += 2 * step[d];
                }
                let along: i64 = (0..3).map(|d| p[d] * step[d]).sum();
                let tile = if along > k {
                    for d in 0..3 {
                        p[d] -= step[d] + nn[d];
                    }
                    sphere::tile_with_normal(step)
                } else {
                    key.tile as usize
                };
                let [_, u2, v2] = TILE_FRAMES[tile];
                let a2: i64 = (0..3).map(|d| p[d] * u2[d]).sum();
                let b2: i64 = (0..3).map(|d| p[d] * v2[d]).sum();
                Some(CellKey {
                    tile: tile as u8,
                    level: key.level,
                    i: ((a2 + k - 1) / 2) as u32,
                    j: ((b2 + k - 1) / 2) as u32,
                })
            }
        }
    }

    /// The active leaf covering the region of `key`, if that leaf is at the
    /// same or a coarser level. Returns `None` when `key` is refined further.
    fn leaf_covering(&self, key: CellKey) -> Option<CellId> {
        let mut k = key;
        loop {
            if let Some(id) = self.find(k) {
                return self.cells[id].is_leaf().then_some(id);
            }
            k = k.parent()?;
        }
    }

    // ----- mutation -------------------------------------------------------

    fn split(&mut self, id: CellId) -> [CellId; 4] {
        let key = self.cells[id].key;
        let children = [0, 1, 2, 3].map(|c| self.push_cell(key.child(c), Some(id)));
        self.cells[id].children = Some(children);
        children
    }

    fn refine_balanced(&mut self, id: CellId, max_level: u32, report: &mut RegridReport) {
        if !self.is_active_leaf(id) {
            return;
        }
        let key = self.cells[id].key;
        if key.level as u32 >= max_level {
            report.clamped += 1;
            return;
        }
        for dir in 0..4 {
            if let Some(nk) = self.same_level_neighbor(key, dir) {
                if let Some(nb) = self.leaf_covering(nk) {
                    if self.cells[nb].key.level < key.level {
                        self.refine_balanced(nb, u32::MAX, report);
                    }
                }
            }
        }
        let children = self.split(id);
        report.events.push(MeshEvent::Refined {
            parent: id,
            children,
        });
    }

    fn try_coarsen(&mut self, parent: CellId) -> Result<[CellId; 4], DropReason> {
        let children = match self.get(parent).and_then(|c| c.children) {
            Some(ch) => ch,
            None => return Err(DropReason::NotRefined),
        };
        if children.iter().any(|&c| !self.cells[c].is_leaf()) {
            return Err(DropReason::MixedLevels);
        }
        for (c, &child) in children.iter().enumerate() {
            let key = self.cells[child].key;
            for &dir in &CHILD_OUTER_FACES[c] {
                if let Some(nk) = self.same_level_neighbor(key, dir) {
                    if self.find(nk).is_some_and(|nb| !self.cells[nb].is_leaf()) {
                        return Err(DropReason::WouldBreakBalance);
                    }
                }
            }
        }
        for &c in &children {
            self.cells[c].alive = false;
            self.index.remove(&self.cells[c].key);
        }
        self.cells[parent].children = None;
        Ok(children)
    }

    /// Split each listed leaf into four, refining coarser neighbours first so
    /// that the 2:1 balance holds. Requests at `max_level` are clamped.
    pub fn refine_cells(&mut self, ids: &BTreeSet<CellId>, max_level: u32) -> RegridReport {
        let mut report = RegridReport::default();
        for &id in ids {
            self.refine_balanced(id, max_level, &mut report);
        }
        if report.changed() {
            self.rebuild();
        }
        report
    }

    /// Merge each listed family back into its parent where allowed.
    pub fn coarsen_cells(&mut self, parents: &BTreeSet<CellId>) -> RegridReport {
        let mut report = RegridReport::default();
        for &p in parents {
            match self.try_coarsen(p) {
                Ok(children) => report.events.push(MeshEvent::Coarsened {
                    parent: p,
                    children,
                }),
                Err(reason) => report.dropped_coarsen.push((p, reason)),
            }
        }
        if report.changed() {
            self.rebuild();
        }
        report
    }

    /// Coarsen, then refine (with balance).
    pub fn apply_tags(&mut self, tags: &TagSets, max_level: u32) -> RegridReport {
        let mut report = self.coarsen_cells(&tags.coarsen);
        let refine: BTreeSet<CellId> = tags
            .refine
            .iter()
            .copied()
            .filter(|&id| self.is_active_leaf(id))
            .collect();
        report.absorb(self.refine_cells(&refine, max_level));
        report
    }

    /// Refine every leaf `levels` times.
    pub fn refine_uniformly(&mut self, levels: u32) -> RegridReport {
        let mut report = RegridReport::default();
        for _ in 0..levels {
            let all: BTreeSet<CellId> = self.leaves.iter().copied().collect();
            report.absorb(self.refine_cells(&all, LATTICE_LEVEL - 1));
        }
        report
    }

    // ----- tagging --------------------------------------------------------

    /// Leaf adjacency across faces (including 2:1 faces).
    pub fn leaf_adjacency(&self) -> HashMap<CellId, Vec<CellId>> {
        let mut adj: HashMap<CellId, Vec<CellId>> =
            self.leaves.iter().map(|&id| (id, Vec::new())).collect();
        let mut link = |a: CellId, b: CellId| {
            if a != b {
                adj.get_mut(&a).unwrap().push(b);
                adj.get_mut(&b).unwrap().push(a);
            }
        };
        for f in &self.faces {
            match f {
                FaceLink::Conformal { left, right } => link(left.cell, right.cell),
                FaceLink::NonConformal { coarse, fine } => {
                    link(coarse.cell, fine[0].cell);
                    link(coarse.cell, fine[1].cell);
                }
                FaceLink::Boundary { .. } => {}
            }
        }
        for v in adj.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        adj
    }

    /// Tag leaves whose indicator exceeds `refine_above`, dilate by
    /// `buffer_cells` face-neighbour steps, and collect families entirely
    /// below `coarsen_below` and outside the dilated set.
    pub fn tag_with_buffer(
        &self,
        indicator: impl Fn(CellId) -> f64,
        policy: &RegridPolicy,
    ) -> TagSets {
        let values: HashMap<CellId, f64> =
            self.leaves.iter().map(|&id| (id, indicator(id))).collect();
        let mut dist: HashMap<CellId, usize> = HashMap::new();
        let mut queue = VecDeque::new();
        for &id in &self.leaves {
            if values[&id] > policy.refine_above {
                dist.insert(id, 0);
                queue.push_back(id);
            }
        }
        if !queue.is_empty() && policy.buffer_cells > 0 {
            let adj = self.leaf_adjacency();
            while let Some(id) = queue.pop_front() {
                let d = dist[&id];
                if d == policy.buffer_cells {
                    continue;
                }
                for &nb in &adj[&id] {
                    if let Entry::Vacant(slot) = dist.entry(nb) {
                        slot.insert(d + 1);
                        queue.push_back(nb);
                    }
                }
            }
        }
        let mut tags = TagSets::default();
        for &id in dist.keys() {
            if self.cells[id].level() < policy.max_level {
                tags.refine.insert(id);
            }
        }
        let parents: BTreeSet<CellId> = self
            .leaves
            .iter()
            .filter_map(|&id| self.cells[id].parent)
            .collect();
        for p in parents {
            let children = self.cells[p].children.expect("parent of a leaf");
            let all_quiet = children.iter().all(|&c| {
                self.cells[c].is_leaf()
                    && !dist.contains_key(&c)
                    && values[&c] < policy.coarsen_below
            });
            if all_quiet {
                tags.coarsen.insert(p);
            }
        }
        tags
    }

    // ----- connectivity ---------------------------------------------------

    fn rebuild(&mut self) {
        let mut leaves: Vec<CellId> = self
            .cells
            .iter()
            .filter(|c| c.alive && c.is_leaf())
            .map(|c| c.id)
            .collect();
        leaves.sort_by_key(|&id| {
            let k = self.cells[id].key;
            (k.tile, k.morton(), k.level)
        });
        self.leaves = leaves;

        let mut edges: HashMap<EdgeKey, Vec<(CellId, u8)>> =
            HashMap::with_capacity(4 * self.leaves.len());
        for &id in &self.leaves {
            let key = self.cells[id].key;
            for f in 0..4 {
                let (s, _, e) = self.face_keys(key, f);
                edges
                    .entry(Self::edge_key(s, e))
                    .or_default()
                    .push((id, f as u8));
            }
        }

        let mut matched: HashMap<(CellId, u8), ()> = HashMap::new();
        let mut faces = Vec::new();
        for &id in &self.leaves {
            let key = self.cells[id].key;
            for f in 0..4u8 {
                if matched.contains_key(&(id, f)) {
                    continue;
                }
                let (s, m, e) = self.face_keys(key, f as usize);
                let left = FaceSide {
                    cell: id,
                    face: f,
                    flipped: false,
                };
                if let Some(list) = edges.get(&Self::edge_key(s, e)) {
                    if let Some(&(other, of)) = list.iter().find(|&&(c, ff)| (c, ff) != (id, f)) {
                        let (os, _, _) = self.face_keys(self.cells[other].key, of as usize);
                        let right = FaceSide {
                            cell: other,
                            face: of,
                            flipped: os != s,
                        };
                        matched.insert((id, f), ());
                        matched.insert((other, of), ());
                        faces.push(FaceLink::Conformal { left, right });
                        continue;
                    }
                }
                let lo = edges
                    .get(&Self::edge_key(s, m))
                    .and_then(|l| l.first().copied());
                let hi = edges
                    .get(&Self::edge_key(m, e))
                    .and_then(|l| l.first().copied());
                if let (Some((c0, f0)), Some((c1, f1))) = (lo, hi) {
                    let (s0, _, _) = self.face_keys(self.cells[c0].key, f0 as usize);
                    let (s1, _, _) = self.face_keys(self.cells[c1].key, f1 as usize);
                    let fine = [
                        FaceSide {
                            cell: c0,
                            face: f0,
                            flipped: s0 != s,
                        },
                        FaceSide {
                            cell: c1,
                            face: f1,
                            flipped: s1 != m,
                        },
                    ];
                    matched.insert((id, f), ());
                    matched.insert((c0, f0), ());
                    matched.insert((c1, f1), ());
                    faces.push(FaceLink::NonConformal { coarse: left, fine });
                    continue;
                }
            }
        }
        for &id in &self.leaves {
            for f in 0..4u8 {
                if !matched.contains_key(&(id, f)) {
                    faces.push(FaceLink::Boundary {
                        side: FaceSide {
                            cell: id,
                            face: f,
                            flipped: false,
                        },
                    });
                }
            }
        }
        self.faces = faces;
    }

    // ----- checks ---------------------------------------------------------

    /// Full-scan verification of face symmetry, 2:1 balance and that
    /// boundary faces lie on a physical boundary. Returns a description of the
    /// first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen: HashMap<(CellId, u8), usize> = HashMap::new();
        for f in &self.faces {
            let mut sides = vec![f.left()];
            sides.extend(f.right());
            for s in &sides {
                *seen.entry((s.cell, s.face)).or_default() += 1;
                if !self.is_active_leaf(s.cell) {
                    return Err(format!("face references inactive cell {}", s.cell));
                }
            }
            match f {
                FaceLink::Conformal { left, right } => {
                    if self.cells[left.cell].level() != self.cells[right.cell].level() {
                        return Err("conformal face between different levels".into());
                    }
                }
                FaceLink::NonConformal { coarse, fine } => {
                    for s in fine {
                        if self.cells[s.cell].level() != self.cells[coarse.cell].level() + 1 {
                            return Err("2:1 face with wrong level jump".into());
                        }
                    }
                }
                FaceLink::Boundary { side } => {
                    if self
                        .same_level_neighbor(self.cells[side.cell].key, side.face as usize)
                        .is_some()
                    {
                        return Err(format!(
                            "unmatched interior face on cell {} (balance violated)",
                            side.cell
                        ));
                    }
                }
            }
        }
        for &id in &self.leaves {
            for f in 0..4u8 {
                if seen.get(&(id, f)) != Some(&1) {
                    return Err(format!(
                        "face {f} of cell {id} linked {:?} times",
                        seen.get(&(id, f))
                    ));
                }
            }
        }
        Ok(())
    }
}
