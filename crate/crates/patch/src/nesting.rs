//! Proper nesting of level boxes.
//!
//! A level-(ℓ+1) cell may only exist where every level-ℓ cell within
//! `width` (Chebyshev distance, in level-ℓ cells) is itself a level-ℓ cell,
//! so fine ghost regions are always filled from the next coarser level and
//! never from two levels down. Cells beyond a non-periodic domain edge count
//! as available, since they are filled by mirroring.

use crate::cluster::{berger_rigoutsos, ClusterParams};
use crate::index_box::{Cell, IndexBox};

/// Level-0 extent and periodicity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemDomain {
    pub origin: [f64; 2],
    pub extent: [f64; 2],
    /// Level-0 cells per direction.
    pub cells: [i64; 2],
    pub periodic: [bool; 2],
}

impl ProblemDomain {
    /// All cells of `level` (refinement ratio 2).
    pub fn level_box(&self, level: u32) -> IndexBox {
        let r = 1i64 << level;
        IndexBox::new(
            [0, 0],
            [self.cells[0] * r - 1, self.cells[1] * r - 1],
            level,
        )
    }

    pub fn dx(&self, level: u32) -> [f64; 2] {
        let r = (1i64 << level) as f64;
        [
            self.extent[0] / (self.cells[0] as f64 * r),
            self.extent[1] / (self.cells[1] as f64 * r),
        ]
    }

    /// Centre of cell `c` on `level`.
    pub fn centre(&self, level: u32, c: Cell) -> [f64; 2] {
        let dx = self.dx(level);
        [
            self.origin[0] + (c[0] as f64 + 0.5) * dx[0],
            self.origin[1] + (c[1] as f64 + 0.5) * dx[1],
        ]
    }

    /// Wrap periodic directions into the domain; non-periodic indices are
    /// left alone.
    pub fn wrap(&self, level: u32, c: Cell) -> Cell {
        let n = self.level_box(level).size();
        let mut w = c;
        for d in 0..2 {
            if self.periodic[d] {
                w[d] = c[d].rem_euclid(n[d]);
            }
        }
        w
    }
}

/// Boolean mask over one level's domain box.
#[derive(Debug, Clone)]
pub struct LevelMask {
    n: [i64; 2],
    bits: Vec<bool>,
}

impl LevelMask {
    pub(crate) fn from_boxes(domain: &ProblemDomain, level: u32, boxes: &[IndexBox]) -> Self {
        let n = domain.level_box(level).size();
        let mut bits = vec![false; (n[0] * n[1]) as usize];
        for b in boxes {
            for c in b.cells() {
                if (0..2).all(|d| (0..n[d]).contains(&c[d])) {
                    bits[(c[0] + n[0] * c[1]) as usize] = true;
                }
            }
        }
        Self { n, bits }
    }

    pub fn get(&self, c: Cell) -> bool {
        (0..2).all(|d| (0..self.n[d]).contains(&c[d]))
            && self.bits[(c[0] + self.n[0] * c[1]) as usize]
    }
}

/// Level-ℓ cells allowed to hold level-(ℓ+1) children.
pub(crate) fn nesting_region(
    domain: &ProblemDomain,
    level: u32,
    boxes: &[IndexBox],
    width: i64,
) -> LevelMask {
    let union = LevelMask::from_boxes(domain, level, boxes);
    let n = union.n;
    let mut bits = vec![false; union.bits.len()];
    for j in 0..n[1] {
        for i in 0..n[0] {
            let ok = (-width..=width).all(|dj| {
                (-width..=width).all(|di| {
                    let c = domain.wrap(level, [i + di, j + dj]);
                    let outside = (0..2).any(|d| !(0..n[d]).contains(&c[d]));
                    outside || union.get(c)
                })
            });
            bits[(i + n[0] * j) as usize] = ok && union.get([i, j]);
        }
    }
    LevelMask { n, bits }
}

/// Clip fine boxes so that each level nests properly in the one below.
///
/// `levels[ℓ]` holds the boxes of level ℓ in its own index space. Level 0 is
/// returned unchanged. Clipping happens at the fine level's blocking
/// granularity; a box well inside the nesting region is returned as is.
pub fn enforce_proper_nesting(
    domain: &ProblemDomain,
    levels: &[Vec<IndexBox>],
    width: i64,
    blocking: i64,
    max_size: i64,
) -> Vec<Vec<IndexBox>> {
    let mut out: Vec<Vec<IndexBox>> = Vec::with_capacity(levels.len());
    for (l, boxes) in levels.iter().enumerate() {
        if l == 0 {
            out.push(boxes.clone());
            continue;
        }
        let coarse = l as u32 - 1;
        let region = nesting_region(domain, coarse, &out[l - 1], width);
        let fine_domain = domain.level_box(l as u32);
        let b = blocking.max(2);
        let mut clipped = Vec::new();
        for bx in boxes {
            let Some(bx) = bx.intersect(&fine_domain) else {
                continue;
            };
            let fully = bx.coarsen(2).cells().all(|c| region.get(c));
            if fully {
                clipped.push(bx);
                continue;
            }
            // Keep the blocks of `bx` whose coarse cells are all allowed.
            let blocks: Vec<Cell> = bx
                .align(b)
                .coarsen(b)
                .cells()
                .filter(|&k| {
                    let blk = IndexBox::from_size([k[0] * b, k[1] * b], [b, b], l as u32);
                    blk.intersect(&bx).is_some_and(|part| part == blk)
                        && blk.coarsen(2).cells().all(|c| region.get(c))
                })
                .collect();
            let params = ClusterParams {
                efficiency: 1.0,
                blocking: 1,
                max_size: max_size / b,
            };
            for kb in berger_rigoutsos(&blocks, l as u32, &params) {
                clipped.push(IndexBox::new(
                    [kb.lo[0] * b, kb.lo[1] * b],
                    [(kb.hi[0] + 1) * b - 1, (kb.hi[1] + 1) * b - 1],
                    l as u32,
                ));
            }
        }
        clipped.sort();
        out.push(clipped);
    }
    out
}

/// Every level-(ℓ+1) box lies in the nesting region of level ℓ.
pub fn is_properly_nested(domain: &ProblemDomain, levels: &[Vec<IndexBox>], width: i64) -> bool {
    (1..levels.len()).all(|l| {
        let region = nesting_region(domain, l as u32 - 1, &levels[l - 1], width);
        levels[l]
            .iter()
            .all(|b| b.coarsen(2).cells().all(|c| region.get(c)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domain() -> ProblemDomain {
        ProblemDomain {
            origin: [0.0, 0.0],
            extent: [1.0, 1.0],
            cells: [16, 16],
            periodic: [false, false],
        }
    }

    #[test]
    fn level_zero_and_deep_boxes_are_untouched() {
        let d = domain();
        let l0 = vec![d.level_box(0)];
        let l1 = vec![IndexBox::new([8, 8], [23, 23], 1)];
        let l2 = vec![IndexBox::new([24, 24], [39, 39], 2)];
        let levels = vec![l0.clone(), l1.clone(), l2.clone()];
        let out = enforce_proper_nesting(&d, &levels, 2, 4, 64);
        assert_eq!(out, levels);
        assert!(is_properly_nested(&d, &out, 2));
    }

    #[test]
    fn flush_fine_box_is_clipped_by_nesting_width() {
        let d = domain();
        let l1 = vec![IndexBox::new([8, 8], [23, 23], 1)];
        let l2 = vec![l1[0].refine(2)];
        let out = enforce_proper_nesting(&d, &[vec![d.level_box(0)], l1, l2], 2, 4, 64);
        assert_eq!(out[2], vec![IndexBox::new([20, 20], [43, 43], 2)]);
    }

    #[test]
    fn domain_edges_do_not_clip() {
        let d = domain();
        let l1 = vec![IndexBox::new([0, 0], [7, 7], 1)];
        let l2 = vec![IndexBox::new([0, 0], [7, 7], 2)];
        let out = enforce_proper_nesting(&d, &[vec![d.level_box(0)], l1, l2.clone()], 2, 4, 64);
        assert_eq!(out[2], l2);
    }
}
