//! Integer boxes of cells on one level.

use std::fmt;

/// Cell index `(i, j)` on some level.
pub type Cell = [i64; 2];

/// Inclusive rectangle of cells `lo..=hi` on `level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexBox {
    pub lo: Cell,
    pub hi: Cell,
    pub level: u32,
}

impl fmt::Display for IndexBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L{}[{},{}]..[{},{}]",
            self.level, self.lo[0], self.lo[1], self.hi[0], self.hi[1]
        )
    }
}

impl IndexBox {
    pub fn new(lo: Cell, hi: Cell, level: u32) -> Self {
        debug_assert!(lo[0] <= hi[0] + 1 && lo[1] <= hi[1] + 1);
        Self { lo, hi, level }
    }

    /// Box of `size` cells starting at `lo`.
    pub fn from_size(lo: Cell, size: [i64; 2], level: u32) -> Self {
        Self::new(lo, [lo[0] + size[0] - 1, lo[1] + size[1] - 1], level)
    }

    pub fn size(&self) -> [i64; 2] {
        [self.hi[0] - self.lo[0] + 1, self.hi[1] - self.lo[1] + 1]
    }

    pub fn n_cells(&self) -> i64 {
        let s = self.size();
        s[0].max(0) * s[1].max(0)
    }

    pub fn is_empty(&self) -> bool {
        self.hi[0] < self.lo[0] || self.hi[1] < self.lo[1]
    }

    pub fn contains(&self, c: Cell) -> bool {
        (0..2).all(|d| self.lo[d] <= c[d] && c[d] <= self.hi[d])
    }

    pub fn contains_box(&self, other: &IndexBox) -> bool {
        other.is_empty() || (0..2).all(|d| self.lo[d] <= other.lo[d] && other.hi[d] <= self.hi[d])
    }

    pub fn intersect(&self, other: &IndexBox) -> Option<IndexBox> {
        let lo = [self.lo[0].max(other.lo[0]), self.lo[1].max(other.lo[1])];
        let hi = [self.hi[0].min(other.hi[0]), self.hi[1].min(other.hi[1])];
        let b = IndexBox {
            lo,
            hi,
            level: self.level,
        };
        (!b.is_empty()).then_some(b)
    }

    pub fn intersects(&self, other: &IndexBox) -> bool {
        self.intersect(other).is_some()
    }

    pub fn grow(&self, g: i64) -> IndexBox {
        IndexBox {
            lo: [self.lo[0] - g, self.lo[1] - g],
            hi: [self.hi[0] + g, self.hi[1] + g],
            level: self.level,
        }
    }

    pub fn shift(&self, by: Cell) -> IndexBox {
        IndexBox {
            lo: [self.lo[0] + by[0], self.lo[1] + by[1]],
            hi: [self.hi[0] + by[0], self.hi[1] + by[1]],
            level: self.level,
        }
    }

    /// Same region on the next finer level (ratio `r`).
    pub fn refine(&self, r: i64) -> IndexBox {
        IndexBox {
            lo: [self.lo[0] * r, self.lo[1] * r],
            hi: [(self.hi[0] + 1) * r - 1, (self.hi[1] + 1) * r - 1],
            level: self.level + 1,
        }
    }

    /// Smallest box on the next coarser level covering this one.
    pub fn coarsen(&self, r: i64) -> IndexBox {
        IndexBox {
            lo: [self.lo[0].div_euclid(r), self.lo[1].div_euclid(r)],
            hi: [self.hi[0].div_euclid(r), self.hi[1].div_euclid(r)],
            level: self.level.saturating_sub(1),
        }
    }

    /// Grow outwards to multiples of `b` (global alignment).
    pub fn align(&self, b: i64) -> IndexBox {
        IndexBox {
            lo: [self.lo[0].div_euclid(b) * b, self.lo[1].div_euclid(b) * b],
            hi: [
                (self.hi[0].div_euclid(b) + 1) * b - 1,
                (self.hi[1].div_euclid(b) + 1) * b - 1,
            ],
            level: self.level,
        }
    }

    pub fn is_aligned(&self, b: i64) -> bool {
        (0..2).all(|d| self.lo[d].rem_euclid(b) == 0 && (self.hi[d] + 1).rem_euclid(b) == 0)
    }

    /// Split along `dim` so that the low part ends at `at - 1`.
    pub fn split(&self, dim: usize, at: i64) -> (IndexBox, IndexBox) {
        let mut a = *self;
        let mut b = *self;
        a.hi[dim] = at - 1;
        b.lo[dim] = at;
        (a, b)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.lo[1]..=self.hi[1]).flat_map(move |j| (self.lo[0]..=self.hi[0]).map(move |i| [i, j]))
    }

    /// Remove `other` from this box, as up to four disjoint boxes.
    pub fn subtract(&self, other: &IndexBox) -> Vec<IndexBox> {
        let Some(cut) = self.intersect(other) else {
            return vec![*self];
        };
        let mut out = Vec::new();
        let lvl = self.level;
        if self.lo[1] < cut.lo[1] {
            out.push(IndexBox::new(self.lo, [self.hi[0], cut.lo[1] - 1], lvl));
        }
        if cut.hi[1] < self.hi[1] {
            out.push(IndexBox::new([self.lo[0], cut.hi[1] + 1], self.hi, lvl));
        }
        if self.lo[0] < cut.lo[0] {
            out.push(IndexBox::new(
                [self.lo[0], cut.lo[1]],
                [cut.lo[0] - 1, cut.hi[1]],
                lvl,
            ));
        }
        if cut.hi[0] < self.hi[0] {
            out.push(IndexBox::new(
                [cut.hi[0] + 1, cut.lo[1]],
                [self.hi[0], cut.hi[1]],
                lvl,
            ));
        }
        out
    }

    /// Chop into pieces no longer than `max_size`, cutting at multiples of
    /// `b` so that aligned boxes stay aligned.
    pub fn chop(&self, max_size: i64, b: i64) -> Vec<IndexBox> {
        let mut todo = vec![*self];
        let mut out = Vec::new();
        while let Some(bx) = todo.pop() {
            let s = bx.size();
            let dim = if s[0] >= s[1] { 0 } else { 1 };
            if s[dim] <= max_size {
                out.push(bx);
                continue;
            }
            let half = (s[dim] / 2).div_euclid(b).max(1) * b;
            let (l, r) = bx.split(dim, bx.lo[dim] + half);
            todo.push(r);
            todo.push(l);
        }
        out.sort();
        out
    }
}

/// Boxes of a list pairwise disjoint.
pub fn pairwise_disjoint(boxes: &[IndexBox]) -> bool {
    boxes
        .iter()
        .enumerate()
        .all(|(a, x)| boxes[a + 1..].iter().all(|y| !x.intersects(y)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refine_coarsen_round_trip() {
        let b = IndexBox::new([-3, 2], [4, 5], 1);
        assert_eq!(b.refine(2).coarsen(2), b);
        assert_eq!(b.refine(2).n_cells(), 4 * b.n_cells());
        assert_eq!(IndexBox::new([-3, 3], [-3, 3], 1).coarsen(2).lo, [-2, 1]);
    }

    #[test]
    fn subtract_partitions() {
        let a = IndexBox::new([0, 0], [9, 9], 0);
        let b = IndexBox::new([3, 4], [12, 6], 0);
        let parts = a.subtract(&b);
        assert!(pairwise_disjoint(&parts));
        let n: i64 = parts.iter().map(|p| p.n_cells()).sum();
        assert_eq!(n, 100 - a.intersect(&b).unwrap().n_cells());
    }

    #[test]
    fn align_and_chop() {
        let b = IndexBox::new([1, -1], [6, 2], 0).align(4);
        assert_eq!(b, IndexBox::new([0, -4], [7, 3], 0));
        let pieces = IndexBox::new([0, 0], [39, 7], 0).chop(16, 4);
        assert!(pieces.iter().all(|p| p.size()[0] <= 16 && p.is_aligned(4)));
        assert_eq!(pieces.iter().map(|p| p.n_cells()).sum::<i64>(), 320);
    }
}
