//! Berger–Rigoutsos point clustering.
//!
//! Tagged cells are grouped into boxes by recursive bisection driven by the
//! tag signatures (row and column counts): cuts go at holes first, then at
//! the strongest sign change of the signature's discrete Laplacian, and
//! otherwise at the middle of the longest side. Cut positions are multiples
//! of the blocking factor, so every box is aligned.

use crate::index_box::{Cell, IndexBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    /// Minimum fill ratio (tagged / total) of an accepted box.
    pub efficiency: f64,
    /// Box corners and sizes are multiples of this.
    pub blocking: i64,
    /// Longest allowed box side (rounded down to a multiple of `blocking`).
    pub max_size: i64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            efficiency: 0.7,
            blocking: 4,
            max_size: 64,
        }
    }
}

impl ClusterParams {
    /// The same settings in the index space of the next coarser level
    /// (ratio 2), where tags are clustered before refinement.
    pub fn coarsened(&self) -> Self {
        Self {
            efficiency: self.efficiency,
            blocking: (self.blocking / 2).max(1),
            max_size: (self.max_size / 2).max(1),
        }
    }

    fn max_side(&self) -> i64 {
        (self.max_size / self.blocking).max(1) * self.blocking
    }
}

/// Dense tag mask over an aligned window.
struct Mask {
    window: IndexBox,
    nx: i64,
    /// Summed-area table with a zero border: `sat[(j+1)(nx+1) + i+1]`.
    sat: Vec<u32>,
}

impl Mask {
    fn new(tags: &[Cell], window: IndexBox) -> Self {
        let [nx, ny] = window.size();
        let mut raw = vec![0u32; (nx * ny) as usize];
        for c in tags {
            let (i, j) = (c[0] - window.lo[0], c[1] - window.lo[1]);
            raw[(i + nx * j) as usize] = 1;
        }
        let w = nx + 1;
        let mut sat = vec![0u32; (w * (ny + 1)) as usize];
        for j in 0..ny {
            for i in 0..nx {
                let v = raw[(i + nx * j) as usize];
                sat[((j + 1) * w + i + 1) as usize] =
                    v + sat[(j * w + i + 1) as usize] + sat[((j + 1) * w + i) as usize]
                        - sat[(j * w + i) as usize];
            }
        }
        Self { window, nx, sat }
    }

    fn count(&self, b: &IndexBox) -> u32 {
        let w = self.nx + 1;
        let (i0, j0) = (b.lo[0] - self.window.lo[0], b.lo[1] - self.window.lo[1]);
        let (i1, j1) = (
            b.hi[0] - self.window.lo[0] + 1,
            b.hi[1] - self.window.lo[1] + 1,
        );
        let at = |i: i64, j: i64| self.sat[(j * w + i) as usize] as i64;
        (at(i1, j1) - at(i0, j1) - at(i1, j0) + at(i0, j0)) as u32
    }

    fn signature(&self, b: &IndexBox, dim: usize) -> Vec<u32> {
        (b.lo[dim]..=b.hi[dim])
            .map(|p| {
                let mut line = *b;
                line.lo[dim] = p;
                line.hi[dim] = p;
                self.count(&line)
            })
            .collect()
    }

    /// Tight aligned bounding box of the tags inside `b`.
    fn shrink(&self, b: &IndexBox, blocking: i64) -> Option<IndexBox> {
        let sx = self.signature(b, 0);
        let sy = self.signature(b, 1);
        let first = |s: &[u32]| s.iter().position(|&c| c > 0).map(|p| p as i64);
        let last = |s: &[u32]| s.iter().rposition(|&c| c > 0).map(|p| p as i64);
        let lo = [b.lo[0] + first(&sx)?, b.lo[1] + first(&sy)?];
        let hi = [b.lo[0] + last(&sx)?, b.lo[1] + last(&sy)?];
        Some(IndexBox::new(lo, hi, b.level).align(blocking))
    }
}

/// Cluster `tags` (cells of one level) into aligned, disjoint boxes.
///
/// Every tag is covered; each box either reaches `efficiency` or is a single
/// `blocking × blocking` block; no side exceeds `max_size`. Empty input gives
/// an empty result.
pub fn berger_rigoutsos(tags: &[Cell], level: u32, params: &ClusterParams) -> Vec<IndexBox> {
    if tags.is_empty() {
        return Vec::new();
    }
    let b = params.blocking.max(1);
    let mut lo = tags[0];
    let mut hi = tags[0];
    for c in tags {
        for d in 0..2 {
            lo[d] = lo[d].min(c[d]);
            hi[d] = hi[d].max(c[d]);
        }
    }
    let window = IndexBox::new(lo, hi, level).align(b);
    let mask = Mask::new(tags, window);
    let mut out = Vec::new();
    let mut todo = vec![window];
    while let Some(bx) = todo.pop() {
        let Some(bx) = mask.shrink(&bx, b) else {
            continue;
        };
        match choose_cut(&mask, &bx, params) {
            None => out.push(bx),
            Some((dim, at)) => {
                let (l, r) = bx.split(dim, at);
                todo.push(r);
                todo.push(l);
            }
        }
    }
    out.sort();
    out
}

/// `None` when the box is acceptable as it is.
fn choose_cut(mask: &Mask, bx: &IndexBox, params: &ClusterParams) -> Option<(usize, i64)> {
    let b = params.blocking.max(1);
    let size = bx.size();
    let too_big = [size[0] > params.max_side(), size[1] > params.max_side()];
    let eff = mask.count(bx) as f64 / bx.n_cells() as f64;
    if eff >= params.efficiency && !too_big[0] && !too_big[1] {
        return None;
    }
    if size[0] <= b && size[1] <= b {
        return None;
    }
    let allowed: Vec<usize> = if too_big[0] || too_big[1] {
        (0..2).filter(|&d| too_big[d]).collect()
    } else {
        (0..2).filter(|&d| size[d] > b).collect()
    };
    let centre = |d: usize, p: i64| (2 * p - bx.lo[d] - bx.hi[d] - 1).abs();
    let cuts = |d: usize| (1..size[d] / b).map(move |k| bx.lo[d] + k * b);

    // Holes.
    let mut best: Option<(i64, usize, i64)> = None;
    for &d in &allowed {
        let s = mask.signature(bx, d);
        for p in cuts(d) {
            let k = (p - bx.lo[d]) as usize;
            if s[k - 1] == 0 || s[k] == 0 {
                let score = centre(d, p);
                if best.is_none_or(|(sc, _, _)| score < sc) {
                    best = Some((score, d, p));
                }
            }
        }
    }
    if let Some((_, d, p)) = best {
        return Some((d, p));
    }

    // Inflection points of the signature.
    let mut best: Option<(i64, i64, usize, i64)> = None;
    for &d in &allowed {
        let s: Vec<i64> = mask.signature(bx, d).into_iter().map(i64::from).collect();
        let n = s.len();
        if n < 4 {
            continue;
        }
        let lap = |i: usize| s[i + 1] - 2 * s[i] + s[i - 1];
        for p in cuts(d) {
            let k = (p - bx.lo[d]) as usize;
            if k < 2 || k + 1 >= n {
                continue;
            }
            let (a, c) = (lap(k - 1), lap(k));
            if a.signum() * c.signum() < 0 {
                let strength = (c - a).abs();
                let score = centre(d, p);
                let better = match best {
                    None => true,
                    Some((st, sc, _, _)) => strength > st || (strength == st && score < sc),
                };
                if better {
                    best = Some((strength, score, d, p));
                }
            }
        }
    }
    if let Some((_, _, d, p)) = best {
        return Some((d, p));
    }

    // Bisect the longest allowed side.
    let d = *allowed.iter().max_by_key(|&&d| (size[d], usize::MAX - d))?;
    let half = (size[d] / 2).div_euclid(b).max(1) * b;
    Some((d, bx.lo[d] + half))
}

/// Fraction of the cells of `bx` that are in `tags`.
pub fn fill_ratio(tags: &[Cell], bx: &IndexBox) -> f64 {
    tags.iter().filter(|&&c| bx.contains(c)).count() as f64 / bx.n_cells() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index_box::pairwise_disjoint;

    fn rect(lo: Cell, hi: Cell) -> Vec<Cell> {
        IndexBox::new(lo, hi, 0).cells().collect()
    }

    #[test]
    fn single_cell_gives_one_block() {
        let p = ClusterParams {
            efficiency: 0.7,
            blocking: 4,
            max_size: 32,
        };
        let boxes = berger_rigoutsos(&[[5, 9]], 0, &p);
        assert_eq!(boxes, vec![IndexBox::new([4, 8], [7, 11], 0)]);
    }

    #[test]
    fn full_rectangle_is_one_box() {
        let p = ClusterParams {
            efficiency: 0.9,
            blocking: 2,
            max_size: 64,
        };
        let boxes = berger_rigoutsos(&rect([2, 4], [13, 9]), 0, &p);
        assert_eq!(boxes, vec![IndexBox::new([2, 4], [13, 9], 0)]);
        assert!(berger_rigoutsos(&[], 0, &p).is_empty());
    }

    #[test]
    fn l_shape_splits_into_two_efficient_boxes() {
        let p = ClusterParams {
            efficiency: 0.7,
            blocking: 2,
            max_size: 64,
        };
        let mut tags = rect([0, 0], [15, 3]);
        tags.extend(rect([0, 4], [3, 15]));
        let boxes = berger_rigoutsos(&tags, 0, &p);
        assert_eq!(boxes.len(), 2, "{boxes:?}");
        assert!(pairwise_disjoint(&boxes));
        for b in &boxes {
            assert!(fill_ratio(&tags, b) >= 0.7);
        }
    }

    #[test]
    fn max_size_is_respected() {
        let p = ClusterParams {
            efficiency: 0.5,
            blocking: 4,
            max_size: 16,
        };
        let boxes = berger_rigoutsos(&rect([0, 0], [47, 7]), 0, &p);
        assert_eq!(boxes.iter().map(|b| b.n_cells()).sum::<i64>(), 48 * 8);
        assert!(boxes.iter().all(|b| b.size()[0] <= 16));
    }
}
