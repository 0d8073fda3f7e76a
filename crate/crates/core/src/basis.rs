//! Legendre-Gauss-Lobatto nodal machinery.
//!
//! Everything the element operators need is derived from a single 1D
//! [`NodalBasis`]: quadrature, the collocation differentiation matrix, and the
//! [`ProjectionSet`] of L² projections between a segment and its two halves.
//! Two- and three-dimensional operators are applied as tensor products of
//! these 1D matrices.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("polynomial order must be at least 1, got {0}")]
    DegenerateOrder(usize),
    #[error("LGL Newton iteration did not converge for order {0}")]
    NoConvergence(usize),
    #[error("singular mass matrix for order {0}")]
    SingularMass(usize),
}

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Dense row-major matrix. Sizes here are tiny ((N+1)×(N+1) with N ≤ 9).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `out = self · x`
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.apply(x, &mut out);
        out
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        Self::from_fn(self.rows, other.cols, |i, j| {
            (0..self.cols)
                .map(|k| self.get(i, k) * other.get(k, j))
                .sum()
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn try_inverse(&self) -> Option<Self> {
        assert_eq!(self.rows, self.cols);
        let m = DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        let inv = m.try_inverse()?;
        Some(Self::from_fn(self.rows, self.cols, |i, j| inv[(i, j)]))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Legendre polynomial values `(P_n(x), P_{n-1}(x))` by the three-term recurrence.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

/// One-dimensional LGL basis of order `N` on the reference interval [-1, 1].
#[derive(Debug, Clone)]
pub struct NodalBasis {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `D[i][j] = ℓ_j'(x_i)`
    pub diff_matrix: DenseMatrix,
    /// Diagonal of the collocated mass matrix; equal to `weights`.
    pub mass_diag: Vec<f64>,
    bary: Vec<f64>,
}

impl NodalBasis {
    pub fn new(order: usize) -> Result<Self, BasisError> {
        lgl_nodes_and_weights(order)
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.order + 1
    }

    /// Values of all Lagrange cardinals at `x`.
    pub fn lagrange_at(&self, x: f64) -> Vec<f64> {
        let n = self.n_nodes();
        let mut out = vec![0.0; n];
        if let Some(k) = self.nodes.iter().position(|&xk| xk == x) {
            out[k] = 1.0;
            return out;
        }
        let mut denom = 0.0;
        for j in 0..n {
            let t = self.bary[j] / (x - self.nodes[j]);
            out[j] = t;
            denom += t;
        }
        for v in &mut out {
            *v /= denom;
        }
        out
    }

    /// Interpolation matrix from this basis' nodes to arbitrary points.
    pub fn interpolation_matrix(&self, points: &[f64]) -> DenseMatrix {
        let rows: Vec<Vec<f64>> = points.iter().map(|&x| self.lagrange_at(x)).collect();
        DenseMatrix::from_fn(points.len(), self.n_nodes(), |i, j| rows[i][j])
    }

    /// Evaluate the interpolant of nodal `values` at `x`.
    pub fn evaluate(&self, values: &[f64], x: f64) -> f64 {
        self.lagrange_at(x)
            .iter()
            .zip(values)
            .map(|(l, v)| l * v)
            .sum()
    }

    /// Consistent (exactly integrated) mass matrix `∫ ℓ_k ℓ_j dx`.
    pub fn exact_mass_matrix(&self) -> Result<DenseMatrix, BasisError> {
        let quad = lgl_nodes_and_weights(2 * self.order + 2)?;
        let vals: Vec<Vec<f64>> = quad.nodes.iter().map(|&x| self.lagrange_at(x)).collect();
        let n = self.n_nodes();
        Ok(DenseMatrix::from_fn(n, n, |k, j| {
            vals.iter()
                .zip(&quad.weights)
                .map(|(l, w)| w * l[k] * l[j])
                .sum()
        }))
    }
}

/// LGL nodes (roots of `(1-x²) P_N'(x)`) and weights for order `N ≥ 1`.
///
/// Newton iteration seeded with Chebyshev-Gauss-Lobatto points. The returned
/// nodes are exactly antisymmetric about zero.
pub fn lgl_nodes_and_weights(order: usize) -> Result<NodalBasis, BasisError> {
    if order == 0 {
        return Err(BasisError::DegenerateOrder(order));
    }
    let n = order;
    let nf = n as f64;
    let mut nodes: Vec<f64> = (0..=n)
        .map(|j| -(std::f64::consts::PI * j as f64 / nf).cos())
        .collect();
    for x in nodes.iter_mut().take(n).skip(1) {
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, p_prev) = legendre(n, *x);
            let dx = (*x * p - p_prev) / ((nf + 1.0) * p);
            *x -= dx;
            if dx.abs() <= NEWTON_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(BasisError::NoConvergence(order));
        }
    }
    nodes[0] = -1.0;
    nodes[n] = 1.0;
    for j in 0..=n / 2 {
        let s = 0.5 * (nodes[n - j] - nodes[j]);
        nodes[j] = -s;
        nodes[n - j] = s;
    }
    if n.is_multiple_of(2) {
        nodes[n / 2] = 0.0;
    }

    let weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let (p, _) = legendre(n, x);
            2.0 / (nf * (nf + 1.0) * p * p)
        })
        .collect();

    let bary: Vec<f64> = (0..=n)
        .map(|j| {
            let prod: f64 = (0..=n)
                .filter(|&k| k != j)
                .map(|k| nodes[j] - nodes[k])
                .product();
            1.0 / prod
        })
        .collect();

    let mut basis = NodalBasis {
        order,
        nodes,
        mass_diag: weights.clone(),
        weights,
        diff_matrix: DenseMatrix::zeros(n + 1, n + 1),
        bary,
    };
    basis.diff_matrix = differentiation_matrix(&basis);
    Ok(basis)
}

/// Collocation derivative matrix, `D[i][j] = dℓ_j/dx (x_i)`.
///
/// Off-diagonal entries from barycentric weights; the diagonal is the negative
/// row sum so constants are differentiated to exactly zero.
pub fn differentiation_matrix(basis: &NodalBasis) -> DenseMatrix {
    let n = basis.n_nodes();
    let x = &basis.nodes;
    let w = &basis.bary;
    let mut d = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (w[j] / w[i]) / (x[i] - x[j]);
                d.set(i, j, v);
                diag -= v;
            }
        }
        d.set(i, i, diag);
    }
    d
}

/// Which half of a segment a mortar (or child) covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Half {
    Lo,
    Hi,
}

impl Half {
    pub const BOTH: [Half; 2] = [Half::Lo, Half::Hi];

    /// Parent coordinate of the mortar coordinate `x ∈ [-1, 1]`.
    #[inline]
    pub fn to_parent(self, x: f64) -> f64 {
        match self {
            Half::Lo => 0.5 * (x - 1.0),
            Half::Hi => 0.5 * (x + 1.0),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Half::Lo => 0,
            Half::Hi => 1,
        }
    }
}

/// 1D L² projections between a segment and its two halves.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub order: usize,
    pub parent_to_child_lo: DenseMatrix,
    pub parent_to_child_hi: DenseMatrix,
    pub child_to_parent_lo: DenseMatrix,
    pub child_to_parent_hi: DenseMatrix,
    /// Size of each half relative to the parent segment.
    pub scale_factors: [f64; 2],
}

impl ProjectionSet {
    pub fn parent_to_child(&self, half: Half) -> &DenseMatrix {
        match half {
            Half::Lo => &self.parent_to_child_lo,
            Half::Hi => &self.parent_to_child_hi,
        }
    }

    pub fn child_to_parent(&self, half: Half) -> &DenseMatrix {
        match half {
            Half::Lo => &self.child_to_parent_lo,
            Half::Hi => &self.child_to_parent_hi,
        }
    }
}

/// Build the projection matrices `P = M⁻¹ S` for the 2:1 configuration.
///
/// `S_i[k][j] = ∫ ℓ_k(x) ℓ_j(ξ_i(x)) dx` over mortar `i`, integrated with an
/// LGL rule of order `2N+2`. Parent-to-child is `M⁻¹ S_i`; child-to-parent is
/// `s_i M⁻¹ S_iᵀ` with `s_i = 1/2`.
pub fn build_projection_set(basis: &NodalBasis) -> Result<ProjectionSet, BasisError> {
    let n = basis.n_nodes();
    let quad = lgl_nodes_and_weights(2 * basis.order + 2)?;
    let mass = basis.exact_mass_matrix()?;
    let mass_inv = mass
        .try_inverse()
        .ok_or(BasisError::SingularMass(basis.order))?;

    let mixed = |half: Half| {
        let mortar_vals: Vec<Vec<f64>> = quad.nodes.iter().map(|&x| basis.lagrange_at(x)).collect();
        let parent_vals: Vec<Vec<f64>> = quad
            .nodes
            .iter()
            .map(|&x| basis.lagrange_at(half.to_parent(x)))
            .collect();
        DenseMatrix::from_fn(n, n, |k, j| {
            (0..quad.nodes.len())
                .map(|q| quad.weights[q] * mortar_vals[q][k] * parent_vals[q][j])
                .sum()
        })
    };
    let s_lo = mixed(Half::Lo);
    let s_hi = mixed(Half::Hi);
    let scale = 0.5;
    Ok(ProjectionSet {
        order: basis.order,
        parent_to_child_lo: mass_inv.matmul(&s_lo),
        parent_to_child_hi: mass_inv.matmul(&s_hi),
        child_to_parent_lo: mass_inv.matmul(&s_lo.transpose()).scaled(scale),
        child_to_parent_hi: mass_inv.matmul(&s_hi.transpose()).scaled(scale),
        scale_factors: [scale, scale],
    })
}

/// Apply `a ⊗ b` to a tensor-product field stored with the first index fastest:
/// `out[i + n*j] = Σ_{k,l} a[i][k] b[j][l] f[k + n*l]`.
pub fn apply_tensor(a: &DenseMatrix, b: &DenseMatrix, f: &[f64], out: &mut [f64]) {
    let n = a.cols();
    let m = b.cols();
    let mut tmp = vec![0.0; a.rows() * m];
    for l in 0..m {
        for i in 0..a.rows() {
            tmp[i + a.rows() * l] = (0..n).map(|k| a.get(i, k) * f[k + n * l]).sum();
        }
    }
    for j in 0..b.rows() {
        for i in 0..a.rows() {
            out[i + a.rows() * j] = (0..m).map(|l| b.get(j, l) * tmp[i + a.rows() * l]).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Gauss-Legendre (5 points) over many panels: an oracle
    /// independent of the LGL construction.
    fn brute_integral(f: impl Fn(f64) -> f64) -> f64 {
        let gx = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683,
            0.0,
            0.538_469_310_105_683,
            0.906_179_845_938_664,
        ];
        let gw = [
            0.236_926_885_056_189,
            0.478_628_670_499_366,
            0.568_888_888_888_889,
            0.478_628_670_499_366,
            0.236_926_885_056_189,
        ];
        let panels = 2000;
        let h = 2.0 / panels as f64;
        let mut s = 0.0;
        for p in 0..panels {
            let a = -1.0 + p as f64 * h;
            for (x, w) in gx.iter().zip(&gw) {
                s += w * 0.5 * h * f(a + 0.5 * h * (x + 1.0));
            }
        }
        s
    }

    #[test]
    fn order_zero_is_rejected() {
        assert_eq!(
            lgl_nodes_and_weights(0).unwrap_err(),
            BasisError::DegenerateOrder(0)
        );
    }

    #[test]
    fn linear_basis() {
        let b = lgl_nodes_and_weights(1).unwrap();
        assert_eq!(b.nodes, vec![-1.0, 1.0]);
        assert_eq!(b.weights, vec![1.0, 1.0]);
        let d = &b.diff_matrix;
        for i in 0..2 {
            assert!((d.get(i, 0) + 0.5).abs() < 1e-15);
            assert!((d.get(i, 1) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_basis_against_brute_force_weights() {
        let b = lgl_nodes_and_weights(2).unwrap();
        assert_eq!(b.nodes, vec![-1.0, 0.0, 1.0]);
        // Weights by integrating the Lagrange cardinals with the oracle rule.
        for j in 0..3 {
            let w = brute_integral(|x| b.lagrange_at(x)[j]);
            assert!((w - b.weights[j]).abs() < 1e-12, "w[{j}]");
        }
        assert!((b.weights[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!((b.weights[1] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn weights_sum_to_two_and_nodes_are_symmetric() {
        for n in 1..=9 {
            let b = lgl_nodes_and_weights(n).unwrap();
            let s: f64 = b.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-14, "N={n}");
            for j in 0..=n {
                assert_eq!(b.nodes[j], -b.nodes[n - j]);
                if j > 0 {
                    assert!(b.nodes[j] > b.nodes[j - 1]);
                }
            }
            assert_eq!(b.mass_diag, b.weights);
        }
    }

    #[test]
    fn quadrature_is_exact_to_degree_2n_minus_1() {
        for n in 1..=8 {
            let b = lgl_nodes_and_weights(n).unwrap();
            for k in 0..=(2 * n - 1) {
                let q: f64 = b
                    .nodes
                    .iter()
                    .zip(&b.weights)
                    .map(|(x, w)| w * x.powi(k as i32))
                    .sum();
                let exact = if k % 2 == 0 {
                    2.0 / (k as f64 + 1.0)
                } else {
                    0.0
                };
                assert!((q - exact).abs() < 1e-13, "N={n} k={k}");
            }
        }
    }

    #[test]
    fn differentiation_of_monomials() {
        for n in 1..=8 {
            let b = lgl_nodes_and_weights(n).unwrap();
            let ones = vec![1.0; n + 1];
            assert!(b
                .diff_matrix
                .apply_vec(&ones)
                .iter()
                .all(|v| v.abs() < 1e-13));
            for k in 1..=n {
                let f: Vec<f64> = b.nodes.iter().map(|x| x.powi(k as i32)).collect();
                let df = b.diff_matrix.apply_vec(&f);
                for (x, d) in b.nodes.iter().zip(&df) {
                    let exact = k as f64 * x.powi(k as i32 - 1);
                    assert!((d - exact).abs() < 1e-11, "N={n} k={k}");
                }
            }
        }
        let b = lgl_nodes_and_weights(4).unwrap();
        let f: Vec<f64> = b.nodes.iter().map(|x| x * x).collect();
        for (x, d) in b.nodes.iter().zip(b.diff_matrix.apply_vec(&f)) {
            assert!((d - 2.0 * x).abs() < 1e-13);
        }
    }

    #[test]
    fn projections_on_simple_fields() {
        let b = lgl_nodes_and_weights(1).unwrap();
        let p = build_projection_set(&b).unwrap();
        let lo = p.parent_to_child_lo.apply_vec(&b.nodes);
        assert!((lo[0] + 1.0).abs() < 1e-14 && lo[1].abs() < 1e-14);
        for n in 1..=6 {
            let b = lgl_nodes_and_weights(n).unwrap();
            let p = build_projection_set(&b).unwrap();
            assert_eq!(p.scale_factors, [0.5, 0.5]);
            let ones = vec![1.0; n + 1];
            for h in Half::BOTH {
                let c = p.parent_to_child(h).apply_vec(&ones);
                assert!(c.iter().all(|v| (v - 1.0).abs() < 1e-13));
            }
            let back: Vec<f64> = p
                .child_to_parent_lo
                .apply_vec(&ones)
                .iter()
                .zip(p.child_to_parent_hi.apply_vec(&ones))
                .map(|(a, b)| a + b)
                .collect();
            assert!(back.iter().all(|v| (v - 1.0).abs() < 1e-13), "N={n}");
        }
    }

    #[test]
    fn parent_to_child_reproduces_polynomials() {
        for n in 1..=7 {
            let b = lgl_nodes_and_weights(n).unwrap();
            let p = build_projection_set(&b).unwrap();
            let poly = |x: f64| {
                (0..=n)
                    .map(|k| (0.3 + k as f64 * 0.1) * x.powi(k as i32))
                    .sum::<f64>()
            };
            let f: Vec<f64> = b.nodes.iter().map(|&x| poly(x)).collect();
            for h in Half::BOTH {
                let c = p.parent_to_child(h).apply_vec(&f);
                for (x, v) in b.nodes.iter().zip(&c) {
                    assert!((v - poly(h.to_parent(*x))).abs() < 1e-12);
                }
                let round: Vec<f64> = p
                    .child_to_parent_lo
                    .apply_vec(&p.parent_to_child_lo.apply_vec(&f));
                let round2 = p
                    .child_to_parent_hi
                    .apply_vec(&p.parent_to_child_hi.apply_vec(&f));
                for k in 0..=n {
                    assert!((round[k] + round2[k] - f[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tensor_apply_matches_separable_product() {
        let b = lgl_nodes_and_weights(3).unwrap();
        let p = build_projection_set(&b).unwrap();
        let n = 4;
        let f: Vec<f64> = (0..n * n)
            .map(|k| {
                let (x, y) = (b.nodes[k % n], b.nodes[k / n]);
                x * x * y + 2.0 * y - x
            })
            .collect();
        let mut out = vec![0.0; n * n];
        apply_tensor(&p.parent_to_child_hi, &p.parent_to_child_lo, &f, &mut out);
        for k in 0..n * n {
            let (x, y) = (
                Half::Hi.to_parent(b.nodes[k % n]),
                Half::Lo.to_parent(b.nodes[k / n]),
            );
            assert!((out[k] - (x * x * y + 2.0 * y - x)).abs() < 1e-13);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn back_projection_conserves_integral(
                n in 1usize..8,
                seed in proptest::collection::vec(-5.0f64..5.0, 20)
            ) {
                let b = lgl_nodes_and_weights(n).unwrap();
                let p = build_projection_set(&b).unwrap();
                let lo: Vec<f64> = seed.iter().take(n + 1).cloned().collect();
                let hi: Vec<f64> = seed.iter().rev().take(n + 1).cloned().collect();
                let back: Vec<f64> = p.child_to_parent_lo.apply_vec(&lo).iter()
                    .zip(p.child_to_parent_hi.apply_vec(&hi)).map(|(a, c)| a + c).collect();
                let parent_int: f64 = b.weights.iter().zip(&back).map(|(w, v)| w * v).sum();
                let mortar_int: f64 = b.weights.iter().zip(lo.iter().zip(&hi))
                    .map(|(w, (a, c))| w * (a + c)).sum::<f64>() * 0.5;
                prop_assert!((parent_int - mortar_int).abs() < 1e-12 * (1.0 + mortar_int.abs()));
            }
        }
    }
}
