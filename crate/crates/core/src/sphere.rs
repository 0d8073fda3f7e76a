//! Cubed-sphere geometry.
//!
//! Six right-handed tiles, each an equiangular gnomonic projection of a cube
//! face. Tile `t` has outward normal `n`, and local axes `(u, v)` with
//! `u × v = n`; a point with tile parameters `(a, b) ∈ [-1, 1]²` sits at
//! `n + tan(πa/4) u + tan(πb/4) v`, projected to the sphere.

use thiserror::Error;

pub type Vec3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SphereError {
    #[error("degenerate spherical triangle")]
    DegenerateTriangle,
    #[error("rank-deficient tangent columns in surface Jacobian")]
    RankDeficient,
    #[error("cubed sphere needs at least one element per tile edge")]
    EmptyTile,
}

/// Tile frames `(normal, u, v)` as integer unit vectors.
pub const TILE_FRAMES: [[[i64; 3]; 3]; 6] = [
    [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
    [[0, 1, 0], [-1, 0, 0], [0, 0, 1]],
    [[-1, 0, 0], [0, -1, 0], [0, 0, 1]],
    [[0, -1, 0], [1, 0, 0], [0, 0, 1]],
    [[0, 0, 1], [0, 1, 0], [-1, 0, 0]],
    [[0, 0, -1], [0, 1, 0], [1, 0, 0]],
];

/// Tile whose normal is the given integer unit vector.
pub fn tile_with_normal(n: [i64; 3]) -> usize {
    TILE_FRAMES
        .iter()
        .position(|f| f[0] == n)
        .expect("unit axis vector")
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

/// Equiangular parameter to gnomonic coordinate, exact at the tile edges.
#[inline]
fn equiangular(a: f64) -> f64 {
    if a == 1.0 {
        1.0
    } else if a == -1.0 {
        -1.0
    } else if a == 0.0 {
        0.0
    } else {
        (std::f64::consts::FRAC_PI_4 * a).tan()
    }
}

/// Point on the sphere of radius `r` for tile parameters `(a, b)`.
pub fn tile_point(tile: usize, a: f64, b: f64, r: f64) -> Vec3 {
    let [n, u, v] = TILE_FRAMES[tile];
    let (ta, tb) = (equiangular(a), equiangular(b));
    let p = [
        n[0] as f64 + ta * u[0] as f64 + tb * v[0] as f64,
        n[1] as f64 + ta * u[1] as f64 + tb * v[1] as f64,
        n[2] as f64 + ta * u[2] as f64 + tb * v[2] as f64,
    ];
    scale(normalize(p), r)
}

/// `(λ, φ)` of a point, λ ∈ [−π, π), φ ∈ [−π/2, π/2].
pub fn lon_lat(p: Vec3) -> (f64, f64) {
    let r = norm(p);
    let mut lon = p[1].atan2(p[0]);
    if lon >= std::f64::consts::PI {
        lon -= 2.0 * std::f64::consts::PI;
    }
    let lat = (p[2] / r).clamp(-1.0, 1.0).asin();
    (lon, lat)
}

pub fn from_lon_lat(lon: f64, lat: f64, r: f64) -> Vec3 {
    [
        r * lat.cos() * lon.cos(),
        r * lat.cos() * lon.sin(),
        r * lat.sin(),
    ]
}

/// Local east and north unit vectors `(ê_λ, ê_φ)`.
pub fn east_north(lon: f64, lat: f64) -> (Vec3, Vec3) {
    let (sl, cl) = lon.sin_cos();
    let (sp, cp) = lat.sin_cos();
    ([-sl, cl, 0.0], [-sp * cl, -sp * sl, cp])
}

pub fn geodesic_distance(lon1: f64, lat1: f64, lon2: f64, lat2: f64, r: f64) -> f64 {
    let c = lat1.sin() * lat2.sin() + lat1.cos() * lat2.cos() * (lon2 - lon1).cos();
    r * c.clamp(-1.0, 1.0).acos()
}

/// Interior angle at `a` of the spherical triangle `a, b, c` (unit vectors).
fn vertex_angle(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let tb = sub(b, scale(a, dot(a, b)));
    let tc = sub(c, scale(a, dot(a, c)));
    norm(cross(tb, tc)).atan2(dot(tb, tc))
}

/// Spherical excess area `r²(θ1 + θ2 + θ3 − π)`.
pub fn spherical_triangle_area(p1: Vec3, p2: Vec3, p3: Vec3, r: f64) -> Result<f64, SphereError> {
    let (a, b, c) = (normalize(p1), normalize(p2), normalize(p3));
    let vol = dot(a, cross(b, c)).abs();
    if !(vol > 1e-300) || a == b || b == c || a == c {
        return Err(SphereError::DegenerateTriangle);
    }
    let excess = vertex_angle(a, b, c) + vertex_angle(b, c, a) + vertex_angle(c, a, b)
        - std::f64::consts::PI;
    Ok(r * r * excess)
}

fn lex_less(a: Vec3, b: Vec3) -> bool {
    a.partial_cmp(&b) == Some(std::cmp::Ordering::Less)
}

/// Area of a great-circle quad (corners counterclockwise) as two spherical
/// triangles, split along the diagonal through the lexicographically smallest
/// corner.
pub fn spherical_quad_area(c: [Vec3; 4], r: f64) -> Result<f64, SphereError> {
    let mut k = 0;
    for i in 1..4 {
        if lex_less(c[i], c[k]) {
            k = i;
        }
    }
    let (a, b, cc, d) = (c[k], c[(k + 1) % 4], c[(k + 2) % 4], c[(k + 3) % 4]);
    Ok(spherical_triangle_area(a, b, cc, r)? + spherical_triangle_area(a, cc, d, r)?)
}

/// Sum of planar (chordal) triangle areas for the same split; the inscribed
/// polyhedron's surface.
pub fn chordal_quad_area(c: [Vec3; 4]) -> f64 {
    let tri = |a: Vec3, b: Vec3, d: Vec3| 0.5 * norm(cross(sub(b, a), sub(d, a)));
    tri(c[0], c[1], c[2]) + tri(c[0], c[2], c[3])
}

/// Moore-Penrose inverse of a Jacobian whose third column vanishes.
///
/// Returns the 2×3 block `(JᵀJ)⁻¹Jᵀ` restricted to the two tangent columns;
/// its rows are the surface gradients of ξ and η.
pub fn pseudo_inverse_jacobian(j: [[f64; 3]; 3]) -> Result<[[f64; 3]; 2], SphereError> {
    let c0 = [j[0][0], j[1][0], j[2][0]];
    let c1 = [j[0][1], j[1][1], j[2][1]];
    pseudo_inverse_columns(c0, c1)
}

/// Pseudo-inverse from the tangent columns `x_ξ` and `x_η`.
#[inline]
pub fn pseudo_inverse_columns(x_xi: Vec3, x_eta: Vec3) -> Result<[[f64; 3]; 2], SphereError> {
    let g11 = dot(x_xi, x_xi);
    let g12 = dot(x_xi, x_eta);
    let g22 = dot(x_eta, x_eta);
    let det = g11 * g22 - g12 * g12;
    if !(det > 1e-14 * g11 * g22) {
        return Err(SphereError::RankDeficient);
    }
    let inv = 1.0 / det;
    let (i11, i12, i22) = (g22 * inv, -g12 * inv, g11 * inv);
    let mut out = [[0.0; 3]; 2];
    for d in 0..3 {
        out[0][d] = i11 * x_xi[d] + i12 * x_eta[d];
        out[1][d] = i12 * x_xi[d] + i22 * x_eta[d];
    }
    Ok(out)
}

/// Root forest of `n × n` elements per tile on a sphere of radius `r`.
pub fn build_cubed_sphere(n: u32, r: f64) -> Result<crate::tree::QuadForest, SphereError> {
    if n == 0 {
        return Err(SphereError::EmptyTile);
    }
    crate::tree::QuadForest::new(crate::tree::Domain::CubedSphere { n, radius: r })
        .map_err(|_| SphereError::EmptyTile)
}

/// Relative change of total area across a mesh event.
pub fn volume_loss_metric(area_before: f64, area_after: f64) -> f64 {
    (area_after - area_before).abs() / area_before
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Van Oosterom-Strackee solid angle, an independent excess oracle.
    fn solid_angle(a: Vec3, b: Vec3, c: Vec3) -> f64 {
        let (a, b, c) = (normalize(a), normalize(b), normalize(c));
        let num = dot(a, cross(b, c)).abs();
        let den = 1.0 + dot(a, b) + dot(b, c) + dot(c, a);
        2.0 * num.atan2(den)
    }

    #[test]
    fn frames_are_right_handed() {
        for f in TILE_FRAMES {
            let to_f = |v: [i64; 3]| [v[0] as f64, v[1] as f64, v[2] as f64];
            assert_eq!(cross(to_f(f[1]), to_f(f[2])), to_f(f[0]));
        }
    }

    #[test]
    fn octant_triangle() {
        let a = spherical_triangle_area([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], 2.0)
            .unwrap();
        assert!((a - 4.0 * PI / 2.0).abs() < 1e-13);
        assert!(
            spherical_triangle_area([1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], 1.0)
                .is_err()
        );
    }

    #[test]
    fn small_triangle_planar_limit() {
        let h = 1e-3;
        let p1 = [1.0, 0.0, 0.0];
        let p2 = normalize([1.0, h, 0.0]);
        let p3 = normalize([1.0, 0.0, h]);
        let a = spherical_triangle_area(p1, p2, p3, 1.0).unwrap();
        let planar = 0.5 * norm(cross(sub(p2, p1), sub(p3, p1)));
        assert!((a / planar - 1.0).abs() < 0.01);
        assert!((a - solid_angle(p1, p2, p3)).abs() < 1e-12);
    }

    #[test]
    fn quad_area_is_diagonal_independent() {
        let c = [
            tile_point(0, -0.3, -0.2, 1.0),
            tile_point(0, 0.4, -0.2, 1.0),
            tile_point(0, 0.4, 0.5, 1.0),
            tile_point(0, -0.3, 0.5, 1.0),
        ];
        let d1 = spherical_triangle_area(c[0], c[1], c[2], 1.0).unwrap()
            + spherical_triangle_area(c[0], c[2], c[3], 1.0).unwrap();
        let d2 = spherical_triangle_area(c[1], c[2], c[3], 1.0).unwrap()
            + spherical_triangle_area(c[1], c[3], c[0], 1.0).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
        assert!((spherical_quad_area(c, 1.0).unwrap() - d1).abs() < 1e-12);
        assert!(chordal_quad_area(c) < d1);
    }

    #[test]
    fn tile_corners_cover_sphere() {
        let mut total = 0.0;
        for t in 0..6 {
            let c = [
                tile_point(t, -1.0, -1.0, 1.0),
                tile_point(t, 1.0, -1.0, 1.0),
                tile_point(t, 1.0, 1.0, 1.0),
                tile_point(t, -1.0, 1.0, 1.0),
            ];
            total += spherical_quad_area(c, 1.0).unwrap();
        }
        assert!((total - 4.0 * PI).abs() < 1e-13);
        // Shared edges evaluate to identical points.
        assert_eq!(
            tile_point(0, 1.0, 0.25, 1.0),
            tile_point(1, -1.0, 0.25, 1.0)
        );
    }

    #[test]
    fn geodesics() {
        let r = 6.371e6;
        assert_eq!(geodesic_distance(0.3, 0.2, 0.3, 0.2, r), 0.0);
        assert!((geodesic_distance(0.0, 0.0, PI, 0.0, r) - PI * r).abs() < 1e-6);
        assert!((geodesic_distance(0.0, 0.0, PI / 2.0, 0.0, r) - PI * r / 2.0).abs() < 1e-6);
        let (lon, lat) = lon_lat(from_lon_lat(-2.0, 0.7, 3.0));
        assert!((lon + 2.0).abs() < 1e-14 && (lat - 0.7).abs() < 1e-14);
    }

    #[test]
    fn pseudo_inverse_cases() {
        let j = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        let p = pseudo_inverse_jacobian(j).unwrap();
        assert_eq!(p, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let j2 = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.0]];
        let p2 = pseudo_inverse_jacobian(j2).unwrap();
        assert_eq!(p2, [[0.5, 0.0, 0.0], [0.0, 0.5, 0.0]]);
        let bad = [[1.0, 2.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 0.0]];
        assert_eq!(
            pseudo_inverse_jacobian(bad),
            Err(SphereError::RankDeficient)
        );
    }

    #[test]
    fn pseudo_inverse_matches_least_squares_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let c0: Vec3 = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let c1: Vec3 = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            if norm(cross(c0, c1)) < 0.2 {
                continue;
            }
            let p = pseudo_inverse_columns(c0, c1).unwrap();
            let m = nalgebra::Matrix3x2::new(c0[0], c1[0], c0[1], c1[1], c0[2], c1[2]);
            let oracle = m.pseudo_inverse(1e-14).unwrap();
            for r in 0..2 {
                for c in 0..3 {
                    assert!((p[r][c] - oracle[(r, c)]).abs() < 1e-12);
                }
            }
            // J⁺J = I₂
            for (r, row) in p.iter().enumerate() {
                assert!((dot(*row, c0) - if r == 0 { 1.0 } else { 0.0 }).abs() < 1e-12);
                assert!((dot(*row, c1) - if r == 1 { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn east_north_are_tangent() {
        for &(lon, lat) in &[(0.1, 0.2), (-2.0, -1.1), (3.0, 1.5)] {
            let p = from_lon_lat(lon, lat, 1.0);
            let (e, n) = east_north(lon, lat);
            assert!(dot(e, p).abs() < 1e-15 && dot(n, p).abs() < 1e-15);
            assert!((norm(e) - 1.0).abs() < 1e-15 && (norm(n) - 1.0).abs() < 1e-15);
            assert!((dot(cross(e, n), p) - 1.0).abs() < 1e-14);
        }
    }
}
