//! Face values from cell averages along one grid line.

/// Accuracy order of the face interpolant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StencilOrder {
    Second,
    Third,
    Fourth,
}

impl StencilOrder {
    pub fn from_int(order: u32) -> Option<Self> {
        match order {
            2 => Some(Self::Second),
            3 => Some(Self::Third),
            4 => Some(Self::Fourth),
            _ => None,
        }
    }

    pub fn as_int(self) -> u32 {
        match self {
            Self::Second => 2,
            Self::Third => 3,
            Self::Fourth => 4,
        }
    }
}

/// Value at face `m − 1/2` from `q = [q_{m−2}, q_{m−1}, q_m, q_{m+1}]`.
///
/// `wind` only matters for the third-order form, which leans upwind:
/// `wind > 0` favours `q_{m−1}`.
#[inline]
pub fn face_interp(q: [f64; 4], order: StencilOrder, wind: f64) -> f64 {
    let [qm2, qm1, qm, qp1] = q;
    match order {
        StencilOrder::Second => 0.5 * (qm + qm1),
        StencilOrder::Fourth => 7.0 / 12.0 * (qm + qm1) - 1.0 / 12.0 * (qp1 + qm2),
        StencilOrder::Third => {
            let centred = 7.0 / 12.0 * (qm + qm1) - 1.0 / 12.0 * (qp1 + qm2);
            let s = if wind > 0.0 {
                1.0
            } else if wind < 0.0 {
                -1.0
            } else {
                0.0
            };
            centred + s / 12.0 * ((qp1 - qm2) - 3.0 * (qm - qm1))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_index_field() {
        for m in [-3i32, 0, 7] {
            let q = [m - 2, m - 1, m, m + 1].map(f64::from);
            let f = f64::from(m) - 0.5;
            assert_eq!(face_interp(q, StencilOrder::Second, 1.0), f);
            assert!((face_interp(q, StencilOrder::Fourth, 1.0) - f).abs() < 1e-14);
            assert!((face_interp(q, StencilOrder::Third, -1.0) - f).abs() < 1e-14);
        }
    }

    #[test]
    fn third_order_upwind_weights() {
        // u > 0: (−q_{m−2} + 5 q_{m−1} + 2 q_m) / 6
        let q = [1.0, 10.0, 100.0, 1000.0];
        let up = face_interp(q, StencilOrder::Third, 2.0);
        assert!((up - (-1.0 + 50.0 + 200.0) / 6.0).abs() < 1e-12);
        // u < 0: (2 q_{m−1} + 5 q_m − q_{m+1}) / 6
        let down = face_interp(q, StencilOrder::Third, -2.0);
        assert!((down - (20.0 + 500.0 - 1000.0) / 6.0).abs() < 1e-12);
    }
}
