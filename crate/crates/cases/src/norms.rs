//! Error norms.

/// `(1/N_dof) · sqrt(Σ |q − q_exact|²)` over all `N_dof` values.
///
/// The normalisation sits outside the square root, so for `N` equal errors
/// `e` the result is `e / √N`, not `e`.
pub fn l2_error_norm(state: &[f64], exact: &[f64]) -> f64 {
    assert_eq!(
        state.len(),
        exact.len(),
        "state and exact solution differ in size"
    );
    if state.is_empty() {
        return 0.0;
    }
    let s: f64 = state
        .iter()
        .zip(exact)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    s.sqrt() / state.len() as f64
}

/// Area-weighted RMS error `sqrt(∫ Σ_v e_v² dA / ∫ dA)`, given the
/// quadrature sum `∫ Σ_v e_v² dA` and the area.
pub fn weighted_rms(integral_of_squares: f64, area: f64) -> f64 {
    (integral_of_squares / area).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(l2_error_norm(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(l2_error_norm(&[3.5], &[3.0]), 0.5);
    }

    proptest! {
        #[test]
        fn identical_errors_scale_with_inverse_root(e in 1e-6f64..10.0, n in 1usize..500) {
            let exact = vec![0.0; n];
            let state = vec![e; n];
            let want = e / (n as f64).sqrt();
            prop_assert!((l2_error_norm(&state, &exact) - want).abs() <= 1e-14 * want);
        }
    }
}
