/// RD multiplier at QIndex 0.
pub const LAMBDA_MIN: f64 = 0.0018;
/// RD multiplier at QIndex 1.
pub const LAMBDA_MAX: f64 = 0.0932;

/// Geometric interpolation `λ_min·(λ_max/λ_min)^q`, `q` clamped to `[0, 1]`.
/// The endpoints are returned exactly.
pub fn lambda_of_qindex(q: f64) -> f64 {
    let q = if q.is_nan() { 0.0 } else { q.clamp(0.0, 1.0) };
    if q == 0.0 {
        LAMBDA_MIN
    } else if q == 1.0 {
        LAMBDA_MAX
    } else {
        LAMBDA_MIN * (LAMBDA_MAX / LAMBDA_MIN).powf(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(lambda_of_qindex(0.0), 0.0018);
        assert_eq!(lambda_of_qindex(1.0), 0.0932);
        assert!((lambda_of_qindex(0.5) - (0.0018f64 * 0.0932).sqrt()).abs() < 1e-12);
        assert!((lambda_of_qindex(0.5) - 0.012953).abs() < 1e-6);
        assert_eq!(lambda_of_qindex(-3.0), LAMBDA_MIN);
        assert_eq!(lambda_of_qindex(7.0), LAMBDA_MAX);
    }

    #[test]
    fn strictly_increasing() {
        let mut prev = 0.0;
        for i in 0..=1000 {
            let l = lambda_of_qindex(i as f64 / 1000.0);
            assert!(l > prev);
            prev = l;
        }
    }
}
