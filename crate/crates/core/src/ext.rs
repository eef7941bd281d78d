//! Extended nonnegative arithmetic with the `0 · ∞ = 0` convention.

/// Product with `0 · ∞ = 0`.
#[inline]
pub fn mul(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// `a^e` for `a >= 0`, `e > 0`, with `∞^e = ∞` and `0^e = 0`.
#[inline]
pub fn pow(a: f64, e: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else if e == 1.0 {
        a
    } else if e == 2.0 {
        a * a
    } else {
        a.powf(e)
    }
}

/// `a / b` with `x / 0 = 0`, the convention for averages over massless sets.
#[inline]
pub fn ratio_or_zero(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Relative difference `|a - b| / max(|a|, |b|, tiny)`; equal infinities give 0.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    (a - b).abs() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_times_infinity_is_zero() {
        assert_eq!(mul(0.0, f64::INFINITY), 0.0);
        assert_eq!(mul(f64::INFINITY, 0.0), 0.0);
        assert_eq!(mul(2.0, f64::INFINITY), f64::INFINITY);
        assert_eq!(pow(f64::INFINITY, 0.5), f64::INFINITY);
        assert_eq!(pow(0.0, 0.5), 0.0);
        assert_eq!(ratio_or_zero(3.0, 0.0), 0.0);
        assert_eq!(rel_diff(f64::INFINITY, f64::INFINITY), 0.0);
        assert!((rel_diff(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
