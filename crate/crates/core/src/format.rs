//! Float formatting for emitted CSV.

/// Shortest decimal string that parses back to exactly `x`. Very large and
/// very small magnitudes switch to exponent notation.
pub fn fmt_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(fmt_float(0.1), "0.1");
        assert_eq!(fmt_float(1.0), "1");
        assert_eq!(fmt_float(1e-300), "1e-300");
        assert_eq!(fmt_float(-2.5e20), "-2.5e20");
    }

    proptest! {
        #[test]
        fn round_trips(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back: f64 = fmt_float(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
