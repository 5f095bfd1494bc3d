//! Numeric formatting for emitted artifacts: 9 significant digits, plain
//! decimal notation.

/// Format with 9 significant digits. Values that originated with fewer
/// digits round-trip exactly; zero prints as "0".
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = (8 - exponent).max(0) as usize;
    format!("{x:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_sig(0.132014946), "0.132014946");
        assert_eq!(format_sig(0.5), "0.500000000");
        assert_eq!(format_sig(12.3456789), "12.3456789");
        assert_eq!(format_sig(100.0), "100.000000");
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(-0.25), "-0.250000000");
    }

    #[test]
    fn short_decimals_roundtrip_exactly() {
        for v in [0.93, 0.055, 0.1, 0.0001, 87.5] {
            let printed = format_sig(v);
            let reparsed: f64 = printed.parse().unwrap();
            assert_eq!(v.to_bits(), reparsed.to_bits(), "{printed}");
        }
    }
}
