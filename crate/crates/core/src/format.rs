//! Fixed-precision number formatting for CSV output.

/// Formats `x` with `digits` significant digits like C's `%g` (plain
/// notation for moderate exponents, scientific otherwise, no trailing
/// zeros), with Rust's exponent spelling `1e-7` instead of `1e-07`.
pub fn significant(x: f64, digits: usize) -> String {
    assert!(digits >= 1, "need at least one significant digit");
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    // Round first, then read the exponent of the rounded value.
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// [`significant`] with the 9 digits used by every CSV this crate writes.
pub fn csv_number(x: f64) -> String {
    significant(x, 9)
}
