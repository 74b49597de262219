//! Text formatting shared by the CSV writers.

/// Formats like C's `%.{digits}g`: shortest of fixed or exponential notation
/// with `digits` significant digits and trailing zeros removed.
pub fn sig(value: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if value.is_nan() {
        return "nan".into();
    }
    if value.is_infinite() {
        return if value > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if value == 0.0 {
        return if value.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let exp_form = format!("{:.*e}", digits - 1, value);
    let (mantissa, exponent) = exp_form.split_once('e').expect("exponent");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    if exponent < -4 || exponent >= digits as i32 {
        let mantissa = trim_fraction(mantissa);
        let sign = if exponent < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exponent.abs())
    } else {
        let decimals = (digits as i32 - 1 - exponent).max(0) as usize;
        trim_fraction(&format!("{value:.decimals$}")).to_string()
    }
}

/// `%.9g`, the precision used by every CSV the crate writes.
pub fn sig9(value: f64) -> String {
    sig(value, 9)
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
