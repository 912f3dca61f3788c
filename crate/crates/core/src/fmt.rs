//! Number formatting shared by CSV slices and equation printing.

/// Formats `value` with `digits` significant digits, `%g` style: trailing
/// zeros are dropped and scientific notation is used for very small or very
/// large magnitudes.
pub fn sig(value: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if value == 0.0 {
        return "0".to_string();
    }
    if !value.is_finite() {
        return if value.is_nan() {
            "nan".to_string()
        } else if value > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    // Round first so that the exponent reflects carries such as 999999.5 -> 1e6.
    let sci = format!("{:.*e}", digits - 1, value);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, value)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::sig;

    #[test]
    fn matches_printf_g() {
        assert_eq!(sig(0.0, 6), "0");
        assert_eq!(sig(1.0, 6), "1");
        assert_eq!(sig(-10.0, 6), "-10");
        assert_eq!(sig(2.66667, 6), "2.66667");
        assert_eq!(sig(2.666666666, 6), "2.66667");
        assert_eq!(sig(0.367879441, 6), "0.367879");
        assert_eq!(sig(123456789.0, 6), "1.23457e+08");
        assert_eq!(sig(0.0000123456, 6), "1.23456e-05");
        assert_eq!(sig(999999.5, 6), "1e+06");
        assert_eq!(sig(0.0001, 6), "0.0001");
        assert_eq!(sig(f64::NEG_INFINITY, 6), "-inf");
    }
}
