/// Significant digits kept when a number is spliced into text.
pub const SIGNIFICANT_DIGITS: usize = 12;

/// Renders with at most 12 significant digits, trailing zeros trimmed.
/// Integers carry no decimal point; magnitudes outside `[1e-7, 1e15)` use
/// `<mantissa>e<exp>`.
pub fn render_number(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".into() } else { v.to_string() };
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };

    let body = if (-7..15).contains(&exp) {
        if exp >= 0 {
            let int_len = exp as usize + 1;
            if digits.len() <= int_len {
                format!("{digits}{}", "0".repeat(int_len - digits.len()))
            } else {
                format!("{}.{}", &digits[..int_len], &digits[int_len..])
            }
        } else {
            format!("0.{}{digits}", "0".repeat((-exp - 1) as usize))
        }
    } else if digits.len() == 1 {
        format!("{digits}e{exp}")
    } else {
        format!("{}.{}e{exp}", &digits[..1], &digits[1..])
    };
    if negative {
        format!("-{body}")
    } else {
        body
    }
}

/// Probability-table rendering: four decimals.
pub fn render_probability(p: f64) -> String {
    format!("{p:.4}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_have_no_point() {
        assert_eq!(render_number(14.0), "14");
        assert_eq!(render_number(-20.0), "-20");
        assert_eq!(render_number(1e14), "100000000000000");
        assert_eq!(render_number(-0.0), "0");
    }

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(render_number(1.628894626777442), "1.62889462678");
        assert_eq!(render_number(1.0 / 3.0), "0.333333333333");
        assert_eq!(render_number(0.1 + 0.2), "0.3");
        assert_eq!(render_number(2.2), "2.2");
        assert_eq!(render_number(123456.7890123456), "123456.789012");
    }

    #[test]
    fn extreme_magnitudes_use_exponent() {
        assert_eq!(render_number(1e15), "1e15");
        assert_eq!(render_number(1.5e-9), "1.5e-9");
        assert_eq!(render_number(0.0000001), "0.0000001");
        assert_eq!(render_number(-2.5e20), "-2.5e20");
    }

    #[test]
    fn probabilities() {
        assert_eq!(render_probability(0.5), "0.5000");
        assert_eq!(render_probability(0.975002104851780), "0.9750");
    }
}
