//! Deterministic number formatting for every file and console output.

/// Formats with 12 significant digits, trimming trailing zeros.
pub fn fmt12(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        trim_fraction(&s)
    } else {
        let s = format!("{x:.11e}");
        let (mantissa, e) = s.split_once('e').unwrap_or((&s, "0"));
        format!("{}e{}", trim_fraction(mantissa), e)
    }
}

/// Rounds to 12 significant digits, for values serialized as JSON numbers.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn trim_fraction(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt12(1.0), "1");
        assert_eq!(fmt12(-2.5), "-2.5");
        assert_eq!(fmt12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt12(123456.789), "123456.789");
        assert_eq!(fmt12(2.0 / 3.0 * 1e-7), "6.66666666667e-8");
        assert_eq!(fmt12(1e15), "1e15");
        assert_eq!(fmt12(f64::NEG_INFINITY), "-inf");
        assert_eq!(round12(0.1 + 0.2), 0.3);
    }
}
