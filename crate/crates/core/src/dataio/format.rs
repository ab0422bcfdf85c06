/// Formats a real with 9 significant digits, in the style of C's `%.9g`.
///
/// Re-parsing the output and formatting again yields the same string, so a
/// dataset loaded from a file survives a write/load cycle bit-exactly.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent in {:e} output");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        format!("{}e{}", trim_fraction(mantissa), exp)
    } else {
        let decimals = (8 - exp) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_owned()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_percent_g() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(-0.5), "-0.5");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(123456789.4), "123456789");
        assert_eq!(format_sig9(1234567890.0), "1.23456789e9");
        assert_eq!(format_sig9(1.5e-7), "1.5e-7");
        assert_eq!(format_sig9(0.0001234), "0.0001234");
        assert_eq!(format_sig9(9.9999999999), "10");
        assert_eq!(format_sig9(-5.0), "-5");
    }

    #[test]
    fn reformatting_is_stable() {
        for &x in &[
            std::f64::consts::PI,
            -2.718281828459045e-12,
            6.02214076e23,
            0.1 + 0.2,
        ] {
            let s = format_sig9(x);
            let y: f64 = s.parse().unwrap();
            assert_eq!(format_sig9(y), s);
        }
    }
}
