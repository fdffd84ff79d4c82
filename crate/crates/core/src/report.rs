//! Lossless numeric formatting and the line-oriented CSV writers shared by the
//! trace, volume and verdict outputs.
//!
//! Every number written to disk goes through [`fmt_g17`], which renders 17
//! significant digits (the `%.17g` convention). Parsing the text back yields
//! the original `f64` bit pattern, so regression diffs on CSV files are exact.

use std::fmt::Write as _;

/// Format a double with 17 significant digits, `%g`-style: fixed notation for
/// moderate exponents, scientific otherwise, trailing zeros trimmed.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x < 0.0 { "-inf" } else { "inf" }.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    // 17 significant digits always round-trip an f64.
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        trim_trailing_zeros(&fixed)
    } else {
        let mantissa = trim_trailing_zeros(mantissa);
        let mut out = String::with_capacity(mantissa.len() + 5);
        let _ = write!(out, "{}e{}{:02}", mantissa, if exp < 0 { '-' } else { '+' }, exp.abs());
        out
    }
}

fn trim_trailing_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_string()
}

/// Join formatted fields into one CSV row (no quoting needed: fields are
/// numeric or bare identifiers).
pub fn csv_row<I: IntoIterator<Item = String>>(fields: I) -> String {
    let mut row = String::new();
    for (i, f) in fields.into_iter().enumerate() {
        if i > 0 {
            row.push(',');
        }
        row.push_str(&f);
    }
    row.push('\n');
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_and_scientific_forms() {
        assert_eq!(fmt_g17(0.0), "0");
        assert_eq!(fmt_g17(1.0), "1");
        assert_eq!(fmt_g17(0.5), "0.5");
        assert_eq!(fmt_g17(-2.25), "-2.25");
        assert_eq!(fmt_g17(1e-7), "1e-07");
        assert_eq!(fmt_g17(1e20), "1e+20");
        assert_eq!(fmt_g17(f64::INFINITY), "inf");
        assert_eq!(fmt_g17(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn pi_round_trips() {
        let s = fmt_g17(std::f64::consts::PI);
        assert_eq!(s.parse::<f64>().unwrap(), std::f64::consts::PI);
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite() && x != 0.0);
            let back: f64 = fmt_g17(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
