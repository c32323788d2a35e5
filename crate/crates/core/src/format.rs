//! Text formatting shared by every writer so outputs are bit-stable.

/// Real number with 17 significant digits; `NA` for non-finite values.
pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "NA".to_string()
    }
}

/// Optional real, `NA` when absent.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), fmt_real)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exactly() {
        for x in [0.1 + 0.2, -1.0 / 3.0, 1e-300, 6.02e23, 0.0, -0.0] {
            let back: f64 = fmt_real(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
        assert_eq!(fmt_real(f64::NAN), "NA");
        assert_eq!(fmt_opt(None), "NA");
    }
}
