//! CSV cell formatting: '.' decimal separator, no locale dependence, 17
//! significant digits so values round-trip exactly.

/// Format a float with 17 significant digits (scientific). Infinities print
/// as `inf`/`-inf`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Join one CSV row.
pub fn row(cells: &[String]) -> String {
    cells.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_round_trips() {
        for v in [
            0.0,
            1.0,
            -1.5,
            std::f64::consts::PI,
            1e-300,
            2_097_152.0,
            f64::MIN_POSITIVE,
        ] {
            let text = fmt_f64(v);
            let back: f64 = text.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{text}");
        }
    }

    #[test]
    fn infinity_prints_as_inf() {
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
    }
}
