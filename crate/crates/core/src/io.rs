//! Number formatting shared by the CSV and JSON writers.

/// Formats `v` with `sig` significant digits in scientific notation, which
/// round-trips through every CSV reader.
pub fn fmt_sig(v: f64, sig: usize) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    format!("{:.*e}", sig.saturating_sub(1), v)
}

/// Rounds to `sig` significant digits.
pub fn round_sig(v: f64, sig: usize) -> f64 {
    fmt_sig(v, sig).parse().unwrap_or(v)
}

/// Joins values formatted with 12 significant digits.
pub fn csv_line(values: &[f64]) -> String {
    values.iter().map(|v| fmt_sig(*v, 12)).collect::<Vec<_>>().join(",")
}
