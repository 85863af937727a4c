//! Stable numeric formatting for CSV output.
//!
//! Every real number is printed in scientific notation with 9 significant
//! digits and a '.' decimal separator so re-runs and cross-machine diffs are
//! byte-stable.

/// Format with 9 significant digits. Negative zero prints as zero.
pub fn fmt_sig9(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.8e}")
}

/// Quote a CSV field if it contains a delimiter, quote, or line break.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Join fields into one CSV row (no trailing newline).
pub fn csv_row<I: IntoIterator<Item = String>>(fields: I) -> String {
    fields.into_iter().collect::<Vec<_>>().join(",")
}
