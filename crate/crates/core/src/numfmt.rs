//! Fixed-precision number output.
//!
//! Every number written to an output file is first rounded to 9 significant
//! digits and then printed in its shortest round-trip form, so reruns produce
//! identical bytes and re-reading a file reproduces the printed value exactly.

pub const SIGNIFICANT_DIGITS: usize = 9;

pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

pub fn fmt_sig9(x: f64) -> String {
    let r = round_sig9(x);
    if r == 0.0 {
        // collapse -0
        "0".to_string()
    } else {
        format!("{r}")
    }
}

pub(crate) fn round_all(xs: &[f64]) -> Vec<f64> {
    xs.iter().copied().map(round_sig9).collect()
}
