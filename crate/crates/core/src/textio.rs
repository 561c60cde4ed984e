//! Numeric text helpers shared by the corpus and checkpoint formats.
//! Floats are written with 17 significant digits, which round-trips `f64`.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn push_floats(out: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(out, " {v:.16e}");
    }
}

pub(crate) fn parse_field<T: FromStr>(token: &str, line: usize) -> Result<T> {
    token.parse().map_err(|_| Error::Parse {
        line,
        reason: format!("cannot parse `{token}`"),
    })
}

pub(crate) fn parse_floats(tokens: &[&str], line: usize) -> Result<Vec<f64>> {
    tokens.iter().map(|t| parse_field::<f64>(t, line)).collect()
}
