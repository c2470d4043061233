//! Serde adapter writing `f64` values as decimal strings.
//!
//! Rust's `Display` for `f64` prints the shortest string that parses back to
//! the same value, so the encoding is both canonical and lossless.

use serde::{de, Deserialize, Deserializer, Serializer};

pub fn format(value: f64) -> String {
    if value == 0.0 {
        // -0 and 0 compare equal; keep one spelling.
        return "0".to_owned();
    }
    value.to_string()
}

pub fn parse(text: &str) -> Result<f64, String> {
    let value: f64 = text
        .trim()
        .parse()
        .map_err(|_| format!("not a decimal number: {text:?}"))?;
    if !value.is_finite() {
        return Err(format!("not a finite number: {text:?}"));
    }
    Ok(value)
}

pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    serializer.serialize_str(&format(*value))
}

pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
    let text = String::deserialize(deserializer)?;
    parse(&text).map_err(de::Error::custom)
}
