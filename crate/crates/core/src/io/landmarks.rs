//! Landmark files: one `x y` pixel position per line, origin top-left.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::shape::N_LANDMARKS;

pub fn parse_landmarks(text: &str, path: &Path) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(N_LANDMARKS);
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        let parsed: Option<Vec<f64>> = vals.iter().map(|v| v.parse().ok()).collect();
        match parsed.as_deref() {
            Some([x, y]) if x.is_finite() && y.is_finite() => out.push([*x, *y]),
            _ => return Err(Error::format("landmark", path, format!("line {}: expected two numbers", n + 1))),
        }
    }
    if out.len() != N_LANDMARKS {
        return Err(Error::format(
            "landmark",
            path,
            format!("{} points, expected {N_LANDMARKS}", out.len()),
        ));
    }
    Ok(out)
}

pub fn load_landmarks(path: &Path) -> Result<Vec<[f64; 2]>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&text, path)
}

/// Writes with round-trip precision.
pub fn save_landmarks(path: &Path, points: &[[f64; 2]]) -> Result<()> {
    let mut s = String::new();
    for p in points {
        writeln!(s, "{:?} {:?}", p[0], p[1]).unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
