//! Artifact rendering. Numbers are written with 17 significant digits so
//! reruns compare bitwise.

use crate::Failure;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV with a header row; every cell is a number.
pub fn csv(header: &[String], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| num(*v)).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

pub fn json<S: Serialize>(value: &S) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::Config(format!("cannot encode report: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
    let p = dir.join(name);
    std::fs::write(&p, contents).map_err(|e| Failure::Config(format!("cannot write {}: {e}", p.display())))
}
