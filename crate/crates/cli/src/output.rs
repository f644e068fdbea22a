//! Deterministic artifacts: JSON with every number at 15 significant digits
//! and plain CSV tables.

use std::fmt::Write as _;
use std::io;
use std::path::PathBuf;

use indiff_core::numeric::round_sig;
use serde::Serialize;
use serde_json::Value;

pub const SIG_DIGITS: usize = 15;

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if let Some(x) = n.as_f64().filter(|_| n.is_f64()) {
                if let Some(r) = serde_json::Number::from_f64(round_sig(x, SIG_DIGITS)) {
                    *n = r;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("serializable output");
    round_value(&mut v);
    serde_json::to_string_pretty(&v).expect("JSON value") + "\n"
}

pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{}", round_sig(x, SIG_DIGITS))
    }
}

/// CSV with a header row; cells are written verbatim.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { text: header.join(",") + "\n" }
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, cells: I) {
        let cells: Vec<String> = cells.into_iter().collect();
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Output sink: the summary always goes to stdout, files only when an
/// output directory is given.
pub struct Artifacts {
    dir: Option<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: Option<PathBuf>) -> io::Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(Self { dir })
    }

    pub fn file(&self, name: &str, contents: &str) -> io::Result<()> {
        match &self.dir {
            Some(d) => std::fs::write(d.join(name), contents),
            None => Ok(()),
        }
    }

    pub fn summary(&self, name: &str, json: &str) -> io::Result<()> {
        print!("{json}");
        self.file(name, json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_nested_floats_only() {
        let v = serde_json::json!({"a": [0.1 + 0.2, 3], "b": {"c": 1.0 / 3.0}});
        let s = to_json(&v);
        assert!(s.contains("0.3\n") || s.contains("0.3,"));
        assert!(s.contains("0.333333333333333"));
        assert!(s.contains("3\n"));
    }

    #[test]
    fn csv_nan_is_empty() {
        assert_eq!(num(f64::NAN), "");
        assert_eq!(num(std::f64::consts::PI), "3.14159265358979");
    }
}
