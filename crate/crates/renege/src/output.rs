//! Number formatting and file writers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Six significant digits, `inf` for infinities and `-` for NaN.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return "-".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn out_path(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let path = out_path(dir, name)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(format!("json: {e}")))?;
    fs::write(&path, text + "\n")?;
    Ok(path)
}

/// Writes a CSV with `header` and numeric rows.
pub fn write_csv(dir: &Path, name: &str, header: &[String], rows: &[Vec<f64>]) -> Result<PathBuf, CliError> {
    let path = out_path(dir, name)?;
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Config(format!("csv: {e}")))?;
    let csv_err = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|x| x.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::sig6;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(7.737040140971862), "7.73704");
        assert_eq!(sig6(3.0), "3");
        assert_eq!(sig6(0.0200549), "0.0200549");
        assert_eq!(sig6(f64::INFINITY), "inf");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1.5e7), "1.50000e7");
        assert_eq!(sig6(f64::NAN), "-");
    }
}
