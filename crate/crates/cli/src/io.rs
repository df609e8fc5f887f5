use std::fs;
use std::io::Write;
use std::path::Path;

use permatch::LogWeightMatrix;

use crate::error::CliError;

/// Writes to a file, or to stdout for `-`.
pub fn write_output(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if path == Path::new("-") {
        let mut out = std::io::stdout().lock();
        out.write_all(contents)
            .and_then(|_| out.flush())
            .map_err(|e| CliError::Input(format!("stdout: {e}")))
    } else {
        fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

/// Plain-text matrix: first line `m`, then `m` rows of `m` whitespace-separated
/// reals. Blank lines and `#` comments are skipped.
pub fn parse_matrix(text: &str, log_domain: bool) -> Result<LogWeightMatrix, CliError> {
    let err = |line: usize, msg: String| CliError::Input(format!("matrix line {line}: {msg}"));
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (first, header) = lines.next().ok_or_else(|| err(1, "empty matrix file".into()))?;
    let m: usize = header
        .parse()
        .map_err(|_| err(first, format!("expected the dimension m, got `{header}`")))?;
    let mut entries = Vec::with_capacity(m * m);
    for row in 0..m {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| err(first, format!("expected {m} rows, found {row}")))?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(lineno, format!("`{t}` is not a number"))))
            .collect::<Result<_, _>>()?;
        if values.len() != m {
            return Err(err(lineno, format!("expected {m} entries, found {}", values.len())));
        }
        entries.extend(values);
    }
    if let Some((lineno, _)) = lines.next() {
        return Err(err(lineno, format!("unexpected content after {m} rows")));
    }
    let w = if log_domain {
        LogWeightMatrix::from_log(m, entries)
    } else {
        LogWeightMatrix::from_linear(m, &entries)
    };
    Ok(w?)
}

pub fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>, delimiter: u8) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_file() {
        let w = parse_matrix("2\n1 2\n3 4\n", false).unwrap();
        assert_eq!(w.m(), 2);
        assert!((w.get(1, 0) - 3f64.ln()).abs() < 1e-15);
        let w = parse_matrix("# comment\n1\n\n-0.5\n", true).unwrap();
        assert_eq!(w.get(0, 0), -0.5);
    }

    #[test]
    fn matrix_errors_name_lines() {
        for (text, needle) in [
            ("x\n", "line 1"),
            ("2\n1 2\n3\n", "line 3"),
            ("2\n1 2\n", "expected 2 rows"),
            ("1\n1\n2\n", "line 3"),
            ("1\nz\n", "line 2"),
        ] {
            let e = parse_matrix(text, false).unwrap_err().to_string();
            assert!(e.contains(needle), "{text:?}: {e}");
        }
        assert!(parse_matrix("1\n-1\n", false).is_err());
    }
}
