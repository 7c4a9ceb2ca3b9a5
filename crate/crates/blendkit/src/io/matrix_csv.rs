//! Plain CSV persistence for sample-by-datapoint matrices.
//!
//! The format is bare comma-separated decimal floats, one matrix row per
//! line, with an optional leading header `# shape: S,N` asserting the
//! dimensions. `-inf` is a legal cell (zero predictive density); values
//! are written in shortest-round-trip form, so write followed by read
//! reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Parse a matrix from `path`. Rows are samples, columns datapoints.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = super::read_to_string(path)?;
    parse_matrix(&text, &path.display().to_string())
}

fn parse_matrix(text: &str, path: &str) -> Result<Array2<f64>> {
    let mut lines = text.lines().enumerate().peekable();

    let mut declared: Option<(usize, usize)> = None;
    if let Some((_, first)) = lines.peek() {
        if let Some(rest) = first.strip_prefix('#') {
            let rest = rest.trim();
            let spec = rest.strip_prefix("shape:").ok_or_else(|| Error::CsvParse {
                path: path.to_string(),
                row: 1,
                msg: format!("unrecognized header \"#{rest}\"; expected \"# shape: S,N\""),
            })?;
            let mut parts = spec.split(',').map(str::trim);
            let parse_dim = |part: Option<&str>| -> Result<usize> {
                part.and_then(|p| p.parse::<usize>().ok())
                    .ok_or_else(|| Error::CsvParse {
                        path: path.to_string(),
                        row: 1,
                        msg: format!("bad shape header \"{spec}\""),
                    })
            };
            let s = parse_dim(parts.next())?;
            let n = parse_dim(parts.next())?;
            if parts.next().is_some() {
                return Err(Error::CsvParse {
                    path: path.to_string(),
                    row: 1,
                    msg: format!("bad shape header \"{spec}\""),
                });
            }
            declared = Some((s, n));
            lines.next();
        }
    }

    let mut values: Vec<f64> = Vec::new();
    let mut n_cols: Option<usize> = None;
    let mut n_rows = 0;
    for (line_idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row_number = line_idx + 1;
        let cells: Vec<&str> = line.split(',').collect();
        match n_cols {
            None => n_cols = Some(cells.len()),
            Some(expected) if cells.len() != expected => {
                return Err(Error::RaggedRow {
                    path: path.to_string(),
                    row: row_number,
                    got: cells.len(),
                    expected,
                });
            }
            Some(_) => {}
        }
        for (col_idx, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::CsvParse {
                path: path.to_string(),
                row: row_number,
                msg: format!("column {}: cannot parse \"{}\" as a number", col_idx + 1, cell.trim()),
            })?;
            values.push(v);
        }
        n_rows += 1;
    }

    let n_cols = n_cols.unwrap_or(0);
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::EmptyMatrix {
            rows: n_rows,
            cols: n_cols,
        });
    }
    if let Some((s, n)) = declared {
        if (s, n) != (n_rows, n_cols) {
            return Err(Error::ShapeHeaderMismatch {
                path: path.to_string(),
                declared_rows: s,
                declared_cols: n,
                rows: n_rows,
                cols: n_cols,
            });
        }
    }
    Array2::from_shape_vec((n_rows, n_cols), values)
        .map_err(|e| Error::CsvParse {
            path: path.to_string(),
            row: 0,
            msg: e.to_string(),
        })
}

/// Render a matrix in the CSV format, with the shape header.
pub fn matrix_to_csv(m: &Array2<f64>) -> String {
    let (s, n) = m.dim();
    let mut out = String::new();
    let _ = writeln!(out, "# shape: {s},{n}");
    for row in m.rows() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

/// Write a matrix to `path` atomically with the shape header. Values are
/// printed in shortest-round-trip form.
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    super::atomic_write(path, matrix_to_csv(m).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_plain_and_headered_matrices() {
        let m = parse_matrix("1,2\n3,4\n", "t").unwrap();
        assert_eq!(m, arr2(&[[1.0, 2.0], [3.0, 4.0]]));

        let m = parse_matrix("# shape: 2,2\n1,2\n3,4\n", "t").unwrap();
        assert_eq!(m, arr2(&[[1.0, 2.0], [3.0, 4.0]]));
    }

    #[test]
    fn minus_inf_is_a_legal_cell() {
        let m = parse_matrix("-inf,0\n", "t").unwrap();
        assert_eq!(m[[0, 0]], f64::NEG_INFINITY);
        assert_eq!(m[[0, 1]], 0.0);
    }

    #[test]
    fn ragged_rows_report_the_offending_row() {
        let err = parse_matrix("1,2\n3\n", "t").unwrap_err();
        match err {
            Error::RaggedRow { row, got, expected, .. } => {
                assert_eq!(row, 2);
                assert_eq!(got, 1);
                assert_eq!(expected, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_cells_report_row_and_column() {
        let err = parse_matrix("1,2\n3,oops\n", "t").unwrap_err();
        match err {
            Error::CsvParse { row, msg, .. } => {
                assert_eq!(row, 2);
                assert!(msg.contains("column 2"), "msg = {msg}");
                assert!(msg.contains("oops"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn shape_header_must_match_the_data() {
        let err = parse_matrix("# shape: 3,2\n1,2\n3,4\n", "t").unwrap_err();
        assert!(matches!(err, Error::ShapeHeaderMismatch { declared_rows: 3, rows: 2, .. }));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(
            parse_matrix("", "t").unwrap_err(),
            Error::EmptyMatrix { .. }
        ));
        assert!(matches!(
            parse_matrix("# shape: 0,0\n", "t").unwrap_err(),
            Error::EmptyMatrix { .. }
        ));
    }

    #[test]
    fn random_matrices_round_trip_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut m = Array2::from_shape_fn((8, 5), |_| {
            (rng.random::<f64>() - 0.5) * 10f64.powi(rng.random_range(-300..300))
        });
        m[[0, 0]] = f64::NEG_INFINITY;
        m[[3, 2]] = 0.0;
        m[[4, 4]] = -0.0;
        let text = matrix_to_csv(&m);
        let back = parse_matrix(&text, "t").unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // A second print is byte-identical.
        assert_eq!(text, matrix_to_csv(&back));
    }

    #[test]
    fn file_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = arr2(&[[1.25, -0.5], [f64::NEG_INFINITY, 3.0]]);
        write_matrix_csv(&path, &m).unwrap();
        let back = read_matrix_csv(&path).unwrap();
        assert_eq!(m, back);
        let missing = read_matrix_csv(&dir.path().join("absent.csv")).unwrap_err();
        match missing {
            Error::Io { path, .. } => assert!(path.contains("absent.csv")),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
