//! Matrix Market exchange format.
//!
//! Reads `array` and `coordinate` files with `real`, `integer` or `complex`
//! fields and `general`, `symmetric`, `skew-symmetric` or `hermitian`
//! symmetry. Writes dense `array` files; values carry 17 significant digits
//! so a write/read round trip is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Array,
    Coordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Real,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
    Hermitian,
}

fn parse_err(line: usize, message: impl Into<String>) -> LabError {
    LabError::ParseError {
        line,
        message: message.into(),
    }
}

fn parse_header(line: &str, lineno: usize) -> Result<(Layout, Field, Symmetry)> {
    let tokens: Vec<String> = line
        .split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" {
        return Err(parse_err(
            lineno,
            "header must read '%%MatrixMarket matrix <layout> <field> <symmetry>'",
        ));
    }
    if tokens[1] != "matrix" {
        return Err(parse_err(
            lineno,
            format!("unsupported object '{}'", tokens[1]),
        ));
    }
    let layout = match tokens[2].as_str() {
        "array" => Layout::Array,
        "coordinate" => Layout::Coordinate,
        other => return Err(parse_err(lineno, format!("unknown layout '{other}'"))),
    };
    let field = match tokens[3].as_str() {
        "real" | "double" | "integer" => Field::Real,
        "complex" => Field::Complex,
        other => return Err(parse_err(lineno, format!("unsupported field '{other}'"))),
    };
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        "hermitian" => Symmetry::Hermitian,
        other => return Err(parse_err(lineno, format!("unknown symmetry '{other}'"))),
    };
    if symmetry == Symmetry::Hermitian && field != Field::Complex {
        return Err(parse_err(
            lineno,
            "hermitian symmetry requires a complex field",
        ));
    }
    Ok((layout, field, symmetry))
}

fn parse_f64(tok: &str, lineno: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(lineno, format!("cannot parse '{tok}' as a number")))
}

fn parse_index(tok: &str, bound: usize, lineno: usize) -> Result<usize> {
    let i: usize = tok
        .parse()
        .map_err(|_| parse_err(lineno, format!("cannot parse index '{tok}'")))?;
    if i == 0 || i > bound {
        return Err(parse_err(lineno, format!("index {i} outside 1..={bound}")));
    }
    Ok(i - 1)
}

fn parse_value(tokens: &[&str], field: Field, lineno: usize) -> Result<Complex64> {
    let want = if field == Field::Complex { 2 } else { 1 };
    if tokens.len() != want {
        return Err(parse_err(
            lineno,
            format!("expected {want} value component(s), found {}", tokens.len()),
        ));
    }
    let re = parse_f64(tokens[0], lineno)?;
    let im = if want == 2 {
        parse_f64(tokens[1], lineno)?
    } else {
        0.0
    };
    Ok(Complex64::new(re, im))
}

fn mirror(m: &mut DMatrix<Complex64>, i: usize, j: usize, v: Complex64, sym: Symmetry) {
    m[(i, j)] = v;
    if i != j {
        m[(j, i)] = match sym {
            Symmetry::General => return,
            Symmetry::Symmetric => v,
            Symmetry::SkewSymmetric => -v,
            Symmetry::Hermitian => v.conj(),
        };
    }
}

/// Parses Matrix Market text.
pub fn parse_matrix(text: &str) -> Result<DenseMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let (layout, field, symmetry) = parse_header(header, hline)?;

    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });

    let (sline, size) = body
        .next()
        .ok_or_else(|| parse_err(hline + 1, "missing size line"))?;
    let dims: Vec<&str> = size.split_whitespace().collect();
    let expect = if layout == Layout::Array { 2 } else { 3 };
    if dims.len() != expect {
        return Err(parse_err(
            sline,
            format!("size line needs {expect} integers, found {}", dims.len()),
        ));
    }
    let parse_dim = |t: &str| -> Result<usize> {
        t.parse()
            .map_err(|_| parse_err(sline, format!("cannot parse dimension '{t}'")))
    };
    let rows = parse_dim(dims[0])?;
    let cols = parse_dim(dims[1])?;
    if rows == 0 || cols == 0 {
        return Err(parse_err(sline, "dimensions must be positive"));
    }
    if symmetry != Symmetry::General && rows != cols {
        return Err(LabError::DimensionMismatch {
            expected: "square matrix for symmetric storage".into(),
            found: format!("{rows}x{cols}"),
        });
    }

    let mut m = DMatrix::<Complex64>::zeros(rows, cols);
    let mut last_line = sline;
    match layout {
        Layout::Coordinate => {
            let nnz = parse_dim(dims[2])?;
            let mut count = 0;
            for (lineno, line) in body {
                last_line = lineno;
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() < 3 {
                    return Err(parse_err(
                        lineno,
                        "coordinate entry needs row, column and value",
                    ));
                }
                let i = parse_index(toks[0], rows, lineno)?;
                let j = parse_index(toks[1], cols, lineno)?;
                let v = parse_value(&toks[2..], field, lineno)?;
                if symmetry != Symmetry::General && j > i {
                    return Err(parse_err(
                        lineno,
                        "symmetric storage lists the lower triangle only",
                    ));
                }
                count += 1;
                if count > nnz {
                    return Err(LabError::DimensionMismatch {
                        expected: format!("{nnz} entries"),
                        found: "more entries".into(),
                    });
                }
                mirror(&mut m, i, j, v, symmetry);
            }
            if count != nnz {
                return Err(LabError::DimensionMismatch {
                    expected: format!("{nnz} entries"),
                    found: format!("{count} entries"),
                });
            }
        }
        Layout::Array => {
            // column-major; symmetric variants list the lower triangle
            let slots: Vec<(usize, usize)> = (0..cols)
                .flat_map(|j| {
                    let start = match symmetry {
                        Symmetry::General => 0,
                        Symmetry::SkewSymmetric => j + 1,
                        _ => j,
                    };
                    (start..rows).map(move |i| (i, j))
                })
                .collect();
            let mut k = 0;
            for (lineno, line) in body {
                last_line = lineno;
                let toks: Vec<&str> = line.split_whitespace().collect();
                let v = parse_value(&toks, field, lineno)?;
                let Some(&(i, j)) = slots.get(k) else {
                    return Err(LabError::DimensionMismatch {
                        expected: format!("{} values", slots.len()),
                        found: "more values".into(),
                    });
                };
                mirror(&mut m, i, j, v, symmetry);
                k += 1;
            }
            if k != slots.len() {
                return Err(LabError::DimensionMismatch {
                    expected: format!("{} values", slots.len()),
                    found: format!("{k} values"),
                });
            }
        }
    }
    DenseMatrix::from_dmatrix(m).map_err(|e| parse_err(last_line, e.to_string()))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    parse_matrix(&fs::read_to_string(path)?)
}

/// Renders a dense `array` file, `real` when every imaginary part is zero.
pub fn format_matrix(a: &DenseMatrix) -> String {
    let complex = !a.is_real();
    let mut out = String::new();
    let field = if complex { "complex" } else { "real" };
    writeln!(out, "%%MatrixMarket matrix array {field} general").unwrap();
    writeln!(out, "{} {}", a.rows(), a.cols()).unwrap();
    for j in 0..a.cols() {
        for i in 0..a.rows() {
            let z = a.get(i, j);
            if complex {
                writeln!(out, "{:.16e} {:.16e}", z.re, z.im).unwrap();
            } else {
                writeln!(out, "{:.16e}", z.re).unwrap();
            }
        }
    }
    out
}

pub fn write_matrix(path: impl AsRef<Path>, a: &DenseMatrix) -> Result<()> {
    fs::write(path, format_matrix(a))?;
    Ok(())
}
