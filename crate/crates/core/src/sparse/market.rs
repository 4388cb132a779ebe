//! Matrix Market coordinate I/O (real, symmetric or general).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, MatrixMarketError, Result};

use super::SparseSymMatrix;

/// A matrix read from a Matrix Market file.
#[derive(Debug, Clone)]
pub struct MarketMatrix {
    pub matrix: SparseSymMatrix,
    /// Set when the file was `general` and has been replaced by `(A + Aᵀ)/2`.
    pub symmetrized: bool,
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<MarketMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    read_matrix_market_str(&text)
}

pub fn read_matrix_market_str(text: &str) -> Result<MarketMatrix> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| MatrixMarketError::Header("empty input".into()))?;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(MatrixMarketError::Header(header.to_string()).into());
    }
    if tokens[2] != "coordinate" {
        return Err(MatrixMarketError::UnsupportedFormat(tokens[2].clone()).into());
    }
    match tokens[3].as_str() {
        "real" | "integer" | "double" => {}
        other => return Err(MatrixMarketError::NonRealField(other.to_string()).into()),
    }
    let symmetric = match tokens[4].as_str() {
        "symmetric" => true,
        "general" => false,
        other => return Err(MatrixMarketError::UnsupportedSymmetry(other.to_string()).into()),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let lineno = lineno + 1;
        let parse_err = |msg: &str| MatrixMarketError::Parse { line: lineno, msg: msg.to_string() };
        let mut parts = line.split_whitespace();
        match size {
            None => {
                let mut next = || -> Result<usize, MatrixMarketError> {
                    parts
                        .next()
                        .ok_or_else(|| parse_err("short size line"))?
                        .parse()
                        .map_err(|_| parse_err("bad size value"))
                };
                let (r, c, nnz) = (next()?, next()?, next()?);
                if r != c {
                    return Err(MatrixMarketError::NotSquare { nrows: r, ncols: c }.into());
                }
                triplets.reserve(if symmetric { 2 * nnz } else { nnz });
                size = Some((r, c, nnz));
            }
            Some((nrows, ncols, _)) => {
                let row: usize = parts
                    .next()
                    .ok_or_else(|| parse_err("missing row index"))?
                    .parse()
                    .map_err(|_| parse_err("bad row index"))?;
                let col: usize = parts
                    .next()
                    .ok_or_else(|| parse_err("missing column index"))?
                    .parse()
                    .map_err(|_| parse_err("bad column index"))?;
                let val: f64 = parts
                    .next()
                    .ok_or_else(|| parse_err("missing value"))?
                    .parse()
                    .map_err(|_| parse_err("bad value"))?;
                if row == 0 || col == 0 || row > nrows || col > ncols {
                    return Err(MatrixMarketError::IndexOutOfBounds { line: lineno, row, col, nrows, ncols }.into());
                }
                let (i, j) = (row - 1, col - 1);
                triplets.push((i, j, val));
                if symmetric && i != j {
                    triplets.push((j, i, val));
                }
            }
        }
    }
    let (n, _, nnz) = size.ok_or_else(|| MatrixMarketError::Header("missing size line".into()))?;
    let found = if symmetric {
        triplets.iter().filter(|(i, j, _)| i >= j).count()
    } else {
        triplets.len()
    };
    if found != nnz {
        return Err(MatrixMarketError::EntryCount { expected: nnz, found }.into());
    }
    if symmetric {
        let matrix = SparseSymMatrix::from_triplets(n, triplets)?;
        Ok(MarketMatrix { matrix, symmetrized: false })
    } else {
        let matrix = SparseSymMatrix::from_triplets_symmetrized(n, triplets)?;
        Ok(MarketMatrix { matrix, symmetrized: true })
    }
}

/// Writes the lower triangle with a `symmetric` header. Values use the
/// shortest representation that parses back to the same bits.
pub fn write_matrix_market(a: &SparseSymMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_matrix_market_string(a)).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub(crate) fn to_matrix_market_string(a: &SparseSymMatrix) -> String {
    let lower: Vec<_> = a.triplets().filter(|(i, j, _)| i >= j).collect();
    let mut out = String::with_capacity(32 * lower.len() + 64);
    out.push_str("%%MatrixMarket matrix coordinate real symmetric\n");
    let _ = writeln!(out, "{} {} {}", a.n(), a.n(), lower.len());
    for (i, j, v) in lower {
        let _ = writeln!(out, "{} {} {:e}", i + 1, j + 1, v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirrors_symmetric_entries() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n% comment\n2 2 2\n1 1 2\n2 1 1\n";
        let m = read_matrix_market_str(text).unwrap();
        assert!(!m.symmetrized);
        let d = m.matrix.to_dense();
        assert_eq!(d[(0, 0)], 2.0);
        assert_eq!(d[(0, 1)], 1.0);
        assert_eq!(d[(1, 0)], 1.0);
        assert_eq!(d[(1, 1)], 0.0);
    }

    #[test]
    fn pattern_field_rejected() {
        let text = "%%MatrixMarket matrix coordinate pattern symmetric\n2 2 1\n1 1\n";
        let err = read_matrix_market_str(text).unwrap_err();
        assert!(err.to_string().contains("non-real field"), "{err}");
    }

    #[test]
    fn general_is_symmetrized_with_flag() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1\n1 2 3\n2 1 1\n";
        let m = read_matrix_market_str(text).unwrap();
        assert!(m.symmetrized);
        assert_eq!(m.matrix.get(0, 1), 2.0);
        assert_eq!(m.matrix.get(1, 0), 2.0);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(
            read_matrix_market_str("%%MatrixMarket matrix array real general\n"),
            Err(Error::MatrixMarket(MatrixMarketError::UnsupportedFormat(_)))
        ));
        assert!(matches!(
            read_matrix_market_str("hello\n"),
            Err(Error::MatrixMarket(MatrixMarketError::Header(_)))
        ));
        assert!(matches!(
            read_matrix_market_str("%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n3 1 1.0\n"),
            Err(Error::MatrixMarket(MatrixMarketError::IndexOutOfBounds { .. }))
        ));
        assert!(matches!(
            read_matrix_market_str("%%MatrixMarket matrix coordinate complex symmetric\n2 2 1\n1 1 1 0\n"),
            Err(Error::MatrixMarket(MatrixMarketError::NonRealField(_)))
        ));
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let vals = [0.1, 1.0 / 3.0, -2.5e-300, 7.0e21, std::f64::consts::PI];
        let mut t = Vec::new();
        for (k, &v) in vals.iter().enumerate() {
            t.push((k, k, v));
            if k > 0 {
                t.push((k, k - 1, v * 0.7));
                t.push((k - 1, k, v * 0.7));
            }
        }
        let a = SparseSymMatrix::from_triplets(5, t).unwrap();
        let text = to_matrix_market_string(&a);
        let b = read_matrix_market_str(&text).unwrap().matrix;
        assert_eq!(a.values().len(), b.values().len());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let text2 = to_matrix_market_string(&b);
        assert_eq!(text, text2);
    }
}
