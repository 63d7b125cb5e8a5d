//! Feature matrices and their on-disk formats.
//!
//! Two interchangeable encodings are supported:
//!
//! * CSV: header line `f0,f1,...,f{p-1}`, then one row per sample.
//! * Binary: magic `SPDX`, then `u32` N, `u32` p (little endian), then
//!   `N·p` little-endian `f64` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"SPDX";

/// An `N × p` matrix of per-sample feature vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_samples: usize,
    n_features: usize,
}

impl FeatureMatrix {
    /// Builds a matrix from row-major data, checking shape and finiteness.
    pub fn from_rows(n_samples: usize, n_features: usize, data: Vec<f64>) -> Result<Self> {
        if n_samples < 2 || n_features < 1 {
            return Err(Error::Contract(format!(
                "feature matrix needs N >= 2 and p >= 1, got {n_samples}x{n_features}"
            )));
        }
        if data.len() != n_samples * n_features {
            return Err(Error::Shape(format!(
                "expected {} values for {n_samples}x{n_features}, got {}",
                n_samples * n_features,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::DataIntegrity(format!(
                "non-finite entry at row {}, column {}",
                pos / n_features,
                pos % n_features
            )));
        }
        Ok(Self {
            data,
            n_samples,
            n_features,
        })
    }

    /// Builds a matrix from a slice of equal-length rows.
    pub fn from_row_vecs(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Shape("rows have differing lengths".into()));
        }
        Self::from_rows(rows.len(), p, rows.concat())
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_features + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n_features..(row + 1) * self.n_features]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_samples).map(|r| self.get(r, col)).collect()
    }

    pub(crate) fn from_parts_unchecked(n_samples: usize, n_features: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n_samples * n_features);
        Self {
            data,
            n_samples,
            n_features,
        }
    }

    /// Serializes as CSV. Values use Rust's shortest round-trip formatting,
    /// so reading the file back yields bit-identical entries.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 12);
        let header: Vec<String> = (0..self.n_features).map(|j| format!("f{j}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for r in 0..self.n_samples {
            let row: Vec<String> = self.row(r).iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty feature CSV".into()))?;
        let p = header.split(',').count();
        for (j, name) in header.split(',').enumerate() {
            if name.trim() != format!("f{j}") {
                return Err(Error::Parse(format!(
                    "bad header field {j}: expected `f{j}`, found `{}`",
                    name.trim()
                )));
            }
        }
        let mut data = Vec::new();
        let mut n = 0;
        for (i, line) in lines.enumerate() {
            let mut count = 0;
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Parse(format!("row {i}: cannot parse `{}` as a number", field.trim()))
                })?;
                data.push(v);
                count += 1;
            }
            if count != p {
                return Err(Error::Parse(format!("row {i}: {count} fields, header has {p}")));
            }
            n += 1;
        }
        Self::from_rows(n, p, data)
    }

    pub fn to_binary(&self) -> Vec<u8> {
        encode_binary(self.n_samples, self.n_features, &self.data)
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let (n, p, data) = decode_binary(bytes)?;
        Self::from_rows(n, p, data)
    }

    /// Reads CSV or binary, chosen by the `SPDX` magic prefix.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(BINARY_MAGIC) {
            Self::from_binary(&bytes)
        } else {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Parse(format!("{} is neither UTF-8 CSV nor SPDX binary", path.display())))?;
            Self::from_csv_str(&text)
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_binary())?;
        Ok(())
    }
}

/// Decodes the `SPDX` container into `(rows, cols, values)` without
/// imposing feature-matrix invariants. Model parameter vectors reuse it.
pub fn decode_binary(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 12 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::Parse("missing SPDX header".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let p = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    let expected = n
        .checked_mul(p)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::Parse("SPDX dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(Error::Parse(format!(
            "SPDX body holds {} bytes, header {n}x{p} requires {expected}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((n, p, data))
}

/// Encodes a raw `rows × cols` block in the `SPDX` container.
pub fn encode_binary(rows: usize, cols: usize, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * values.len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_finite() {
        let err = FeatureMatrix::from_rows(2, 2, vec![1.0, f64::NAN, 0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::DataIntegrity(_)));
    }

    #[test]
    fn rejects_single_row() {
        assert!(matches!(
            FeatureMatrix::from_rows(1, 3, vec![0.0; 3]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn truncated_binary_is_a_parse_error() {
        let m = FeatureMatrix::from_rows(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = m.to_binary();
        assert!(matches!(
            FeatureMatrix::from_binary(&bytes[..bytes.len() - 3]),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn csv_header_is_checked() {
        assert!(FeatureMatrix::from_csv_str("a,b\n1,2\n3,4\n").is_err());
        assert!(FeatureMatrix::from_csv_str("f0,f1\n1,2\n3\n").is_err());
    }

    #[test]
    fn csv_nan_is_integrity_error() {
        let err = FeatureMatrix::from_csv_str("f0,f1\n1,NaN\n3,4\n").unwrap_err();
        assert!(matches!(err, Error::DataIntegrity(_)));
    }

    proptest! {
        #[test]
        fn csv_and_binary_agree(n in 2usize..6, p in 1usize..5, seed in any::<u64>()) {
            let mut s = crate::rng::SeededStream::new(seed);
            let data: Vec<f64> = (0..n * p).map(|_| s.gaussian() * 1e3).collect();
            let m = FeatureMatrix::from_rows(n, p, data).unwrap();
            let via_csv = FeatureMatrix::from_csv_str(&m.to_csv_string()).unwrap();
            let via_bin = FeatureMatrix::from_binary(&m.to_binary()).unwrap();
            prop_assert_eq!(&via_csv, &m);
            prop_assert_eq!(&via_bin, &m);
        }
    }
}
