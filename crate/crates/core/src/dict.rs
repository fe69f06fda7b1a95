//! Atom dictionaries and simplex weight vectors.
//!
//! A [`Dictionary`] holds `M` column atoms in `R^d` together with lazily
//! computed geometry (the hull diameter). Two on-disk formats are supported:
//! plain CSV (one atom per row, `d` decimal columns, no header) and a raw
//! little-endian binary layout:
//!
//! ```text
//! "FSTB"  u32 M  u32 d  M*d f64 (row-major, one atom per row)
//! ```
//!
//! The binary layout may be followed by an optional value-matrix section
//! (`"VALS"  u32 d_v  M*d_v f64`) used by the paged-cache import/export.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub const FSTB_MAGIC: &[u8; 4] = b"FSTB";
pub const VALS_MAGIC: &[u8; 4] = b"VALS";

#[derive(Debug, Error)]
pub enum DictError {
    #[error("dictionary must have at least one atom and dimension at least one")]
    Empty,
    #[error("non-finite entry at atom {atom}, coordinate {coord}")]
    NonFinite { atom: usize, coord: usize },
    #[error("csv parse error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("binary parse error at byte {offset}: {msg}")]
    Binary { offset: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Key/atom dictionary: `M` columns in `R^d`.
#[derive(Debug, Clone)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    diameter: OnceLock<f64>,
    op_norm: OnceLock<f64>,
}

impl Dictionary {
    /// Build from a `d x M` column matrix.
    pub fn new(atoms: DMatrix<f64>) -> Result<Self, DictError> {
        if atoms.ncols() == 0 || atoms.nrows() == 0 {
            return Err(DictError::Empty);
        }
        for j in 0..atoms.ncols() {
            for i in 0..atoms.nrows() {
                if !atoms[(i, j)].is_finite() {
                    return Err(DictError::NonFinite { atom: j, coord: i });
                }
            }
        }
        Ok(Self {
            atoms,
            diameter: OnceLock::new(),
            op_norm: OnceLock::new(),
        })
    }

    /// Build from atom rows (`M` slices of length `d`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DictError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(DictError::Empty);
        }
        let d = rows[0].len();
        let m = rows.len();
        let mut atoms = DMatrix::zeros(d, m);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(DictError::Csv {
                    line: j + 1,
                    msg: format!("expected {d} columns, found {}", row.len()),
                });
            }
            for (i, &x) in row.iter().enumerate() {
                atoms[(i, j)] = x;
            }
        }
        Self::new(atoms)
    }

    pub fn m_count(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    /// Column view of atom `j`.
    pub fn atom(&self, j: usize) -> DVector<f64> {
        self.atoms.column(j).into_owned()
    }

    /// Readout `U * alpha`.
    pub fn readout(&self, alpha: &[f64]) -> DVector<f64> {
        debug_assert_eq!(alpha.len(), self.m_count());
        let a = DVector::from_column_slice(alpha);
        &self.atoms * a
    }

    /// Scores `U^T r` for all atoms.
    pub fn scores(&self, r: &DVector<f64>) -> Vec<f64> {
        (self.atoms.transpose() * r).iter().copied().collect()
    }

    /// Hull diameter `max_{i,j} ||u_i - u_j||` (computed on first use).
    pub fn diameter(&self) -> f64 {
        *self.diameter.get_or_init(|| {
            let m = self.m_count();
            let mut best = 0.0f64;
            for i in 0..m {
                for j in (i + 1)..m {
                    let d2 = (self.atoms.column(i) - self.atoms.column(j)).norm();
                    if d2 > best {
                        best = d2;
                    }
                }
            }
            best
        })
    }

    /// Largest singular value of the atom matrix (computed on first use).
    pub fn operator_norm(&self) -> f64 {
        *self.op_norm.get_or_init(|| {
            if self.m_count() == 1 {
                return self.atoms.column(0).norm();
            }
            self.atoms.clone().svd(false, false).singular_values.max()
        })
    }

    /// Parse the CSV dictionary format.
    pub fn read_csv(path: &Path) -> Result<Self, DictError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self, DictError> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut row = Vec::new();
            for field in line.split(',') {
                let x: f64 = field.trim().parse().map_err(|e| DictError::Csv {
                    line: lineno + 1,
                    msg: format!("bad number {:?}: {e}", field.trim()),
                })?;
                row.push(x);
            }
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DictError> {
        let mut out = String::new();
        for j in 0..self.m_count() {
            let row: Vec<String> = (0..self.dim())
                .map(|i| format!("{:.16e}", self.atoms[(i, j)]))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Parse the FSTB binary format; the optional value section is returned
    /// as atom-major rows when present.
    pub fn read_fstb(path: &Path) -> Result<(Self, Option<Vec<Vec<f64>>>), DictError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::parse_fstb(&buf)
    }

    pub fn parse_fstb(buf: &[u8]) -> Result<(Self, Option<Vec<Vec<f64>>>), DictError> {
        let mut cur = Cursor { buf, pos: 0 };
        let magic = cur.take(4)?;
        if magic != FSTB_MAGIC {
            return Err(DictError::Binary {
                offset: 0,
                msg: format!("bad magic {magic:?}, expected \"FSTB\""),
            });
        }
        let m = cur.read_u32()? as usize;
        let d = cur.read_u32()? as usize;
        if m == 0 || d == 0 {
            return Err(DictError::Empty);
        }
        let mut rows = Vec::with_capacity(m);
        for _ in 0..m {
            let mut row = Vec::with_capacity(d);
            for _ in 0..d {
                row.push(cur.read_f64()?);
            }
            rows.push(row);
        }
        let dict = Self::from_rows(&rows)?;
        if cur.pos == buf.len() {
            return Ok((dict, None));
        }
        let vmagic = cur.take(4)?;
        if vmagic != VALS_MAGIC {
            return Err(DictError::Binary {
                offset: cur.pos - 4,
                msg: format!("bad value-section magic {vmagic:?}, expected \"VALS\""),
            });
        }
        let dv = cur.read_u32()? as usize;
        let mut vals = Vec::with_capacity(m);
        for _ in 0..m {
            let mut row = Vec::with_capacity(dv);
            for _ in 0..dv {
                row.push(cur.read_f64()?);
            }
            vals.push(row);
        }
        Ok((dict, Some(vals)))
    }

    pub fn write_fstb(&self, path: &Path, values: Option<&[Vec<f64>]>) -> Result<(), DictError> {
        let mut out = Vec::new();
        out.extend_from_slice(FSTB_MAGIC);
        out.extend_from_slice(&(self.m_count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for j in 0..self.m_count() {
            for i in 0..self.dim() {
                out.extend_from_slice(&self.atoms[(i, j)].to_le_bytes());
            }
        }
        if let Some(vals) = values {
            out.extend_from_slice(VALS_MAGIC);
            let dv = vals.first().map_or(0, |r| r.len());
            out.extend_from_slice(&(dv as u32).to_le_bytes());
            for row in vals {
                for &x in row {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DictError> {
        if self.pos + n > self.buf.len() {
            return Err(DictError::Binary {
                offset: self.pos,
                msg: format!("truncated: wanted {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_u32(&mut self) -> Result<u32, DictError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn read_f64(&mut self) -> Result<f64, DictError> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("weight {index} = {value} is below -tolerance ({tolerance})")]
    Negative {
        index: usize,
        value: f64,
        tolerance: f64,
    },
    #[error("weights sum to {sum}, outside 1 +/- 1e-10")]
    BadSum { sum: f64 },
    #[error("non-finite weight at index {index}")]
    NonFinite { index: usize },
}

/// Barycentric weights on the probability simplex.
///
/// Entries within `tolerance` below zero are clipped to zero at
/// construction; the sum must land within `1e-10` of one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights {
    weights: Vec<f64>,
    tolerance: f64,
}

impl SimplexWeights {
    pub const SUM_TOL: f64 = 1e-10;

    pub fn new(mut weights: Vec<f64>, tolerance: f64) -> Result<Self, WeightsError> {
        for (i, w) in weights.iter_mut().enumerate() {
            if !w.is_finite() {
                return Err(WeightsError::NonFinite { index: i });
            }
            if *w < -tolerance {
                return Err(WeightsError::Negative {
                    index: i,
                    value: *w,
                    tolerance,
                });
            }
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(WeightsError::BadSum { sum });
        }
        Ok(Self { weights, tolerance })
    }

    /// Indicator of a single vertex.
    pub fn vertex(m: usize, index: usize) -> Self {
        let mut w = vec![0.0; m];
        w[index] = 1.0;
        Self {
            weights: w,
            tolerance: 0.0,
        }
    }

    pub fn uniform(m: usize) -> Self {
        Self {
            weights: vec![1.0 / m as f64; m],
            tolerance: 0.0,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dict1d(atoms: &[f64]) -> Dictionary {
        Dictionary::from_rows(&atoms.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn diameter_matches_pairwise_max() {
        let d = dict1d(&[0.0, 1.0, 0.25]);
        assert!((d.diameter() - 1.0).abs() < 1e-12);
        let tri = Dictionary::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((tri.diameter() - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let err = Dictionary::from_rows(&[vec![0.0], vec![f64::NAN]]).unwrap_err();
        assert!(matches!(err, DictError::NonFinite { atom: 1, coord: 0 }));
    }

    #[test]
    fn csv_round_trip() {
        let text = "0.0,0.0\n1.0,0.0\n0.0,1.0\n";
        let d = Dictionary::parse_csv(text).unwrap();
        assert_eq!(d.m_count(), 3);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.atom(2)[1], 1.0);
    }

    #[test]
    fn csv_error_names_line() {
        let err = Dictionary::parse_csv("1.0\nnope\n").unwrap_err();
        match err {
            DictError::Csv { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn fstb_round_trip_with_values() {
        let d = Dictionary::from_rows(&[vec![0.5, -1.0], vec![2.0, 3.5]]).unwrap();
        let vals = vec![vec![9.0, 8.0, 7.0], vec![1.0, 2.0, 3.0]];
        let tmp = std::env::temp_dir().join("facestab_fstb_test.bin");
        d.write_fstb(&tmp, Some(&vals)).unwrap();
        let (d2, v2) = Dictionary::read_fstb(&tmp).unwrap();
        std::fs::remove_file(&tmp).ok();
        assert_eq!(d2.m_count(), 2);
        assert_eq!(d2.atom(0)[1], -1.0);
        assert_eq!(d2.atom(1)[0], 2.0);
        assert_eq!(v2.unwrap(), vals);
    }

    #[test]
    fn fstb_rejects_bad_magic() {
        let err = Dictionary::parse_fstb(b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00").unwrap_err();
        assert!(matches!(err, DictError::Binary { offset: 0, .. }));
    }

    #[test]
    fn weights_clip_and_check_sum() {
        let w = SimplexWeights::new(vec![0.5, 0.5 + 5e-11, -5e-11], 1e-10).unwrap();
        assert_eq!(w.as_slice()[2], 0.0);
        assert!(SimplexWeights::new(vec![0.4, 0.4], 1e-10).is_err());
        assert!(SimplexWeights::new(vec![0.5, 0.6, -0.1], 1e-10).is_err());
    }
}
