//! CSV and JSON artifact helpers.
//!
//! Floats are serialized at 17 significant digits so artifact bodies
//! round-trip exactly and byte-identical reruns are possible. Non-finite
//! values appear only in diagnostic columns, as the literal tokens
//! `nan` / `inf` / `-inf`.

use serde::Serialize;

/// 17-significant-digit float token.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    format!("{:.16e}", x)
}

/// In-memory CSV body with a documented header row.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv_string())
    }
}

/// Per-check summary emitted next to each CSV artifact.
#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub check: String,
    pub instances: usize,
    pub pass: usize,
    pub fail: usize,
    pub skipped_degenerate: usize,
}

impl CheckSummary {
    pub fn new(check: &str) -> Self {
        Self {
            check: check.to_string(),
            instances: 0,
            pass: 0,
            fail: 0,
            skipped_degenerate: 0,
        }
    }

    pub fn all_passed(&self) -> bool {
        self.fail == 0
    }
}

/// FNV-1a 64-bit checksum used to stamp artifacts in run manifests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
