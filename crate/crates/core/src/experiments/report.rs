//! Deterministic report files: a CSV of rows and a JSON summary embedding
//! the config hash and library version.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;

/// FNV-1a 64-bit hash, hex-encoded. Stable fingerprint of the effective
/// config bytes for provenance; not cryptographic.
pub fn config_hash(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Shortest round-trip decimal for a float (Rust's `Display` contract).
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub struct RunArtifacts {
    pub csv_header: String,
    pub csv_rows: Vec<Vec<String>>,
    pub summary: serde_json::Value,
}

pub struct RunOutput {
    pub rows_csv: PathBuf,
    pub summary_json: PathBuf,
}

pub fn write_artifacts(
    out_dir: &Path,
    artifacts: &RunArtifacts,
    summary: &serde_json::Value,
) -> Result<RunOutput> {
    fs::create_dir_all(out_dir)?;
    let rows_path = out_dir.join("rows.csv");
    let mut csv = String::with_capacity(64 * (artifacts.csv_rows.len() + 1));
    csv.push_str(&artifacts.csv_header);
    csv.push('\n');
    for row in &artifacts.csv_rows {
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let mut f = fs::File::create(&rows_path)?;
    f.write_all(csv.as_bytes())?;

    let summary_path = out_dir.join("summary.json");
    let mut f = fs::File::create(&summary_path)?;
    let pretty = serde_json::to_string_pretty(summary).expect("summary serializes");
    f.write_all(pretty.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(RunOutput { rows_csv: rows_path, summary_json: summary_path })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash(b""), "cbf29ce484222325");
        assert_eq!(config_hash(b"a"), config_hash(b"a"));
        assert_ne!(config_hash(b"a"), config_hash(b"b"));
    }

    #[test]
    fn float_formatting_round_trips() {
        for x in [0.1, 1.0 / 3.0, 2.0_f64.sqrt(), 1e-300, -0.0, 4000.0] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }
}
