//! Output helpers: fixed float formatting, provenance headers, atomic writes.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// 17 significant digits, round-trip exact and platform independent.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Hex SHA-256 of the scenario bytes.
pub fn scenario_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Provenance carried by every output file.
#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct Provenance {
    pub version: String,
    pub scenario_sha256: String,
}

impl Provenance {
    pub fn new(scenario_bytes: &[u8]) -> Self {
        Self { version: VERSION.to_string(), scenario_sha256: scenario_hash(scenario_bytes) }
    }

    fn csv_comment(&self) -> String {
        format!("# gmfg {} scenario_sha256={}\n", self.version, self.scenario_sha256)
    }
}

/// Writes `contents` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// CSV body prefixed with the provenance comment line.
pub fn write_csv(path: &Path, prov: &Provenance, body: &str) -> Result<()> {
    let mut s = prov.csv_comment();
    s.push_str(body);
    write_atomic(path, s.as_bytes())
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    meta: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON with a leading `meta` object; key order follows the struct.
pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, body: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(&Wrapped { meta: prov, body })?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_is_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a").join("x.csv");
        let prov = Provenance::new(b"{}");
        write_csv(&p, &prov, "a,b\n1,2\n").unwrap();
        write_csv(&p, &prov, "a,b\n3,4\n").unwrap();
        let s = fs::read_to_string(&p).unwrap();
        assert!(s.starts_with("# gmfg "));
        assert!(s.ends_with("3,4\n"));
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
