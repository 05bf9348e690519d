//! Synthesis archive: JSON with a sha256 sidecar.

use std::path::{Path, PathBuf};

use orclf_core::interleave::PairTables;
use orclf_core::scheduler::BandEntry;
use orclf_core::unitloop::{Cell, CellKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{io_err, ToolError};

pub const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub system: String,
    pub law: String,
    pub cells: usize,
    pub band_entries: usize,
    pub n_min: u64,
    pub n_max: u64,
    pub n_cert_max: u64,
    pub clamped_entries: usize,
    pub rho_tilde: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub format: u32,
    /// The run configuration the artifacts were built from, as TOML.
    pub config: String,
    pub cells: Vec<(CellKey, Cell)>,
    /// Band entries of the scheduler, or of the even and odd schedulers.
    pub entries: Vec<Vec<BandEntry>>,
    pub tables: Option<PairTables>,
    pub summary: Summary,
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".sha256");
    PathBuf::from(s)
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Archive {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ToolError> {
        let mut v = serde_json::to_vec_pretty(self).map_err(|e| ToolError::Archive(e.to_string()))?;
        v.push(b'\n');
        Ok(v)
    }

    /// Writes the archive and its digest; returns the digest.
    pub fn save(&self, path: &Path) -> Result<String, ToolError> {
        let bytes = self.to_bytes()?;
        let d = digest(&bytes);
        std::fs::write(path, &bytes).map_err(|e| io_err(path, e))?;
        let side = sidecar(path);
        std::fs::write(&side, format!("{d}\n")).map_err(|e| io_err(&side, e))?;
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self, ToolError> {
        let bytes = std::fs::read(path).map_err(|e| ToolError::Archive(format!("{}: {e}", path.display())))?;
        let side = sidecar(path);
        let want = std::fs::read_to_string(&side)
            .map_err(|e| ToolError::Archive(format!("{}: {e}", side.display())))?;
        let got = digest(&bytes);
        if want.trim() != got {
            return Err(ToolError::Archive(format!(
                "{} is corrupted: digest {got} does not match {}",
                path.display(),
                want.trim()
            )));
        }
        let a: Self = serde_json::from_slice(&bytes).map_err(|e| ToolError::Archive(format!("{}: {e}", path.display())))?;
        if a.format != FORMAT {
            return Err(ToolError::Archive(format!("unsupported archive format {}", a.format)));
        }
        Ok(a)
    }
}
