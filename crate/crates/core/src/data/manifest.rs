use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One image/label pair; paths are resolved against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image: PathBuf,
    pub label: PathBuf,
    pub split: Split,
}

/// Reads an `image,label,split` CSV and checks that every file exists.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<ManifestRow>().enumerate() {
        let mut row = rec.map_err(|e| Error::format(path, format!("row {}: {e}", i + 1)))?;
        row.image = base.join(&row.image);
        row.label = base.join(&row.label);
        for p in [&row.image, &row.label] {
            if !p.is_file() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest")));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes rows as given (paths should be relative to the manifest's directory).
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
