//! Pair manifest: a CSV with one row per synthesized pair.
//!
//! Paths are relative to the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cubefile::{io_context, CubeFile};
use crate::error::{Error, Result};
use crate::fixture::desk_wavelengths;
use crate::haze::Split;
use crate::hsi::WavelengthTable;
use crate::training::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub pair_id: usize,
    pub clean: String,
    pub hazy: String,
    pub alpha: f64,
    pub pattern: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => io_context(io, path),
            other => Error::Format(format!("{}: {other:?}", path.display())),
        })?;
        let rows = rd
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()
            .map_err(|e| csv_err(path, e))?;
        if rows.is_empty() {
            return Err(Error::Format(format!("{}: manifest has no rows", path.display())));
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { dir, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| csv_err(path, e))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Loads the hazy/clean cubes of one row.
    pub fn load_sample(&self, row: &ManifestRow) -> Result<Sample> {
        let hazy = CubeFile::read(&self.resolve(&row.hazy))?.cube;
        let clean = CubeFile::read(&self.resolve(&row.clean))?.cube;
        clean.check_same_shape(&hazy, &format!("pair {} hazy cube", row.pair_id))?;
        Ok(Sample { hazy, clean })
    }

    /// Wavelengths stored with the first hazy cube, or the desk default table.
    pub fn wavelengths(&self) -> Result<WavelengthTable> {
        let first = CubeFile::read(&self.resolve(&self.rows[0].hazy))?;
        match first.wavelengths {
            Some(w) => WavelengthTable::with_visible_edge(w),
            None => desk_wavelengths(first.cube.bands()),
        }
    }
}
