//! `HSIF1` cube container.
//!
//! ```text
//! "HSIF1" | H u32 | W u32 | C u32 | flags u8 | [C × f32 wavelengths] | H·W·C × f32
//! ```
//! Little-endian throughout; payload is band-sequential, row-major per band.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hsi::HsiCube;

pub const CUBE_MAGIC: &[u8; 5] = b"HSIF1";
const FLAG_WAVELENGTHS: u8 = 1;

/// A cube as stored on disk, wavelengths optional.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeFile {
    pub cube: HsiCube,
    pub wavelengths: Option<Vec<f64>>,
}

impl CubeFile {
    pub fn new(cube: HsiCube) -> Self {
        Self {
            cube,
            wavelengths: None,
        }
    }

    pub fn with_wavelengths(cube: HsiCube, wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != cube.bands() {
            return Err(Error::dim(format!(
                "{} wavelengths for {} bands",
                wavelengths.len(),
                cube.bands()
            )));
        }
        Ok(Self {
            cube,
            wavelengths: Some(wavelengths),
        })
    }

    /// Serializes with values narrowed to f32.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = &self.cube;
        let dims = [c.height(), c.width(), c.bands()];
        let mut out = Vec::with_capacity(18 + 4 * (c.data().len() + c.bands()));
        out.extend_from_slice(CUBE_MAGIC);
        for d in dims {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.wavelengths {
            Some(wl) => {
                out.push(FLAG_WAVELENGTHS);
                wl.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes()));
            }
            None => out.push(0),
        }
        c.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes()));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 18 || &bytes[..5] != CUBE_MAGIC {
            return Err(Error::Format("not an HSIF1 cube file".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
        let (h, w, c) = (dim(0), dim(1), dim(2));
        let flags = bytes[17];
        if flags & !FLAG_WAVELENGTHS != 0 {
            return Err(Error::Format(format!("unknown flag bits {flags:#04x}")));
        }
        let n_wl = if flags & FLAG_WAVELENGTHS != 0 { c } else { 0 };
        let expected = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .and_then(|v| v.checked_add(n_wl))
            .and_then(|v| v.checked_mul(4))
            .and_then(|v| v.checked_add(18))
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "{h}x{w}x{c} cube needs {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        let floats: Vec<f64> = bytes[18..]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        let (wl, data) = floats.split_at(n_wl);
        let cube = HsiCube::new(h, w, c, data.to_vec())?;
        Ok(Self {
            cube,
            wavelengths: (n_wl > 0).then(|| wl.to_vec()),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| io_context(e, path))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

pub(crate) fn io_context(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn read_cube(path: &Path) -> Result<HsiCube> {
    Ok(CubeFile::read(path)?.cube)
}

pub fn write_cube(path: &Path, cube: &HsiCube) -> Result<()> {
    CubeFile::new(cube.clone()).write(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CubeFile {
        let cube = HsiCube::from_fn(2, 3, 2, |b, r, c| (b * 6 + r * 3 + c) as f64 * 0.25).unwrap();
        CubeFile::with_wavelengths(cube, vec![450.0, 900.0]).unwrap()
    }

    #[test]
    fn layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..5], b"HSIF1");
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(bytes[17], 1);
        assert_eq!(bytes.len(), 18 + 4 * (2 + 12));
        assert_eq!(&bytes[18..22], &450f32.to_le_bytes());
        // second payload value is band 0, row 0, col 1
        assert_eq!(&bytes[30..34], &0.25f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_input() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(CubeFile::from_bytes(&bytes).unwrap(), sample());
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(CubeFile::from_bytes(&long), Err(Error::Format(_))));
        assert!(CubeFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(CubeFile::from_bytes(&magic).is_err());
        let mut flags = bytes;
        flags[17] = 4;
        assert!(CubeFile::from_bytes(&flags).is_err());
    }
}
