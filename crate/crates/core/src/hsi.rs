//! Hyperspectral cube types and the band/pixel bookkeeping shared by every stage.
//!
//! Cubes are stored band-sequential: all pixels of band 0, then band 1, and so
//! on. Within a band, pixels are row-major. The flattened pixel index
//! `row * width + col` is the one ordering used everywhere in the crate,
//! including the spectral-pixel matrix and the on-disk container.
//!
//! Band indices are 0-based in the library. The command-line front end takes
//! 1-based indices and converts them at the boundary.

use crate::error::{Error, Result};

/// A height × width × bands reflectance cube, band-sequential.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::dim(format!(
                "cube extent must be nonzero, got {height}x{width}x{bands}"
            )));
        }
        if data.len() != height * width * bands {
            return Err(Error::dim(format!(
                "{height}x{width}x{bands} cube needs {} values, got {}",
                height * width * bands,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at element {pos}")));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Result<Self> {
        Self::new(height, width, bands, vec![0.0; height * width * bands])
    }

    /// Builds a cube from a closure evaluated at `(band, row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * bands);
        for b in 0..bands {
            for r in 0..height {
                for c in 0..width {
                    data.push(f(b, r, c));
                }
            }
        }
        Self::new(height, width, bands, data)
    }

    /// Stacks equally sized single-band planes.
    pub fn from_planes(height: usize, width: usize, planes: &[&[f64]]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * planes.len());
        for (i, p) in planes.iter().enumerate() {
            if p.len() != height * width {
                return Err(Error::dim(format!(
                    "plane {i} has {} values, expected {}",
                    p.len(),
                    height * width
                )));
            }
            data.extend_from_slice(p);
        }
        Self::new(height, width, planes.len(), data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Pixels per band.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.data[(band * self.height + row) * self.width + col]
    }

    /// Spectrum of the pixel at flattened index `p`.
    pub fn spectrum(&self, p: usize) -> Vec<f64> {
        let n = self.pixels();
        (0..self.bands).map(|b| self.data[b * n + p]).collect()
    }

    pub fn same_shape(&self, other: &HsiCube) -> bool {
        self.height == other.height && self.width == other.width && self.bands == other.bands
    }

    pub(crate) fn check_same_shape(&self, other: &HsiCube, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.bands, other.height, other.width, other.bands
            )))
        }
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Clamps negative values to zero, as done on export of network outputs.
    pub fn clamp_nonnegative(mut self) -> Self {
        for v in &mut self.data {
            *v = v.max(0.0);
        }
        self
    }
}

/// Band center wavelengths in nanometers with the visible/infrared split.
#[derive(Debug, Clone, PartialEq)]
pub struct WavelengthTable {
    centers: Vec<f64>,
    visible_boundary: usize,
}

/// Upper edge of the visible range used when no explicit boundary is given.
pub const VISIBLE_EDGE_NM: f64 = 700.0;

impl WavelengthTable {
    /// `visible_boundary` is the number of leading bands counted as visible.
    pub fn new(centers: Vec<f64>, visible_boundary: usize) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::dim("wavelength table needs at least two bands"));
        }
        if let Some(w) = centers.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Parameter(format!(
                "wavelengths must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        if let Some(c) = centers.iter().find(|c| !(350.0..=2600.0).contains(*c)) {
            return Err(Error::Parameter(format!(
                "wavelength {c} nm outside [350, 2600]"
            )));
        }
        if visible_boundary == 0 || visible_boundary >= centers.len() {
            return Err(Error::Parameter(format!(
                "visible boundary {visible_boundary} must lie in 1..{}",
                centers.len()
            )));
        }
        Ok(Self {
            centers,
            visible_boundary,
        })
    }

    /// Boundary placed after the last band below [`VISIBLE_EDGE_NM`], clamped to `1..C`.
    pub fn with_visible_edge(centers: Vec<f64>) -> Result<Self> {
        let n = centers.len();
        let v = centers
            .iter()
            .filter(|&&c| c < VISIBLE_EDGE_NM)
            .count()
            .clamp(1, n.saturating_sub(1).max(1));
        Self::new(centers, v)
    }

    /// `bands` centers spaced evenly over `[first, last]` nm.
    pub fn linear(bands: usize, first: f64, last: f64) -> Result<Self> {
        if bands < 2 {
            return Err(Error::dim("wavelength table needs at least two bands"));
        }
        let step = (last - first) / (bands - 1) as f64;
        Self::with_visible_edge((0..bands).map(|i| first + step * i as f64).collect())
    }

    /// The 224-band AVIRIS sampling (approximate, 400–2500 nm) before water-vapor exclusion.
    pub fn aviris_raw() -> Vec<f64> {
        let step = (2500.0 - 400.0) / 223.0;
        (0..224).map(|i| 400.0 + step * i as f64).collect()
    }

    /// The 172 AVIRIS bands kept after water-vapor exclusion, with the first 41 visible.
    pub fn aviris_172() -> Self {
        let mask = BandMask::aviris_water_vapor();
        let centers = mask.filter(&Self::aviris_raw());
        Self::new(centers, 41).expect("static AVIRIS table is valid")
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn visible_boundary(&self) -> usize {
        self.visible_boundary
    }

    /// Shortest wavelength, the reference λ₁ of the transmission model.
    pub fn reference(&self) -> f64 {
        self.centers[0]
    }

    /// Applies a band mask; the boundary becomes the count of kept visible bands.
    pub fn exclude(&self, mask: &BandMask) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(Error::dim(format!(
                "mask has {} entries for {} bands",
                mask.len(),
                self.len()
            )));
        }
        let v = mask.keep[..self.visible_boundary]
            .iter()
            .filter(|&&k| k)
            .count();
        let centers = mask.filter(&self.centers);
        let n = centers.len();
        Self::new(centers, v.clamp(1, n.saturating_sub(1).max(1)))
    }
}

/// Which raw sensor bands survive exclusion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandMask {
    keep: Vec<bool>,
}

impl BandMask {
    pub fn new(keep: Vec<bool>) -> Result<Self> {
        if !keep.iter().any(|&k| k) {
            return Err(Error::Parameter("band mask keeps no bands".into()));
        }
        Ok(Self { keep })
    }

    pub fn keep_all(bands: usize) -> Self {
        Self {
            keep: vec![true; bands.max(1)],
        }
    }

    /// Mask over `bands` raw bands dropping the given 1-based inclusive ranges.
    pub fn drop_ranges(bands: usize, ranges: &[(usize, usize)]) -> Result<Self> {
        let mut keep = vec![true; bands];
        for &(lo, hi) in ranges {
            if lo == 0 || hi < lo || hi > bands {
                return Err(Error::Parameter(format!(
                    "band range {lo}-{hi} invalid for {bands} bands"
                )));
            }
            keep[lo - 1..hi].iter_mut().for_each(|k| *k = false);
        }
        Self::new(keep)
    }

    /// AVIRIS water-vapor exclusion: 224 → 172 bands.
    pub fn aviris_water_vapor() -> Self {
        Self::drop_ranges(224, &[(1, 10), (104, 116), (152, 170), (215, 224)])
            .expect("static AVIRIS mask is valid")
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn keeps(&self, band: usize) -> bool {
        self.keep[band]
    }

    fn filter<T: Copy>(&self, items: &[T]) -> Vec<T> {
        items
            .iter()
            .zip(&self.keep)
            .filter_map(|(&x, &k)| k.then_some(x))
            .collect()
    }
}

/// Drops masked bands, keeping the remaining planes in their original order.
pub fn exclude_bands(raw: &HsiCube, mask: &BandMask) -> Result<HsiCube> {
    if mask.len() != raw.bands() {
        return Err(Error::dim(format!(
            "mask has {} entries for a {}-band cube",
            mask.len(),
            raw.bands()
        )));
    }
    let mut data = Vec::with_capacity(raw.pixels() * mask.kept());
    for b in (0..raw.bands()).filter(|&b| mask.keeps(b)) {
        data.extend_from_slice(raw.band(b));
    }
    HsiCube::new(raw.height(), raw.width(), mask.kept(), data)
}

/// Spectral-pixel matrix: `rows` bands by `cols` pixels, column j is pixel j's spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatMatrix {
    rows: usize,
    cols: usize,
    // Row-major (rows × cols). A row is one band, so this is the cube payload verbatim.
    values: Vec<f64>,
}

impl FlatMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn to_matrix(cube: &HsiCube) -> FlatMatrix {
    FlatMatrix {
        rows: cube.bands(),
        cols: cube.pixels(),
        values: cube.data().to_vec(),
    }
}

pub fn from_matrix(m: &FlatMatrix, height: usize, width: usize) -> Result<HsiCube> {
    if height * width != m.cols() {
        return Err(Error::dim(format!(
            "{height}x{width} image does not match {} matrix columns",
            m.cols()
        )));
    }
    HsiCube::new(height, width, m.rows(), m.values.clone())
}

/// Spatial augmentations applied identically to every band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Augmentation {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
}

impl Augmentation {
    pub const ALL: [Augmentation; 6] = [
        Augmentation::Identity,
        Augmentation::Rot90,
        Augmentation::Rot180,
        Augmentation::Rot270,
        Augmentation::FlipH,
        Augmentation::FlipV,
    ];

    pub fn needs_square(self) -> bool {
        matches!(self, Augmentation::Rot90 | Augmentation::Rot270)
    }

    /// Source position `(row, col)` in the input for output position `(r, c)`.
    /// Rotations are counter-clockwise; `h`, `w` are the input extent.
    fn source(self, r: usize, c: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Augmentation::Identity => (r, c),
            Augmentation::Rot90 => (c, w - 1 - r),
            Augmentation::Rot180 => (h - 1 - r, w - 1 - c),
            Augmentation::Rot270 => (h - 1 - c, r),
            Augmentation::FlipH => (r, w - 1 - c),
            Augmentation::FlipV => (h - 1 - r, c),
        }
    }
}

impl std::str::FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => Augmentation::Identity,
            "rot90" => Augmentation::Rot90,
            "rot180" => Augmentation::Rot180,
            "rot270" => Augmentation::Rot270,
            "flipH" | "fliph" => Augmentation::FlipH,
            "flipV" | "flipv" => Augmentation::FlipV,
            other => return Err(Error::Parameter(format!("unknown augmentation '{other}'"))),
        })
    }
}

pub fn augment(cube: &HsiCube, op: Augmentation) -> Result<HsiCube> {
    let (h, w) = (cube.height(), cube.width());
    if op.needs_square() && h != w {
        return Err(Error::dim(format!(
            "{op:?} needs a square image, got {h}x{w}"
        )));
    }
    let mut data = Vec::with_capacity(cube.data().len());
    for b in 0..cube.bands() {
        let plane = cube.band(b);
        for r in 0..h {
            for c in 0..w {
                let (sr, sc) = op.source(r, c, h, w);
                data.push(plane[sr * w + sc]);
            }
        }
    }
    HsiCube::new(h, w, cube.bands(), data)
}

/// 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// False-color composite from three 0-based band indices, each min-max stretched to 0..=255.
/// A constant band maps to 0.
pub fn rgb_composite(cube: &HsiCube, red: usize, green: usize, blue: usize) -> Result<RgbImage> {
    for idx in [red, green, blue] {
        if idx >= cube.bands() {
            return Err(Error::dim(format!(
                "band {idx} out of range for a {}-band cube",
                cube.bands()
            )));
        }
    }
    let stretch = |b: usize| -> Vec<u8> {
        let plane = cube.band(b);
        let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        plane
            .iter()
            .map(|&v| {
                if range > 0.0 {
                    ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect()
    };
    let (r, g, b) = (stretch(red), stretch(green), stretch(blue));
    let mut pixels = Vec::with_capacity(cube.pixels() * 3);
    for p in 0..cube.pixels() {
        pixels.extend_from_slice(&[r[p], g[p], b[p]]);
    }
    Ok(RgbImage {
        width: cube.width(),
        height: cube.height(),
        pixels,
    })
}
