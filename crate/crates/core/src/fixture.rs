//! Synthetic desk-scale data: smooth endmember-mixture scenes and cirrus patterns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::haze::{generate_pairs, CirrusPatch, HazePair, PairConfig};
use crate::hsi::{HsiCube, WavelengthTable};

/// Peak value of generated cirrus patterns, leaving headroom below `α·b = 1`.
pub const PATTERN_PEAK: f64 = 0.9;

/// Band centers for desk fixtures: evenly spaced over the 400–1000 nm VNIR range.
pub fn desk_wavelengths(bands: usize) -> Result<WavelengthTable> {
    WavelengthTable::linear(bands, 400.0, 1000.0)
}

/// Smooth reflectance-like spectra in roughly `[0.05, 0.9]`, one row per endmember.
pub fn endmember_spectra(count: usize, wl: &WavelengthTable, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (wl.centers()[0], wl.centers()[wl.len() - 1]);
    (0..count)
        .map(|_| {
            let base = rng.random_range(0.1..0.4);
            let slope = rng.random_range(-0.2..0.3);
            let bumps: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(lo..hi),
                        rng.random_range(80.0..400.0),
                        rng.random_range(-0.15..0.35),
                    )
                })
                .collect();
            wl.centers()
                .iter()
                .map(|&l| {
                    let t = (l - lo) / (hi - lo);
                    let mut v = base + slope * t;
                    for &(mu, sd, amp) in &bumps {
                        v += amp * (-0.5 * ((l - mu) / sd).powi(2)).exp();
                    }
                    v.clamp(0.05, 0.9)
                })
                .collect()
        })
        .collect()
}

/// Smooth random field on `h × w`: a few low-frequency cosines.
fn smooth_field(h: usize, w: usize, rng: &mut impl Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.5..2.5),
                rng.random_range(0.5..2.5),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let y = r as f64 / h as f64;
            let x = c as f64 / w as f64;
            let v: f64 = waves
                .iter()
                .map(|&(fy, fx, ph, a)| a * (std::f64::consts::TAU * (fy * y + fx * x) + ph).cos())
                .sum();
            out.push(v);
        }
    }
    out
}

/// Clean scene as a per-pixel convex mix of `endmembers` with smooth abundances.
pub fn mixture_scene(h: usize, w: usize, endmembers: &[Vec<f64>], seed: u64) -> Result<HsiCube> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fields: Vec<Vec<f64>> = endmembers.iter().map(|_| smooth_field(h, w, &mut rng)).collect();
    let n = h * w;
    // softmax over endmembers at each pixel
    let mut abundance = vec![vec![0.0; n]; endmembers.len()];
    for p in 0..n {
        let m = fields.iter().map(|f| f[p]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = fields.iter().map(|f| (2.0 * (f[p] - m)).exp()).sum();
        for (k, f) in fields.iter().enumerate() {
            abundance[k][p] = (2.0 * (f[p] - m)).exp() / z;
        }
    }
    let bands = endmembers.first().map_or(0, Vec::len);
    HsiCube::from_fn(h, w, bands, |b, r, c| {
        let p = r * w + c;
        endmembers
            .iter()
            .zip(&abundance)
            .map(|(e, a)| e[b] * a[p])
            .sum()
    })
}

/// Smooth cirrus pattern rescaled to `[0, PATTERN_PEAK]`.
pub fn cirrus_pattern(h: usize, w: usize, seed: u64) -> Result<CirrusPatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = smooth_field(h, w, &mut rng);
    let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    CirrusPatch::new(h, w, f.iter().map(|v| PATTERN_PEAK * (v - lo) / span).collect())
}

/// A generated fixture: clean scenes, patterns and their wavelength table.
#[derive(Debug, Clone)]
pub struct DeskFixture {
    pub wavelengths: WavelengthTable,
    pub cleans: Vec<HsiCube>,
    pub patterns: Vec<CirrusPatch>,
}

impl DeskFixture {
    /// `scenes` clean cubes of `side × side × bands` and `patterns` cirrus maps.
    pub fn new(scenes: usize, patterns: usize, side: usize, bands: usize, seed: u64) -> Result<Self> {
        let wavelengths = desk_wavelengths(bands)?;
        let endmembers = endmember_spectra(5, &wavelengths, seed);
        let cleans = (0..scenes)
            .map(|i| mixture_scene(side, side, &endmembers, seed.wrapping_add(1000 + i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let patterns = (0..patterns)
            .map(|j| cirrus_pattern(side, side, seed.wrapping_add(5000 + j as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            wavelengths,
            cleans,
            patterns,
        })
    }

    pub fn pairs(&self, config: &PairConfig) -> Result<Vec<HazePair>> {
        generate_pairs(&self.cleans, &self.patterns, &self.wavelengths, config)
    }
}
