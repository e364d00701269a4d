//! Haze synthesis with the atmospheric scattering model.
//!
//! A normalized cirrus-band patch drives a reference transmission map
//! `t1 = 1 - alpha * b9`, which is spread over the spectrum with
//! `t_c = exp((lambda_1 / lambda_c)^gamma * ln t1)` so longer wavelengths see
//! more of the ground. The hazy cube is then `H_c = G_c t_c + A_c (1 - t_c)`
//! with one atmospheric-light value per band.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hsi::{augment, Augmentation, HsiCube, WavelengthTable};
use crate::training::split_counts;

/// Haze levels used for the training pairs.
pub const DEFAULT_ALPHAS: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
/// Haze concentration exponent.
pub const DEFAULT_GAMMA: f64 = 3.0;
/// Fraction of brightest pixels averaged for the atmospheric light.
pub const BRIGHTEST_FRACTION: f64 = 1e-4;

/// Normalized cirrus-band intensity, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CirrusPatch {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl CirrusPatch {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::dim(format!(
                "{height}x{width} patch with {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("cirrus value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Takes band 0 of a single-band cube.
    pub fn from_cube(cube: &HsiCube) -> Result<Self> {
        if cube.bands() != 1 {
            return Err(Error::dim(format!(
                "cirrus patch must be single-band, got {} bands",
                cube.bands()
            )));
        }
        Self::new(cube.height(), cube.width(), cube.band(0).to_vec())
    }

    pub fn to_cube(&self) -> HsiCube {
        HsiCube::new(self.height, self.width, 1, self.values.clone())
            .expect("patch values are finite")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Reference map plus per-band transmission planes, all in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionStack {
    reference: Vec<f64>,
    // Band-sequential bands × pixels, same layout as a cube.
    bands: HsiCube,
}

impl TransmissionStack {
    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn band(&self, c: usize) -> &[f64] {
        self.bands.band(c)
    }

    pub fn as_cube(&self) -> &HsiCube {
        &self.bands
    }

    /// Rebuilds a stack from a cube of per-band maps; used after augmentation.
    pub fn from_cube(reference: Vec<f64>, bands: HsiCube) -> Result<Self> {
        if reference.len() != bands.pixels() {
            return Err(Error::dim("reference map does not match transmission planes"));
        }
        Ok(Self { reference, bands })
    }

    pub fn num_bands(&self) -> usize {
        self.bands.bands()
    }

    fn augmented(&self, op: Augmentation) -> Result<Self> {
        let r = HsiCube::new(
            self.bands.height(),
            self.bands.width(),
            1,
            self.reference.clone(),
        )?;
        Ok(Self {
            reference: augment(&r, op)?.into_data(),
            bands: augment(&self.bands, op)?,
        })
    }
}

/// Haze parameters for one synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct HazeParams {
    pub alpha: f64,
    pub gamma: f64,
    pub atmospheric_light: Vec<f64>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("alpha {alpha} must lie in (0, 1]")));
    }
    Ok(())
}

/// `t1(x) = 1 - alpha * b9(x)`.
pub fn reference_transmission(patch: &CirrusPatch, alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if alpha * patch.max() >= 1.0 {
        return Err(Error::Parameter(format!(
            "alpha {alpha} drives the transmission to zero (max cirrus {})",
            patch.max()
        )));
    }
    Ok(patch.values.iter().map(|&b| 1.0 - alpha * b).collect())
}

/// Spreads the reference map over the spectrum: `t_c = exp((lambda_1/lambda_c)^gamma ln t1)`.
pub fn band_transmission(
    t1: &[f64],
    height: usize,
    width: usize,
    wavelengths: &WavelengthTable,
    gamma: f64,
) -> Result<TransmissionStack> {
    if t1.len() != height * width {
        return Err(Error::dim(format!(
            "reference map has {} values for {height}x{width}",
            t1.len()
        )));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Parameter(format!("gamma {gamma} must be positive")));
    }
    if let Some(t) = t1.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::Domain(format!(
            "reference transmission {t} outside (0, 1]"
        )));
    }
    let lambda_1 = wavelengths.reference();
    let log_t1: Vec<f64> = t1.iter().map(|t| t.ln()).collect();
    let mut data = Vec::with_capacity(t1.len() * wavelengths.len());
    for (c, &lambda_c) in wavelengths.centers().iter().enumerate() {
        if c == 0 {
            // exponent is exactly 1 here
            data.extend_from_slice(t1);
            continue;
        }
        let k = (lambda_1 / lambda_c).powf(gamma);
        data.extend(log_t1.iter().map(|l| (k * l).exp()));
    }
    Ok(TransmissionStack {
        reference: t1.to_vec(),
        bands: HsiCube::new(height, width, wavelengths.len(), data)?,
    })
}

/// Number of brightest pixels averaged for `pixels` pixels per band.
pub fn brightest_count(pixels: usize) -> usize {
    ((pixels as f64 * BRIGHTEST_FRACTION).round() as usize).max(1)
}

/// Per-band atmospheric light: mean of the brightest 0.01% of that band's pixels.
pub fn estimate_atmospheric_light(cube: &HsiCube) -> Vec<f64> {
    let k = brightest_count(cube.pixels());
    (0..cube.bands())
        .map(|b| {
            let mut v = cube.band(b).to_vec();
            // partial selection: the k largest end up at the front
            if k < v.len() {
                v.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
            }
            v[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

/// `H_c = G_c t_c + A_c (1 - t_c)` per band and pixel.
pub fn compose_haze(
    clean: &HsiCube,
    transmission: &TransmissionStack,
    atmospheric_light: &[f64],
) -> Result<HsiCube> {
    clean.check_same_shape(transmission.as_cube(), "clean cube vs transmission")?;
    if atmospheric_light.len() != clean.bands() {
        return Err(Error::dim(format!(
            "{} atmospheric-light values for {} bands",
            atmospheric_light.len(),
            clean.bands()
        )));
    }
    if let Some(a) = atmospheric_light.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(Error::Parameter(format!(
            "atmospheric light {a} must be finite and nonnegative"
        )));
    }
    let mut data = Vec::with_capacity(clean.data().len());
    for (c, &a) in atmospheric_light.iter().enumerate() {
        data.extend(
            clean
                .band(c)
                .iter()
                .zip(transmission.band(c))
                .map(|(&g, &t)| g * t + a * (1.0 - t)),
        );
    }
    HsiCube::new(clean.height(), clean.width(), clean.bands(), data)
}

/// Hazes one clean cube with one patch in a single call.
pub fn synthesize(
    clean: &HsiCube,
    patch: &CirrusPatch,
    wavelengths: &WavelengthTable,
    alpha: f64,
    gamma: f64,
) -> Result<(HsiCube, HazeParams)> {
    check_patch_fits(clean, patch)?;
    let t1 = reference_transmission(patch, alpha)?;
    let stack = band_transmission(&t1, patch.height(), patch.width(), wavelengths, gamma)?;
    let a = estimate_atmospheric_light(clean);
    let hazy = compose_haze(clean, &stack, &a)?;
    Ok((
        hazy,
        HazeParams {
            alpha,
            gamma,
            atmospheric_light: a,
        },
    ))
}

fn check_patch_fits(clean: &HsiCube, patch: &CirrusPatch) -> Result<()> {
    if clean.height() != patch.height() || clean.width() != patch.width() {
        return Err(Error::dim(format!(
            "cirrus patch {}x{} does not match clean cube {}x{}",
            patch.height(),
            patch.width(),
            clean.height(),
            clean.width()
        )));
    }
    Ok(())
}

/// Train/validation/test membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One synthesized training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct HazePair {
    pub id: usize,
    pub clean_index: usize,
    pub pattern_index: usize,
    pub alpha: f64,
    pub augmentation: Augmentation,
    pub split: Split,
    pub clean: HsiCube,
    pub hazy: HsiCube,
}

/// Settings for [`generate_pairs`].
#[derive(Debug, Clone)]
pub struct PairConfig {
    pub alphas: Vec<f64>,
    pub gamma: f64,
    /// Augmentations drawn uniformly per pair; empty means identity only.
    pub augmentations: Vec<Augmentation>,
    /// Pattern-level train/val/test fractions.
    pub pattern_fractions: (f64, f64, f64),
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            alphas: DEFAULT_ALPHAS.to_vec(),
            gamma: DEFAULT_GAMMA,
            augmentations: Augmentation::ALL.to_vec(),
            pattern_fractions: (0.8, 0.1, 0.1),
            seed: 0,
        }
    }
}

/// Mixes a base seed with an index into an independent stream seed.
pub(crate) fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Split label per pattern. Fewer than three patterns are all training patterns.
pub fn pattern_splits(patterns: usize, fractions: (f64, f64, f64), seed: u64) -> Result<Vec<Split>> {
    let mut labels = vec![Split::Train; patterns];
    if patterns < 3 {
        return Ok(labels);
    }
    let (_, n_val, n_test) = split_counts(patterns, fractions)?;
    let mut order: Vec<usize> = (0..patterns).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX)));
    for &i in &order[..n_val] {
        labels[i] = Split::Val;
    }
    for &i in &order[n_val..n_val + n_test] {
        labels[i] = Split::Test;
    }
    Ok(labels)
}

/// Emits one hazy/clean pair for every (clean, pattern, alpha) combination.
///
/// Each pair draws its augmentation from a stream seeded by `(seed, pair id)`,
/// applies it to the clean cube and the transmission maps, and then composes
/// the haze. Split labels are assigned per pattern.
pub fn generate_pairs(
    cleans: &[HsiCube],
    patches: &[CirrusPatch],
    wavelengths: &WavelengthTable,
    config: &PairConfig,
) -> Result<Vec<HazePair>> {
    if cleans.is_empty() || patches.is_empty() || config.alphas.is_empty() {
        return Err(Error::Parameter(
            "pair generation needs at least one clean cube, patch and alpha".into(),
        ));
    }
    for &a in &config.alphas {
        check_alpha(a)?;
    }
    for clean in cleans {
        if clean.bands() != wavelengths.len() {
            return Err(Error::dim(format!(
                "clean cube has {} bands but the wavelength table has {}",
                clean.bands(),
                wavelengths.len()
            )));
        }
        for p in patches {
            check_patch_fits(clean, p)?;
        }
    }
    let splits = pattern_splits(patches.len(), config.pattern_fractions, config.seed)?;
    let lights: Vec<Vec<f64>> = cleans.iter().map(estimate_atmospheric_light).collect();

    let mut pairs = Vec::with_capacity(cleans.len() * patches.len() * config.alphas.len());
    for (ci, clean) in cleans.iter().enumerate() {
        for (pi, patch) in patches.iter().enumerate() {
            for &alpha in &config.alphas {
                let id = pairs.len();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, id as u64));
                let allowed: Vec<Augmentation> = config
                    .augmentations
                    .iter()
                    .copied()
                    .filter(|a| !a.needs_square() || clean.height() == clean.width())
                    .collect();
                let op = if allowed.is_empty() {
                    Augmentation::Identity
                } else {
                    allowed[rng.random_range(0..allowed.len())]
                };
                let t1 = reference_transmission(patch, alpha)?;
                let stack = band_transmission(
                    &t1,
                    patch.height(),
                    patch.width(),
                    wavelengths,
                    config.gamma,
                )?
                .augmented(op)?;
                let g = augment(clean, op)?;
                let hazy = compose_haze(&g, &stack, &lights[ci])?;
                pairs.push(HazePair {
                    id,
                    clean_index: ci,
                    pattern_index: pi,
                    alpha,
                    augmentation: op,
                    split: splits[pi],
                    clean: g,
                    hazy,
                });
            }
        }
    }
    Ok(pairs)
}
