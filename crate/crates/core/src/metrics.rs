//! Reference-based quality metrics: PSNR, UIQI, SAM, SSIM, plus MRAE/rMRAE.
//!
//! UIQI and SSIM use stride-1 sliding square windows with population moments.
//! Window sums come from integral images of band-mean-centered data.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hsi::HsiCube;
use crate::training::{mrae, rmrae};

pub const DEFAULT_UIQI_WINDOW: usize = 64;
pub const DEFAULT_SSIM_WINDOW: usize = 11;

/// Mean over bands of `10 log10(max(X_c)^2 / MSE_c)`; infinite when any band matches exactly.
pub fn psnr(reference: &HsiCube, estimate: &HsiCube) -> Result<f64> {
    reference.check_same_shape(estimate, "estimate")?;
    let mut sum = 0.0;
    for b in 0..reference.bands() {
        let x = reference.band(b);
        let y = estimate.band(b);
        let peak = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if peak.is_nan() || peak <= 0.0 {
            return Err(Error::Domain(format!(
                "band {b} of the reference has peak {peak}; PSNR needs a positive peak"
            )));
        }
        let mse = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
        sum += if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (peak * peak / mse).log10()
        };
    }
    Ok(sum / reference.bands() as f64)
}

/// Mean spectral angle in degrees.
///
/// Uses `2 atan2(|x/|x| - y/|y||, |x/|x| + y/|y||)`, which keeps full precision
/// near 0 and 180 degrees where `acos` of the cosine does not.
pub fn sam(reference: &HsiCube, estimate: &HsiCube) -> Result<f64> {
    reference.check_same_shape(estimate, "estimate")?;
    let n = reference.pixels();
    let mut nx = vec![0.0; n];
    let mut ny = vec![0.0; n];
    for b in 0..reference.bands() {
        for (p, (&x, &y)) in reference.band(b).iter().zip(estimate.band(b)).enumerate() {
            nx[p] += x * x;
            ny[p] += y * y;
        }
    }
    for p in 0..n {
        if nx[p] == 0.0 || ny[p] == 0.0 {
            let which = if nx[p] == 0.0 { "reference" } else { "estimate" };
            return Err(Error::Domain(format!(
                "{which} spectrum at pixel {p} (row {}, col {}) has zero norm",
                p / reference.width(),
                p % reference.width()
            )));
        }
    }
    let norm_x: Vec<f64> = nx.iter().map(|v| v.sqrt()).collect();
    let norm_y: Vec<f64> = ny.iter().map(|v| v.sqrt()).collect();
    let mut diff = vec![0.0; n];
    let mut sum = vec![0.0; n];
    for b in 0..reference.bands() {
        for (p, (&x, &y)) in reference.band(b).iter().zip(estimate.band(b)).enumerate() {
            let (u, v) = (x / norm_x[p], y / norm_y[p]);
            diff[p] += (u - v) * (u - v);
            sum[p] += (u + v) * (u + v);
        }
    }
    let total: f64 = diff
        .iter()
        .zip(&sum)
        .map(|(d, s)| 2.0 * d.sqrt().atan2(s.sqrt()))
        .sum();
    Ok(total.to_degrees() / n as f64)
}

/// Population moments of one window.
#[derive(Debug, Clone, Copy)]
struct Moments {
    mx: f64,
    my: f64,
    vx: f64,
    vy: f64,
    cxy: f64,
}

/// Summed-area tables of `x, y, x², y², xy` over centered planes.
struct WindowSums {
    w1: usize,
    offset: (f64, f64),
    tables: [Vec<f64>; 5],
}

impl WindowSums {
    fn new(x: &[f64], y: &[f64], h: usize, w: usize) -> Self {
        let n = (h * w) as f64;
        let ox = x.iter().sum::<f64>() / n;
        let oy = y.iter().sum::<f64>() / n;
        let w1 = w + 1;
        let mut tables: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; (h + 1) * w1]);
        for r in 0..h {
            let mut row = [0.0; 5];
            for c in 0..w {
                let a = x[r * w + c] - ox;
                let b = y[r * w + c] - oy;
                let vals = [a, b, a * a, b * b, a * b];
                for k in 0..5 {
                    row[k] += vals[k];
                    tables[k][(r + 1) * w1 + c + 1] = tables[k][r * w1 + c + 1] + row[k];
                }
            }
        }
        Self {
            w1,
            offset: (ox, oy),
            tables,
        }
    }

    fn moments(&self, r: usize, c: usize, win: usize) -> Moments {
        let area = (win * win) as f64;
        let w1 = self.w1;
        let s: [f64; 5] = std::array::from_fn(|k| {
            let t = &self.tables[k];
            t[(r + win) * w1 + c + win] - t[r * w1 + c + win] - t[(r + win) * w1 + c] + t[r * w1 + c]
        });
        let ax = s[0] / area;
        let ay = s[1] / area;
        Moments {
            mx: ax + self.offset.0,
            my: ay + self.offset.1,
            vx: (s[2] / area - ax * ax).max(0.0),
            vy: (s[3] / area - ay * ay).max(0.0),
            cxy: s[4] / area - ax * ay,
        }
    }
}

fn check_window(reference: &HsiCube, estimate: &HsiCube, window: usize, what: &str) -> Result<()> {
    reference.check_same_shape(estimate, "estimate")?;
    if window == 0 {
        return Err(Error::Parameter(format!("{what} window must be positive")));
    }
    if reference.height() < window || reference.width() < window {
        return Err(Error::dim(format!(
            "{what} window {window} does not fit a {}x{} image; pass a smaller window",
            reference.height(),
            reference.width()
        )));
    }
    Ok(())
}

fn range(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    hi - lo
}

/// UIQI value plus the number of windows left out for zero variance or zero mean energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UiqiScore {
    pub value: f64,
    pub skipped: usize,
}

/// Universal image quality index.
///
/// A window is skipped when either signal's variance is at most `1e-12 * range²`
/// (range of both bands combined) or when both means are zero. Each band's score is
/// the mean over its kept windows; bands with no kept window do not contribute.
pub fn uiqi(reference: &HsiCube, estimate: &HsiCube, window: usize) -> Result<UiqiScore> {
    check_window(reference, estimate, window, "UIQI")?;
    let (h, w) = (reference.height(), reference.width());
    let mut band_sum = 0.0;
    let mut bands_used = 0usize;
    let mut skipped = 0usize;
    for b in 0..reference.bands() {
        let x = reference.band(b);
        let y = estimate.band(b);
        let span = range(x).max(range(y));
        let floor = 1e-12 * span * span;
        let sums = WindowSums::new(x, y, h, w);
        let mut total = 0.0;
        let mut used = 0usize;
        for r in 0..=h - window {
            for c in 0..=w - window {
                let m = sums.moments(r, c, window);
                let energy = m.mx * m.mx + m.my * m.my;
                if m.vx <= floor || m.vy <= floor || energy == 0.0 {
                    skipped += 1;
                    continue;
                }
                total += 4.0 * m.cxy * m.mx * m.my / ((m.vx + m.vy) * energy);
                used += 1;
            }
        }
        if used > 0 {
            band_sum += total / used as f64;
            bands_used += 1;
        }
    }
    if bands_used == 0 {
        return Err(Error::Domain(
            "UIQI undefined: every window has zero variance or zero mean".into(),
        ));
    }
    Ok(UiqiScore {
        value: band_sum / bands_used as f64,
        skipped,
    })
}

/// SSIM stabilizers for a band with reference dynamic range `r` (1 when the band is flat).
pub fn ssim_constants(r: f64) -> (f64, f64, f64) {
    let r = if r > 0.0 { r } else { 1.0 };
    let c1 = (0.01 * r).powi(2);
    let c2 = (0.03 * r).powi(2);
    (c1, c2, c2 / 2.0)
}

/// Structural similarity, luminance × contrast × structure per window.
pub fn ssim(reference: &HsiCube, estimate: &HsiCube, window: usize) -> Result<f64> {
    check_window(reference, estimate, window, "SSIM")?;
    let (h, w) = (reference.height(), reference.width());
    let mut band_sum = 0.0;
    for b in 0..reference.bands() {
        let x = reference.band(b);
        let y = estimate.band(b);
        let (c1, c2, c3) = ssim_constants(range(x));
        let sums = WindowSums::new(x, y, h, w);
        let mut total = 0.0;
        for r in 0..=h - window {
            for c in 0..=w - window {
                let m = sums.moments(r, c, window);
                let (sx, sy) = (m.vx.sqrt(), m.vy.sqrt());
                let lum = (2.0 * m.mx * m.my + c1) / (m.mx * m.mx + m.my * m.my + c1);
                let con = (2.0 * sx * sy + c2) / (m.vx + m.vy + c2);
                let st = (m.cxy + c3) / (sx * sy + c3);
                total += lum * con * st;
            }
        }
        band_sum += total / ((h - window + 1) * (w - window + 1)) as f64;
    }
    Ok(band_sum / reference.bands() as f64)
}

/// Sliding-window sizes used for a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricWindows {
    pub uiqi: usize,
    pub ssim: usize,
}

impl Default for MetricWindows {
    fn default() -> Self {
        Self {
            uiqi: DEFAULT_UIQI_WINDOW,
            ssim: DEFAULT_SSIM_WINDOW,
        }
    }
}

impl MetricWindows {
    /// Defaults shrunk to fit an `h × w` image.
    pub fn fitted(h: usize, w: usize) -> Self {
        let side = h.min(w);
        Self {
            uiqi: DEFAULT_UIQI_WINDOW.min(side),
            ssim: DEFAULT_SSIM_WINDOW.min(side),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub uiqi: f64,
    pub sam: f64,
    pub ssim: f64,
    pub mrae: f64,
    pub rmrae: f64,
    pub n_skipped_windows: usize,
    #[serde(skip)]
    pub windows: MetricWindows,
}

pub const REPORT_KEYS: [&str; 7] = ["psnr", "uiqi", "sam", "ssim", "mrae", "rmrae", "n_skipped_windows"];

impl MetricReport {
    pub fn compute(reference: &HsiCube, estimate: &HsiCube, windows: MetricWindows) -> Result<Self> {
        let q = uiqi(reference, estimate, windows.uiqi)?;
        Ok(Self {
            psnr: psnr(reference, estimate)?,
            uiqi: q.value,
            sam: sam(reference, estimate)?,
            ssim: ssim(reference, estimate, windows.ssim)?,
            mrae: mrae(reference, estimate)?,
            rmrae: rmrae(reference, estimate)?,
            n_skipped_windows: q.skipped,
            windows,
        })
    }

    fn values(&self) -> [String; 7] {
        [
            fmt_value(self.psnr),
            fmt_value(self.uiqi),
            fmt_value(self.sam),
            fmt_value(self.ssim),
            fmt_value(self.mrae),
            fmt_value(self.rmrae),
            self.n_skipped_windows.to_string(),
        ]
    }

    /// One `key=value` line per metric.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in REPORT_KEYS.iter().zip(self.values()) {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn csv_header() -> String {
        REPORT_KEYS.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        self.values().join(",")
    }
}

/// Shortest round-trip decimal; infinity prints as `inf`.
pub fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}
