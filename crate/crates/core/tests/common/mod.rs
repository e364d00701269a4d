//! Independent naive oracles shared by the integration tests.
#![allow(dead_code)]

use hsi_dehaze::hsi::HsiCube;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_cube(h: usize, w: usize, c: usize, lo: f64, hi: f64, seed: u64) -> HsiCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w * c).map(|_| rng.random_range(lo..hi)).collect();
    HsiCube::new(h, w, c, data).unwrap()
}

fn at(cube: &HsiCube, b: usize, r: usize, c: usize) -> f64 {
    cube.data()[(b * cube.height() + r) * cube.width() + c]
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn oracle_rmrae(x: &HsiCube, y: &HsiCube) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for b in 0..x.bands() {
        for r in 0..x.height() {
            for c in 0..x.width() {
                let t = at(x, b, r, c);
                s += (t - at(y, b, r, c)).abs() / (t + 1.0);
                n += 1;
            }
        }
    }
    s / n as f64
}

pub fn oracle_mrae(x: &HsiCube, y: &HsiCube) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for b in 0..x.bands() {
        for r in 0..x.height() {
            for c in 0..x.width() {
                let t = at(x, b, r, c);
                s += (t - at(y, b, r, c)).abs() / t;
                n += 1;
            }
        }
    }
    s / n as f64
}

pub fn oracle_psnr(x: &HsiCube, y: &HsiCube) -> f64 {
    let mut total = 0.0;
    for b in 0..x.bands() {
        let mut peak = f64::MIN;
        let mut se = 0.0;
        for r in 0..x.height() {
            for c in 0..x.width() {
                peak = peak.max(at(x, b, r, c));
                let d = at(x, b, r, c) - at(y, b, r, c);
                se += d * d;
            }
        }
        let mse = se / (x.height() * x.width()) as f64;
        total += 20.0 * peak.log10() - 10.0 * mse.log10();
    }
    total / x.bands() as f64
}

/// Spectral angle through `atan2(|x × y|, x·y)` with the Lagrange identity,
/// which stays accurate near 0 and 180 degrees.
pub fn oracle_sam(x: &HsiCube, y: &HsiCube) -> f64 {
    let mut total = 0.0;
    for r in 0..x.height() {
        for c in 0..x.width() {
            let a: Vec<f64> = (0..x.bands()).map(|b| at(x, b, r, c)).collect();
            let e: Vec<f64> = (0..x.bands()).map(|b| at(y, b, r, c)).collect();
            let dot: f64 = a.iter().zip(&e).map(|(p, q)| p * q).sum();
            let mut cross2 = 0.0;
            for i in 0..a.len() {
                for j in i + 1..a.len() {
                    let t = a[i] * e[j] - a[j] * e[i];
                    cross2 += t * t;
                }
            }
            total += cross2.sqrt().atan2(dot).to_degrees();
        }
    }
    total / (x.height() * x.width()) as f64
}

/// Two-pass population moments of one window.
fn window_moments(x: &HsiCube, y: &HsiCube, b: usize, r0: usize, c0: usize, win: usize) -> [f64; 5] {
    let n = (win * win) as f64;
    let mut mx = 0.0;
    let mut my = 0.0;
    for r in r0..r0 + win {
        for c in c0..c0 + win {
            mx += at(x, b, r, c);
            my += at(y, b, r, c);
        }
    }
    mx /= n;
    my /= n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for r in r0..r0 + win {
        for c in c0..c0 + win {
            let dx = at(x, b, r, c) - mx;
            let dy = at(y, b, r, c) - my;
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
        }
    }
    [mx, my, vx / n, vy / n, cxy / n]
}

/// UIQI as the product of correlation, luminance and contrast factors.
/// Windows where either variance vanishes are skipped. Returns `(value, skipped)`.
pub fn oracle_uiqi(x: &HsiCube, y: &HsiCube, win: usize) -> (f64, usize) {
    let mut per_band = Vec::new();
    let mut skipped = 0;
    for b in 0..x.bands() {
        let mut lo = f64::MAX;
        let mut hi = f64::MIN;
        for v in x.band(b).iter().chain(y.band(b)) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        let floor = 1e-12 * (hi - lo) * (hi - lo);
        let mut vals = Vec::new();
        for r in 0..=x.height() - win {
            for c in 0..=x.width() - win {
                let [mx, my, vx, vy, cxy] = window_moments(x, y, b, r, c, win);
                if vx <= floor || vy <= floor || mx * mx + my * my == 0.0 {
                    skipped += 1;
                    continue;
                }
                let (sx, sy) = (vx.sqrt(), vy.sqrt());
                let corr = cxy / (sx * sy);
                let lum = 2.0 * mx * my / (mx * mx + my * my);
                let con = 2.0 * sx * sy / (vx + vy);
                vals.push(corr * lum * con);
            }
        }
        if !vals.is_empty() {
            per_band.push(vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    (per_band.iter().sum::<f64>() / per_band.len() as f64, skipped)
}

pub fn oracle_ssim(x: &HsiCube, y: &HsiCube, win: usize) -> f64 {
    let mut total = 0.0;
    for b in 0..x.bands() {
        let band = x.band(b);
        let range = band.iter().copied().fold(f64::MIN, f64::max) - band.iter().copied().fold(f64::MAX, f64::min);
        let r = if range > 0.0 { range } else { 1.0 };
        let c1 = (0.01 * r) * (0.01 * r);
        let c2 = (0.03 * r) * (0.03 * r);
        let c3 = c2 / 2.0;
        let mut sum = 0.0;
        let mut count = 0usize;
        for r0 in 0..=x.height() - win {
            for c0 in 0..=x.width() - win {
                let [mx, my, vx, vy, cxy] = window_moments(x, y, b, r0, c0, win);
                let (sx, sy) = (vx.sqrt(), vy.sqrt());
                let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                let k = (2.0 * sx * sy + c2) / (vx + vy + c2);
                let s = (cxy + c3) / (sx * sy + c3);
                sum += l * k * s;
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    total / x.bands() as f64
}

use hsi_dehaze::network::{backward, forward_cached, ModelParams};
use hsi_dehaze::training::Objective;

/// Worst relative error between analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub checked: usize,
    pub worst: f64,
    pub worst_name: String,
    /// Analytic and numeric values at the worst entry.
    pub worst_pair: (f64, f64),
}

/// Central differences over every parameter; `floor` bounds the denominator of the
/// relative error from below so that near-zero gradients compare absolutely.
pub fn finite_difference_check(
    params: &ModelParams,
    hazy: &HsiCube,
    clean: &HsiCube,
    objective: &Objective,
    h: f64,
    floor: f64,
) -> GradCheck {
    let (_, grads) = backward(hazy, clean, params, objective).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data().to_vec()))
        .collect();
    // forward-only loss, assembled independently of `backward`
    let loss = |p: &ModelParams| {
        let cache = forward_cached(hazy, p).unwrap();
        let estimate = cache.output().to_cube().unwrap();
        let selected = cache.selected().to_cube().unwrap();
        let with_sparsity = objective.sparsity && p.abs_gate.is_some();
        objective
            .loss(clean, &estimate, with_sparsity.then_some(&selected))
            .unwrap()
            .total
    };
    let mut probe = params.clone();
    let mut out = GradCheck {
        checked: 0,
        worst: 0.0,
        worst_name: String::new(),
        worst_pair: (0.0, 0.0),
    };
    for (ti, (name, grad)) in analytic.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let orig = probe.tensors_mut()[ti].data()[j];
            probe.tensors_mut()[ti].data_mut()[j] = orig + h;
            let up = loss(&probe);
            probe.tensors_mut()[ti].data_mut()[j] = orig - h;
            let down = loss(&probe);
            probe.tensors_mut()[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            out.checked += 1;
            if rel > out.worst {
                out.worst = rel;
                out.worst_name = format!("{name}[{j}]");
                out.worst_pair = (a, numeric);
            }
        }
    }
    out
}
