//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Run with `cargo test --test acceptance`. Criteria 6 and 7 train several
//! networks on the desk fixture and dominate the runtime.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use hsi_dehaze::cli::ablate::Variant;
use hsi_dehaze::cli::checkpoint::Checkpoint;
use hsi_dehaze::cli::cubefile::CubeFile;
use hsi_dehaze::cli::held_out_report;
use hsi_dehaze::fixture::DeskFixture;
use hsi_dehaze::haze::{
    band_transmission, compose_haze, estimate_atmospheric_light, reference_transmission,
    CirrusPatch, PairConfig,
};
use hsi_dehaze::hsi::WavelengthTable;
use hsi_dehaze::metrics::{psnr, sam, ssim, uiqi, MetricReport, MetricWindows};
use hsi_dehaze::network::{
    abs_forward, sse_forward, spa_r, spe_r, AttentionKind, ConcatMode, ModelParams, NetConfig,
    RefineBlock, SseMode,
};
use hsi_dehaze::training::{
    evaluate_rmrae, lr_schedule, mrae, rmrae, split_counts, split_dataset, train_loop, Dataset,
    Objective, Sample, TrainConfig, TrainOutcome, DEFAULT_SPLIT,
};
use hsi_dehaze::HsiCube;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// pinned tolerances
const GRAD_REL_TOL: f64 = 1e-3;
const GRAD_STEP: f64 = 1e-5;
const GRAD_FLOOR: f64 = 1e-7;
const METRIC_REL_TOL: f64 = 1e-6;
const SMALL_ALPHA: f64 = 1e-6;
const SMALL_ALPHA_TOL: f64 = 1e-3;
const SMOKE_STEPS: usize = 300;
const SMOKE_MIN_DROP: f64 = 0.90;
const DEHAZE_MIN_GAIN_DB: f64 = 3.0;

// desk-scale training budget for criteria 6 and 7
const DESK_SEED: u64 = 7;
const DESK_EPOCHS: usize = 15;
const DESK_BATCH: usize = 1;

struct Line {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn run(id: u32, name: &'static str, f: impl FnOnce() -> (bool, String)) -> Line {
    let t = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let line = Line {
        id,
        name,
        pass,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    };
    println!(
        "{} [{}] {}: {} ({:.1}s)",
        if line.pass { "PASS" } else { "FAIL" },
        line.id,
        line.name,
        line.detail,
        line.seconds
    );
    line
}

fn gradient_fidelity() -> (bool, String) {
    let cfg = NetConfig {
        bands: 8,
        encoder_width: 8,
        decoder_widths: [8, 12],
        ffn_expansion: 2,
        ..NetConfig::default()
    };
    let wl = WavelengthTable::linear(8, 400.0, 1000.0).unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut notes = Vec::new();
    for (i, concat) in [ConcatMode::Hazy, ConcatMode::Selected].into_iter().enumerate() {
        let cfg = NetConfig { concat, ..cfg.clone() };
        let seed = 11 + i as u64;
        let mut params = ModelParams::init(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for g in params.abs_gate.as_mut().unwrap().data_mut() {
            *g = rng.random_range(-0.5..1.0);
        }
        let hazy = random_cube(6, 6, 8, 0.1, 1.0, seed + 100);
        let clean = random_cube(6, 6, 8, 0.05, 1.0, seed + 200);
        let objective = Objective {
            visible_bands: wl.visible_boundary(),
            sparsity: true,
            normalize_sparsity: true,
        };
        let r = finite_difference_check(&params, &hazy, &clean, &objective, GRAD_STEP, GRAD_FLOOR);
        checked += r.checked;
        if r.worst > worst {
            worst = r.worst;
        }
        notes.push(format!("{concat:?} worst {:.2e} at {}", r.worst, r.worst_name));
    }
    (
        worst <= GRAD_REL_TOL,
        format!("{checked} parameters, {} (tol {GRAD_REL_TOL:e})", notes.join("; ")),
    )
}

fn metric_oracles() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    let mut skipped_mismatch = 0;
    for i in 0..50u64 {
        let h = rng.random_range(3..=12);
        let w = rng.random_range(3..=12);
        let c = rng.random_range(1..=4);
        let x = random_cube(h, w, c, 0.05, 1.0, 1000 + i);
        let y = random_cube(h, w, c, 0.05, 1.0, 2000 + i);
        let wq = h.min(w).min(rng.random_range(2..=8));
        let ws = h.min(w).min(rng.random_range(2..=7));
        let q = uiqi(&x, &y, wq).unwrap();
        let (oq, os) = oracle_uiqi(&x, &y, wq);
        if q.skipped != os {
            skipped_mismatch += 1;
        }
        let errs = [
            rel_err(psnr(&x, &y).unwrap(), oracle_psnr(&x, &y)),
            rel_err(q.value, oq),
            rel_err(sam(&x, &y).unwrap(), oracle_sam(&x, &y)),
            rel_err(ssim(&x, &y, ws).unwrap(), oracle_ssim(&x, &y, ws)),
            rel_err(mrae(&x, &y).unwrap(), oracle_mrae(&x, &y)),
            rel_err(rmrae(&x, &y).unwrap(), oracle_rmrae(&x, &y)),
        ];
        worst = errs.iter().copied().fold(worst, f64::max);
    }
    let x = random_cube(12, 12, 4, 0.05, 1.0, 77);
    let id = MetricReport::compute(&x, &x, MetricWindows::fitted(12, 12)).unwrap();
    let identical = id.psnr == f64::INFINITY
        && (id.uiqi - 1.0).abs() < 1e-12
        && id.sam == 0.0
        && (id.ssim - 1.0).abs() < 1e-12
        && id.mrae == 0.0
        && id.rmrae == 0.0;
    (
        worst <= METRIC_REL_TOL && skipped_mismatch == 0 && identical,
        format!(
            "50 pairs worst rel {worst:.2e} (tol {METRIC_REL_TOL:e}), skip-count mismatches {skipped_mismatch}, \
             identical -> ({}, {}, {}, {}, {}, {})",
            hsi_dehaze::metrics::fmt_value(id.psnr),
            id.uiqi,
            id.sam,
            id.ssim,
            id.mrae,
            id.rmrae
        ),
    )
}

fn haze_physics() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut failures = Vec::new();
    let mut worst_small = 0.0f64;
    for draw in 0..100u64 {
        let h = rng.random_range(2..=10);
        let w = rng.random_range(2..=10);
        let c = rng.random_range(2..=12);
        let wl = WavelengthTable::linear(c, 400.0, rng.random_range(700.0..2500.0)).unwrap();
        let values: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..0.99)).collect();
        let patch = CirrusPatch::new(h, w, values.clone()).unwrap();
        let alpha = rng.random_range(0.01..=1.0);
        let t1 = reference_transmission(&patch, alpha).unwrap();
        if t1.iter().zip(&values).any(|(t, b)| *t != 1.0 - alpha * b) {
            failures.push(format!("draw {draw}: t1 mismatch"));
        }
        let stack = band_transmission(&t1, h, w, &wl, 3.0).unwrap();
        for p in 0..h * w {
            for b in 1..c {
                if stack.band(b)[p] < stack.band(b - 1)[p] {
                    failures.push(format!("draw {draw}: not monotone at pixel {p} band {b}"));
                }
            }
        }
        let clean = random_cube(h, w, c, 0.0, 1.0, 3000 + draw);
        let a = estimate_atmospheric_light(&clean);
        let hazy = compose_haze(&clean, &stack, &a).unwrap();
        for (b, &ab) in a.iter().enumerate() {
            for (g, v) in clean.band(b).iter().zip(hazy.band(b)) {
                let (lo, hi) = (g.min(ab), g.max(ab));
                if *v < lo - 1e-15 || *v > hi + 1e-15 {
                    failures.push(format!("draw {draw}: band {b} value {v} outside [{lo}, {hi}]"));
                }
            }
        }
        let t_small = reference_transmission(&patch, SMALL_ALPHA).unwrap();
        let s_small = band_transmission(&t_small, h, w, &wl, 3.0).unwrap();
        let faint = compose_haze(&clean, &s_small, &a).unwrap();
        let amax = a.iter().copied().fold(0.0, f64::max);
        let dev = faint
            .data()
            .iter()
            .zip(clean.data())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        worst_small = worst_small.max(dev / amax);
        if dev > SMALL_ALPHA_TOL * amax {
            failures.push(format!("draw {draw}: alpha={SMALL_ALPHA} deviates {dev}"));
        }
    }
    (
        failures.is_empty(),
        if failures.is_empty() {
            format!("100 draws, small-alpha max deviation {worst_small:.2e}·max(A)")
        } else {
            format!("{} violations, first: {}", failures.len(), failures[0])
        },
    )
}

fn max_abs_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn structural_identities() -> (bool, String) {
    let cfg = NetConfig {
        bands: 6,
        encoder_width: 8,
        decoder_widths: [8, 8],
        ..NetConfig::default()
    };
    let x = random_cube(5, 7, 6, 0.0, 1.0, 41);
    let zero = ModelParams::zeros(&cfg).unwrap();
    let sse_dev = max_abs_dev(sse_forward(&x, &zero).unwrap().data(), x.data());

    let mut gate: Vec<f64> = (0..6).map(|i| 0.5 + i as f64).collect();
    gate[2] = 0.0;
    gate[4] = -1.5;
    let ys = abs_forward(&x, &gate).unwrap();
    let killed = ys.band(2).iter().chain(ys.band(4)).filter(|v| **v != 0.0).count();

    let fm = hsi_dehaze::network::FeatureMap::from_cube(&x);
    let block = |kind| RefineBlock {
        kind,
        ..zero.refine[0].clone()
    };
    let spe = spe_r(&fm, &block(AttentionKind::Spectral)).unwrap();
    let spa = spa_r(&fm, &block(AttentionKind::Spatial), cfg.token_cap).unwrap();
    let spe_dev = max_abs_dev(&spe.data, &fm.data);
    let spa_dev = max_abs_dev(&spa.data, &fm.data);
    (
        sse_dev == 0.0 && killed == 0 && spe_dev == 0.0 && spa_dev == 0.0,
        format!(
            "sse dev {sse_dev}, nonzero values in killed bands {killed}, SpeR dev {spe_dev}, SpaR dev {spa_dev}"
        ),
    )
}

fn smoke_run() -> (TrainOutcome, f64) {
    let wl = WavelengthTable::linear(16, 400.0, 1000.0).unwrap();
    let f = DeskFixture::new(1, 1, 16, 16, 51).unwrap();
    let pairs = f
        .pairs(&PairConfig {
            alphas: vec![0.8],
            seed: 51,
            ..PairConfig::default()
        })
        .unwrap();
    let sample = Sample {
        hazy: pairs[0].hazy.clone(),
        clean: pairs[0].clean.clone(),
    };
    let data = Dataset {
        train: vec![sample.clone()],
        val: vec![sample.clone()],
        wavelengths: wl,
    };
    let params = ModelParams::init(&NetConfig::with_bands(16), 52).unwrap();
    let tc = TrainConfig {
        max_epochs: SMOKE_STEPS,
        batch_size: 1,
        patience: SMOKE_STEPS,
        // one pair means one step per epoch; keep the rate flat over the run
        decay_every_epochs: SMOKE_STEPS,
        seed: 53,
        ..TrainConfig::default()
    };
    let out = train_loop(params, &data, &tc, |_| {}).unwrap();
    let last = evaluate_rmrae(&out.params, &[sample]).unwrap();
    (out, last)
}

fn training_smoke() -> (bool, String) {
    let (a, last_a) = smoke_run();
    let (b, last_b) = smoke_run();
    let first = a.history[0].train_rmrae;
    let drop = 1.0 - last_a / first;
    let same = a.history == b.history
        && last_a == last_b
        && a.params.tensors().iter().zip(b.params.tensors()).all(|((_, x), (_, y))| *x == y);
    (
        a.history.len() == SMOKE_STEPS && drop >= SMOKE_MIN_DROP && same,
        format!(
            "{} steps, rMRAE {first:.5} -> {last_a:.5} (drop {:.1}%, need {:.0}%), rerun identical: {same}",
            a.history.len(),
            100.0 * drop,
            100.0 * SMOKE_MIN_DROP
        ),
    )
}

struct Desk {
    data: Dataset,
    test: Vec<Sample>,
}

fn desk_fixture() -> Desk {
    let f = DeskFixture::new(8, 4, 32, 16, DESK_SEED).unwrap();
    let pairs = f
        .pairs(&PairConfig {
            seed: DESK_SEED,
            ..PairConfig::default()
        })
        .unwrap();
    let samples: Vec<Sample> = pairs
        .into_iter()
        .map(|p| Sample {
            hazy: p.hazy,
            clean: p.clean,
        })
        .collect();
    let s = split_dataset(&samples, DEFAULT_SPLIT, DESK_SEED).unwrap();
    Desk {
        data: Dataset {
            train: s.train,
            val: s.val,
            wavelengths: f.wavelengths,
        },
        test: s.test,
    }
}

fn desk_train(desk: &Desk, variant: Variant) -> TrainOutcome {
    let base_net = NetConfig::with_bands(16);
    let base_train = TrainConfig {
        max_epochs: DESK_EPOCHS,
        batch_size: DESK_BATCH,
        seed: DESK_SEED,
        ..TrainConfig::default()
    };
    let (net, tc) = variant.configure(&base_net, &base_train);
    let params = ModelParams::init(&net, DESK_SEED).unwrap();
    let t = Instant::now();
    let out = train_loop(params, &desk.data, &tc, |r| {
        if r.epoch % 10 == 9 {
            eprintln!(
                "  {variant} epoch {} val_rmrae {:.5} ({:.0}s)",
                r.epoch,
                r.val_rmrae,
                t.elapsed().as_secs_f64()
            );
        }
    })
    .unwrap();
    out
}

fn best_val(out: &TrainOutcome) -> f64 {
    out.history
        .iter()
        .map(|r| r.val_rmrae)
        .fold(f64::INFINITY, f64::min)
}

fn dehazing_improvement(desk: &Desk, full: &TrainOutcome) -> (bool, String) {
    let (d, h) = held_out_report(&full.params, &desk.test).unwrap();
    let gain = d.psnr - h.psnr;
    (
        gain >= DEHAZE_MIN_GAIN_DB && d.sam < h.sam,
        format!(
            "{} test pairs, PSNR {:.2} vs hazy {:.2} dB (gain {gain:.2}, need {DEHAZE_MIN_GAIN_DB}), \
             SAM {:.3} vs hazy {:.3} deg, best epoch {:?} of {}",
            desk.test.len(),
            d.psnr,
            h.psnr,
            d.sam,
            h.sam,
            full.best_epoch,
            full.history.len()
        ),
    )
}

fn ablation_ordering(desk: &Desk, full: &TrainOutcome) -> (bool, String) {
    let v_full = best_val(full);
    let v_abs_sr = best_val(&desk_train(desk, Variant::AbsSr));
    let v_no_concat = best_val(&desk_train(desk, Variant::NoConcat));
    let v_rmrae_only = best_val(&desk_train(desk, Variant::RmraeOnly));
    (
        v_full <= v_abs_sr && v_full <= v_no_concat,
        format!(
            "val rMRAE full {v_full:.5} <= abs+sr {v_abs_sr:.5}: {}; concat {v_full:.5} <= no-concat {v_no_concat:.5}: {}; \
             reported only: rmrae-only {v_rmrae_only:.5} vs rmrae+sparsity {v_full:.5}",
            v_full <= v_abs_sr,
            v_full <= v_no_concat
        ),
    )
}

fn schedule_and_split() -> (bool, String) {
    let tc = TrainConfig::default();
    let lr0 = lr_schedule(0, &tc);
    let lr29 = lr_schedule(29, &tc);
    let lr30 = lr_schedule(30, &tc);
    let split = split_counts(20, DEFAULT_SPLIT).unwrap();
    let ok = lr0 == 3e-4 && lr29 == 3e-4 && (lr30 - 1.8e-4).abs() <= 1e-18 && split == (18, 1, 1);
    (ok, format!("lr(0)={lr0:e} lr(29)={lr29:e} lr(30)={lr30:e} split(20)={split:?}"))
}

fn round_trips() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut cube_failures = 0;
    for i in 0..1000u64 {
        let (h, w, c) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
        // f32-representable values survive bit-exactly
        let data = (0..h * w * c).map(|_| f64::from(rng.random::<f32>() * 4.0 - 1.0)).collect();
        let cube = HsiCube::new(h, w, c, data).unwrap();
        let file = if i % 2 == 0 {
            CubeFile::new(cube)
        } else {
            let wl = (0..c).map(|b| f64::from(400.0f32 + 10.0 * b as f32)).collect();
            CubeFile::with_wavelengths(cube, wl).unwrap()
        };
        let bytes = file.to_bytes().unwrap();
        let back = CubeFile::from_bytes(&bytes).unwrap();
        if back != file || back.to_bytes().unwrap() != bytes {
            cube_failures += 1;
        }
    }
    let mut ck_failures = 0;
    let mut flips_rejected = 0;
    for i in 0..20u64 {
        let cfg = NetConfig {
            bands: 3 + (i as usize % 4),
            encoder_width: 4,
            decoder_widths: [4, 6],
            ffn_expansion: 1,
            sse: [SseMode::Both, SseMode::None, SseMode::SpectralOnly, SseMode::SpatialOnly][i as usize % 4],
            ..NetConfig::default()
        };
        let params = ModelParams::init(&cfg, 500 + i).unwrap();
        let ck = Checkpoint::from_params(&params).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        if back != ck || back.to_bytes().unwrap() != bytes || back.config().unwrap() != cfg {
            ck_failures += 1;
        }
        let mut bad = bytes.clone();
        let bit = rng.random_range(0..bad.len() * 8);
        bad[bit / 8] ^= 1 << (bit % 8);
        if Checkpoint::from_bytes(&bad).is_err() {
            flips_rejected += 1;
        }
    }
    (
        cube_failures == 0 && ck_failures == 0 && flips_rejected == 20,
        format!(
            "cube mismatches {cube_failures}/1000, checkpoint mismatches {ck_failures}/20, \
             single-bit flips rejected {flips_rejected}/20"
        ),
    )
}

fn main() {
    let mut lines = vec![
        run(1, "gradient fidelity", gradient_fidelity),
        run(2, "metric oracle equivalence", metric_oracles),
        run(3, "haze physics invariants", haze_physics),
        run(4, "structural identities", structural_identities),
        run(5, "training smoke", training_smoke),
    ];
    let t = Instant::now();
    let desk = desk_fixture();
    let full = desk_train(&desk, Variant::Full);
    eprintln!("  full model trained in {:.0}s", t.elapsed().as_secs_f64());
    lines.push(run(6, "dehazing improvement", || dehazing_improvement(&desk, &full)));
    lines.push(run(7, "ablation ordering", || ablation_ordering(&desk, &full)));
    lines.push(run(8, "schedule and split", schedule_and_split));
    lines.push(run(9, "file round trips", round_trips));
    let failed = lines.iter().filter(|l| !l.pass).count();
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
