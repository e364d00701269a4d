mod common;

use common::*;
use hsi_dehaze::metrics::{psnr, sam, ssim, uiqi, MetricReport, MetricWindows};
use hsi_dehaze::training::{mrae, rmrae};
use hsi_dehaze::{Error, HsiCube};
use proptest::prelude::*;

const REL: f64 = 1e-6;

fn pair(h: usize, w: usize, c: usize, seed: u64) -> (HsiCube, HsiCube) {
    (
        random_cube(h, w, c, 0.05, 1.0, seed),
        random_cube(h, w, c, 0.05, 1.0, seed.wrapping_mul(31).wrapping_add(7)),
    )
}

#[test]
fn uiqi_on_8x8_window_4_uses_25_windows() {
    let (x, y) = pair(8, 8, 1, 3);
    let (v, skipped) = oracle_uiqi(&x, &y, 4);
    let got = uiqi(&x, &y, 4).unwrap();
    assert_eq!(skipped, 0);
    assert!(rel_err(got.value, v) <= REL, "{} vs {v}", got.value);
}

#[test]
fn uiqi_zero_mean_window_and_mirrored_window() {
    // a zero-mean window has no luminance factor, and with no other window left
    // the band has nothing to average
    let x = HsiCube::new(2, 2, 1, vec![1.0, -1.0, 2.0, -2.0]).unwrap();
    let neg = HsiCube::new(2, 2, 1, x.data().iter().map(|v| -v).collect()).unwrap();
    assert!(matches!(uiqi(&x, &neg, 2), Err(Error::Domain(_))));
    // mirrored about a common mean: correlation -1, luminance and contrast 1
    let shifted = HsiCube::new(2, 2, 1, vec![1.5, 0.5, 2.0, 0.0]).unwrap();
    let mirrored = HsiCube::new(2, 2, 1, vec![0.5, 1.5, 0.0, 2.0]).unwrap();
    let q = uiqi(&shifted, &mirrored, 2).unwrap();
    assert!((q.value - -1.0).abs() < 1e-12, "{}", q.value);
}

#[test]
fn identical_inputs() {
    let x = random_cube(12, 12, 4, 0.05, 1.0, 9);
    let r = MetricReport::compute(&x, &x, MetricWindows::fitted(12, 12)).unwrap();
    assert_eq!(r.psnr, f64::INFINITY);
    assert!((r.uiqi - 1.0).abs() < 1e-12);
    assert_eq!(r.sam, 0.0);
    assert!((r.ssim - 1.0).abs() < 1e-12);
    assert_eq!((r.mrae, r.rmrae), (0.0, 0.0));
}

#[test]
fn psnr_is_asymmetric() {
    let (x, y) = pair(5, 5, 2, 4);
    let a = psnr(&x, &y).unwrap();
    let b = psnr(&y, &x).unwrap();
    assert!(rel_err(a, oracle_psnr(&x, &y)) <= REL);
    assert!(rel_err(b, oracle_psnr(&y, &x)) <= REL);
    assert_ne!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn all_metrics_match_oracles(seed in any::<u64>(), h in 3usize..=12, w in 3usize..=12, c in 1usize..=4) {
        let (x, y) = pair(h, w, c, seed);
        let win_q = h.min(w).min(4);
        let win_s = h.min(w).min(3);
        prop_assert!(rel_err(psnr(&x, &y).unwrap(), oracle_psnr(&x, &y)) <= REL);
        prop_assert!(rel_err(sam(&x, &y).unwrap(), oracle_sam(&x, &y)) <= REL);
        let q = uiqi(&x, &y, win_q).unwrap();
        let (oq, os) = oracle_uiqi(&x, &y, win_q);
        prop_assert!(rel_err(q.value, oq) <= REL, "uiqi {} vs {}", q.value, oq);
        prop_assert_eq!(q.skipped, os);
        prop_assert!(rel_err(ssim(&x, &y, win_s).unwrap(), oracle_ssim(&x, &y, win_s)) <= REL);
        prop_assert!(rel_err(mrae(&x, &y).unwrap(), oracle_mrae(&x, &y)) <= REL);
        prop_assert!(rel_err(rmrae(&x, &y).unwrap(), oracle_rmrae(&x, &y)) <= REL);
    }

    #[test]
    fn sam_is_symmetric_and_scale_invariant(seed in any::<u64>(), k in 0.01f64..100.0) {
        let (x, y) = pair(4, 4, 3, seed);
        prop_assert!((sam(&x, &y).unwrap() - sam(&y, &x).unwrap()).abs() < 1e-12);
        let scaled = HsiCube::new(4, 4, 3, x.data().iter().map(|v| k * v).collect()).unwrap();
        prop_assert!(sam(&x, &scaled).unwrap() < 1e-5);
    }
}
