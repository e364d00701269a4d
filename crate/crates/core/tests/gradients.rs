mod common;

use common::{finite_difference_check, random_cube};
use hsi_dehaze::network::{ConcatMode, ModelParams, NetConfig, SseMode};
use hsi_dehaze::training::Objective;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(sse: SseMode, concat: ConcatMode, sparsity: bool, seed: u64) {
    let cfg = NetConfig {
        bands: 4,
        encoder_width: 4,
        features: 10,
        decoder_widths: [4, 5],
        ffn_expansion: 1,
        sse,
        concat,
        ..NetConfig::default()
    };
    let mut params = ModelParams::init(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for g in params.abs_gate.as_mut().unwrap().data_mut() {
        *g = rng.random_range(-0.5..1.0);
    }
    let hazy = random_cube(4, 5, 4, 0.1, 1.0, seed + 1);
    let clean = random_cube(4, 5, 4, 0.0, 1.0, seed + 2);
    let objective = Objective {
        visible_bands: 2,
        sparsity,
        normalize_sparsity: true,
    };
    let r = finite_difference_check(&params, &hazy, &clean, &objective, 1e-5, 1e-7);
    assert!(r.worst <= 1e-3, "{sse:?}/{concat:?}: worst {} at {} {:?}", r.worst, r.worst_name, r.worst_pair);
}

#[test]
fn gradients_full_model() {
    check(SseMode::Both, ConcatMode::Hazy, true, 1);
}

#[test]
fn gradients_selected_concat() {
    check(SseMode::SpatialOnly, ConcatMode::Selected, true, 2);
}

#[test]
fn gradients_no_refinement_no_concat() {
    check(SseMode::None, ConcatMode::None, false, 3);
}

#[test]
fn killed_band_has_zero_gate_gradient() {
    let cfg = NetConfig {
        bands: 3,
        encoder_width: 4,
        decoder_widths: [4, 4],
        ffn_expansion: 1,
        ..NetConfig::default()
    };
    let mut params = ModelParams::init(&cfg, 9).unwrap();
    params.abs_gate.as_mut().unwrap().data_mut()[1] = -1.0;
    let hazy = random_cube(4, 4, 3, 0.1, 1.0, 10);
    let clean = random_cube(4, 4, 3, 0.1, 1.0, 11);
    let obj = Objective {
        visible_bands: 1,
        sparsity: true,
        normalize_sparsity: true,
    };
    let (_, g) = hsi_dehaze::network::backward(&hazy, &clean, &params, &obj).unwrap();
    assert_eq!(g.abs_gate.unwrap().data()[1], 0.0);
}

#[test]
fn zero_loss_gives_zero_gradient() {
    // zero network maps everything to zero; a zero target is then met exactly
    let cfg = NetConfig {
        bands: 3,
        encoder_width: 4,
        decoder_widths: [4, 4],
        ffn_expansion: 1,
        ..NetConfig::default()
    };
    let params = ModelParams::zeros(&cfg).unwrap();
    let hazy = random_cube(4, 4, 3, 0.1, 1.0, 12);
    let clean = hsi_dehaze::HsiCube::zeros(4, 4, 3).unwrap();
    let (loss, g) = hsi_dehaze::network::backward(&hazy, &clean, &params, &Objective::rmrae_only()).unwrap();
    assert_eq!(loss.total, 0.0);
    assert!(g.tensors().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
}
