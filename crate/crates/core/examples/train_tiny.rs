//! Overfits a single 16×16×16 pair and prints the history every 25 steps.

use hsi_dehaze::fixture::DeskFixture;
use hsi_dehaze::haze::PairConfig;
use hsi_dehaze::network::{ModelParams, NetConfig};
use hsi_dehaze::training::{train_loop, Dataset, Sample, TrainConfig};

fn main() -> hsi_dehaze::Result<()> {
    let f = DeskFixture::new(1, 1, 16, 16, 51)?;
    let pair = f
        .pairs(&PairConfig {
            alphas: vec![0.8],
            ..PairConfig::default()
        })?
        .remove(0);
    let sample = Sample {
        hazy: pair.hazy,
        clean: pair.clean,
    };
    let data = Dataset {
        train: vec![sample.clone()],
        val: vec![sample],
        wavelengths: f.wavelengths.clone(),
    };
    let config = TrainConfig {
        max_epochs: 300,
        batch_size: 1,
        patience: 300,
        // one step per epoch here, so hold the rate flat
        decay_every_epochs: 300,
        ..TrainConfig::default()
    };
    let params = ModelParams::init(&NetConfig::with_bands(16), 1)?;
    println!("{} parameters", params.parameter_count());
    let out = train_loop(params, &data, &config, |r| {
        if r.epoch % 25 == 0 {
            println!("step {:>3}  lr {:.2e}  rmrae {:.5}  sparsity {:.5}", r.epoch, r.lr, r.train_rmrae, r.train_sparsity);
        }
    })?;
    let first = out.history[0].train_rmrae;
    let best = out.history.iter().map(|r| r.val_rmrae).fold(f64::INFINITY, f64::min);
    println!("rmrae {first:.5} -> {best:.5} (best step {:?})", out.best_epoch);
    Ok(())
}
