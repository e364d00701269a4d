//! Trains briefly on a small fixture, saves a checkpoint, reloads it and dehazes
//! a held-out cube into a `.hsif` file and a PNG composite.

use std::path::PathBuf;
use std::time::Instant;

use hsi_dehaze::cli::checkpoint::{load_params, save_params};
use hsi_dehaze::cli::cubefile::CubeFile;
use hsi_dehaze::cli::{dehaze_cube, held_out_report};
use hsi_dehaze::fixture::DeskFixture;
use hsi_dehaze::haze::PairConfig;
use hsi_dehaze::hsi::rgb_composite;
use hsi_dehaze::network::{ModelParams, NetConfig};
use hsi_dehaze::training::{split_dataset, train_loop, Dataset, Sample, TrainConfig, DEFAULT_SPLIT};

fn main() -> hsi_dehaze::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "dehaze_demo".into()));
    std::fs::create_dir_all(&out)?;

    let f = DeskFixture::new(4, 4, 16, 16, 9)?;
    let samples: Vec<Sample> = f
        .pairs(&PairConfig::default())?
        .into_iter()
        .map(|p| Sample { hazy: p.hazy, clean: p.clean })
        .collect();
    let split = split_dataset(&samples, DEFAULT_SPLIT, 9)?;
    let data = Dataset {
        train: split.train,
        val: split.val,
        wavelengths: f.wavelengths.clone(),
    };
    let config = TrainConfig {
        max_epochs: 5,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let trained = train_loop(ModelParams::init(&NetConfig::with_bands(16), 9)?, &data, &config, |r| {
        println!("epoch {} val rmrae {:.5}", r.epoch, r.val_rmrae);
    })?;

    let ckpt = out.join("model.t2ck");
    save_params(&ckpt, &trained.params)?;
    let params = load_params(&ckpt)?;

    let hazy = &split.test[0].hazy;
    let start = Instant::now();
    let dehazed = dehaze_cube(hazy, &params)?;
    println!("forward pass {:.3}s", start.elapsed().as_secs_f64());
    CubeFile::with_wavelengths(dehazed.clone(), f.wavelengths.centers().to_vec())?.write(&out.join("dehazed.hsif"))?;

    // bands 8, 4, 1 of the 400-1000 nm table sit near red, green and blue
    let img = rgb_composite(&dehazed, 7, 3, 0)?;
    image::save_buffer(out.join("dehazed.png"), &img.pixels, img.width as u32, img.height as u32, image::ColorType::Rgb8)
        .map_err(|e| hsi_dehaze::Error::Format(e.to_string()))?;

    let (d, h) = held_out_report(&params, &split.test)?;
    println!("test psnr {:.2} dB (hazy {:.2}), sam {:.3} (hazy {:.3})", d.psnr, h.psnr, d.sam, h.sam);
    Ok(())
}
