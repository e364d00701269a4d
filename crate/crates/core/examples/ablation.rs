//! Trains a few ablation variants on one small fixture with identical seeds
//! and prints the ablation CSV.

use hsi_dehaze::cli::ablate::Variant;
use hsi_dehaze::cli::{run_variant, ExperimentData, RunConfig, ABLATION_HEADER};
use hsi_dehaze::fixture::DeskFixture;
use hsi_dehaze::haze::PairConfig;
use hsi_dehaze::training::{split_dataset, Sample, TrainConfig, DEFAULT_SPLIT};

fn main() -> hsi_dehaze::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(3);
    let f = DeskFixture::new(3, 3, 16, 12, 4)?;
    let samples: Vec<Sample> = f
        .pairs(&PairConfig::default())?
        .into_iter()
        .map(|p| Sample { hazy: p.hazy, clean: p.clean })
        .collect();
    let s = split_dataset(&samples, DEFAULT_SPLIT, 4)?;
    let data = ExperimentData {
        train: s.train,
        val: s.val,
        test: s.test,
        wavelengths: f.wavelengths,
    };
    let base = RunConfig {
        training: TrainConfig {
            max_epochs: epochs,
            batch_size: 1,
            seed: 4,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    };
    println!("{ABLATION_HEADER}");
    for v in [Variant::Full, Variant::AbsSr, Variant::NoConcat, Variant::ConcatYs, Variant::RmraeOnly] {
        let (row, _) = run_variant(v, &data, &base, &mut std::io::sink())?;
        println!("{}", row.to_csv());
    }
    Ok(())
}
