//! Haze-level sensitivity through the command layer: synth, a short train, then
//! twenty random haze draws.

use std::path::PathBuf;

use clap::Parser;
use hsi_dehaze::cli::cubefile::CubeFile;
use hsi_dehaze::cli::{run, Cli};
use hsi_dehaze::fixture::DeskFixture;

fn cli(args: &[&str]) -> hsi_dehaze::Result<()> {
    let parsed = Cli::parse_from(std::iter::once("hsi-dehaze").chain(args.iter().copied()));
    run(&parsed, &mut std::io::stdout())
}

fn main() -> hsi_dehaze::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "sensitivity_demo".into()));
    let (clean, cirrus, data) = (root.join("clean"), root.join("cirrus"), root.join("data"));
    std::fs::create_dir_all(&clean)?;
    std::fs::create_dir_all(&cirrus)?;
    let f = DeskFixture::new(3, 3, 16, 16, 12)?;
    for (i, c) in f.cleans.iter().enumerate() {
        CubeFile::with_wavelengths(c.clone(), f.wavelengths.centers().to_vec())?.write(&clean.join(format!("{i}.hsif")))?;
    }
    for (j, p) in f.patterns.iter().enumerate() {
        CubeFile::new(p.to_cube()).write(&cirrus.join(format!("{j}.hsif")))?;
    }
    let p = |x: &PathBuf| x.to_str().unwrap().to_owned();
    let ckpt = root.join("model.t2ck");
    let manifest = data.join("manifest.csv");
    cli(&["synth", "--clean", &p(&clean), "--cirrus", &p(&cirrus), "--out", &p(&data)])?;
    cli(&["train", "--data", &p(&manifest), "--max-epochs", "3", "--out", &p(&ckpt)])?;
    cli(&[
        "sensitivity", "--data", &p(&manifest), "--ckpt", &p(&ckpt), "--trials", "20", "--seed", "1",
        "--out", &p(&root.join("sensitivity.csv")),
    ])
}
