//! Writes a desk-scale corpus (clean cubes and cirrus patterns) as `.hsif` files,
//! ready for `hsi-dehaze synth --clean <out>/clean --cirrus <out>/cirrus`.
//!
//! ```text
//! cargo run --example make_fixture -- /tmp/desk 8 4 32 16
//! ```

use std::path::PathBuf;

use hsi_dehaze::cli::cubefile::CubeFile;
use hsi_dehaze::fixture::DeskFixture;

fn main() -> hsi_dehaze::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map_or("desk_fixture", String::as_str));
    let num = |i: usize, default: usize| args.get(i).and_then(|v| v.parse().ok()).unwrap_or(default);
    let (scenes, patterns, side, bands) = (num(1, 8), num(2, 4), num(3, 32), num(4, 16));

    let f = DeskFixture::new(scenes, patterns, side, bands, 7)?;
    std::fs::create_dir_all(out.join("clean"))?;
    std::fs::create_dir_all(out.join("cirrus"))?;
    for (i, c) in f.cleans.iter().enumerate() {
        let file = CubeFile::with_wavelengths(c.clone(), f.wavelengths.centers().to_vec())?;
        file.write(&out.join("clean").join(format!("scene_{i:02}.hsif")))?;
    }
    for (j, p) in f.patterns.iter().enumerate() {
        CubeFile::new(p.to_cube()).write(&out.join("cirrus").join(format!("cirrus_{j:02}.hsif")))?;
    }
    println!(
        "{scenes} scenes and {patterns} patterns of {side}x{side}x{bands} in {} (visible bands: {})",
        out.display(),
        f.wavelengths.visible_boundary()
    );
    Ok(())
}
