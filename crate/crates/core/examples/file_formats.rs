//! Round-trips a cube file and a checkpoint and shows that a flipped bit is caught.

use hsi_dehaze::cli::checkpoint::Checkpoint;
use hsi_dehaze::cli::cubefile::CubeFile;
use hsi_dehaze::fixture::DeskFixture;
use hsi_dehaze::network::{ModelParams, NetConfig};

fn main() -> hsi_dehaze::Result<()> {
    let f = DeskFixture::new(1, 1, 8, 6, 1)?;
    let file = CubeFile::with_wavelengths(f.cleans[0].clone(), f.wavelengths.centers().to_vec())?;
    let bytes = file.to_bytes()?;
    let back = CubeFile::from_bytes(&bytes)?;
    println!("cube: {} bytes, round trip re-encodes identically: {}", bytes.len(), back.to_bytes()? == bytes);
    let truncated = CubeFile::from_bytes(&bytes[..bytes.len() - 1]);
    println!("truncated cube: {}", truncated.unwrap_err());

    let params = ModelParams::init(&NetConfig::with_bands(6), 2)?;
    let ck = Checkpoint::from_params(&params)?;
    let bytes = ck.to_bytes()?;
    println!("checkpoint: {} entries, {} bytes", ck.entries.len(), bytes.len());
    for e in ck.entries.iter().take(4) {
        println!("  {:<22} {:?}", e.name, e.dims);
    }
    let restored = Checkpoint::from_bytes(&bytes)?.to_params()?;
    println!("architecture restored: {}", restored.config == params.config);
    let mut bad = bytes.clone();
    bad[bytes.len() / 2] ^= 0x10;
    println!("flipped bit: {}", Checkpoint::from_bytes(&bad).unwrap_err());
    Ok(())
}
