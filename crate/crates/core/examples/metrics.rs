//! Scores a hazy cube against its clean reference with the full metric suite.

use hsi_dehaze::fixture::DeskFixture;
use hsi_dehaze::haze::synthesize;
use hsi_dehaze::metrics::{MetricReport, MetricWindows};

fn main() -> hsi_dehaze::Result<()> {
    let f = DeskFixture::new(1, 1, 32, 16, 5)?;
    let (hazy, _) = synthesize(&f.cleans[0], &f.patterns[0], &f.wavelengths, 0.8, 3.0)?;
    // 64-pixel UIQI windows do not fit a 32x32 image
    let windows = MetricWindows::fitted(32, 32);
    let report = MetricReport::compute(&f.cleans[0], &hazy, windows)?;
    println!("windows: uiqi {} ssim {}", windows.uiqi, windows.ssim);
    print!("{}", report.to_key_values());
    let same = MetricReport::compute(&f.cleans[0], &f.cleans[0], windows)?;
    println!("\nidentical inputs:\n{}", same.to_key_values());
    Ok(())
}
