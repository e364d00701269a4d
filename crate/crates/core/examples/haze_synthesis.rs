//! Hazes one clean cube at every default haze level and prints how strongly each
//! band is affected. Shorter wavelengths lose more transmission.

use hsi_dehaze::fixture::DeskFixture;
use hsi_dehaze::haze::{band_transmission, reference_transmission, synthesize, DEFAULT_ALPHAS, DEFAULT_GAMMA};
use hsi_dehaze::metrics::psnr;

fn main() -> hsi_dehaze::Result<()> {
    let f = DeskFixture::new(1, 1, 32, 16, 3)?;
    let (clean, patch, wl) = (&f.cleans[0], &f.patterns[0], &f.wavelengths);

    let t1 = reference_transmission(patch, 1.0)?;
    let stack = band_transmission(&t1, patch.height(), patch.width(), wl, DEFAULT_GAMMA)?;
    println!("band  nm      mean t_c (alpha = 1)");
    for (c, nm) in wl.centers().iter().enumerate() {
        let mean = stack.band(c).iter().sum::<f64>() / stack.band(c).len() as f64;
        println!("{:>4}  {nm:>6.1}  {mean:.4}", c + 1);
    }

    println!("\nalpha  psnr(hazy vs clean)");
    for alpha in DEFAULT_ALPHAS {
        let (hazy, params) = synthesize(clean, patch, wl, alpha, DEFAULT_GAMMA)?;
        println!("{alpha:>5}  {:.2} dB   A_1 = {:.3}", psnr(clean, &hazy)?, params.atmospheric_light[0]);
    }
    Ok(())
}
