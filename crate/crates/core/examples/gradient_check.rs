//! Compares the analytic gradient of every parameter against central differences.

use hsi_dehaze::fixture::DeskFixture;
use hsi_dehaze::haze::synthesize;
use hsi_dehaze::network::{backward, ModelParams, NetConfig};
use hsi_dehaze::training::{Objective, TrainConfig};

fn main() -> hsi_dehaze::Result<()> {
    let f = DeskFixture::new(1, 1, 6, 8, 2)?;
    let (hazy, _) = synthesize(&f.cleans[0], &f.patterns[0], &f.wavelengths, 0.9, 3.0)?;
    let clean = &f.cleans[0];
    let cfg = NetConfig {
        encoder_width: 8,
        decoder_widths: [8, 12],
        ..NetConfig::with_bands(8)
    };
    let params = ModelParams::init(&cfg, 1)?;
    let objective = Objective::new(&f.wavelengths, &TrainConfig::default());
    let (loss, grads) = backward(&hazy, clean, &params, &objective)?;
    println!("loss: rmrae {:.6} sparsity {:.6}", loss.rmrae, loss.sparsity);

    let h = 1e-5;
    let mut probe = params.clone();
    let mut worst = (0.0f64, String::new());
    for (ti, (name, g)) in grads.tensors().into_iter().enumerate() {
        let mut tensor_worst = 0.0f64;
        for (j, &a) in g.data().iter().enumerate() {
            let orig = probe.tensors_mut()[ti].data()[j];
            probe.tensors_mut()[ti].data_mut()[j] = orig + h;
            let up = backward(&hazy, clean, &probe, &objective)?.0.total;
            probe.tensors_mut()[ti].data_mut()[j] = orig - h;
            let down = backward(&hazy, clean, &probe, &objective)?.0.total;
            probe.tensors_mut()[ti].data_mut()[j] = orig;
            let n = (up - down) / (2.0 * h);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
            tensor_worst = tensor_worst.max(rel);
        }
        println!("{name:<28} {:>6} values  worst rel {tensor_worst:.2e}", g.len());
        if tensor_worst > worst.0 {
            worst = (tensor_worst, name);
        }
    }
    println!("worst overall {:.2e} in {}", worst.0, worst.1);
    Ok(())
}
