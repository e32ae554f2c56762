//! Reconstruction error of a truncated DCT as the number of kept rows grows.

use motion_diffusion::dct::dct_basis;
use motion_diffusion::motion::{synth_generate, SynthConfig};

fn main() -> motion_diffusion::Result<()> {
    let seq = synth_generate(&SynthConfig {
        joints: 17,
        frames: 125,
        seed: 3,
        ..SynthConfig::default()
    })?;
    let x = seq.frames();
    let norm = x.frobenius_norm();
    println!("{:>4}  {:>12}", "L", "rel. error");
    for l in [1, 2, 5, 10, 20, 40, 125] {
        let basis = dct_basis(x.rows(), l)?;
        let y = basis.forward(x)?;
        let err = basis.inverse(&y)?.sub(x)?.frobenius_norm() / norm;
        println!("{l:>4}  {err:>12.3e}");
    }
    Ok(())
}
