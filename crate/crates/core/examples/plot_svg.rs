//! Renders an observation and two continuations as an SVG keyframe strip.

use motion_diffusion::config::Bones;
use motion_diffusion::motion::{synth_generate, SynthConfig};
use motion_diffusion::plot::{render_svg, PlotStyle};

fn main() -> motion_diffusion::Result<()> {
    let motions = (0..3)
        .map(|seed| {
            let seq = synth_generate(&SynthConfig {
                joints: 6,
                frames: 75,
                seed,
                ..SynthConfig::default()
            })?;
            Ok((format!("seed {seed}"), seq))
        })
        .collect::<motion_diffusion::Result<Vec<_>>>()?;
    let style = PlotStyle::new(Bones(None).resolve(6), 6, 25);
    let svg = render_svg(&motions, &style)?;
    let out = std::env::temp_dir().join("motion-strip.svg");
    std::fs::write(&out, &svg).map_err(|e| motion_diffusion::Error::io(&out, e))?;
    println!("wrote {} ({} bytes)", out.display(), svg.len());
    Ok(())
}
