//! Generates synthetic motion, round-trips it through a MOTN file, cuts it
//! into observation/future windows and groups windows with similar endings.

use motion_diffusion::motion::{
    load_motion_file, multimodal_group, save_motion_file, synth_generate, window_dataset,
    SynthConfig,
};

fn main() -> motion_diffusion::Result<()> {
    let seqs = (0..4)
        .map(|seed| {
            synth_generate(&SynthConfig {
                joints: 5,
                frames: 120,
                seed,
                ..SynthConfig::default()
            })
        })
        .collect::<motion_diffusion::Result<Vec<_>>>()?;
    let first = &seqs[0];
    println!(
        "{} frames of {} joints at {} fps",
        first.len(),
        first.joints(),
        first.fps()
    );

    let dir = std::env::temp_dir().join("motion-diffusion-synth");
    std::fs::create_dir_all(&dir).map_err(|e| motion_diffusion::Error::io(&dir, e))?;
    let path = dir.join("seq.motn");
    save_motion_file(&path, first)?;
    let back = load_motion_file(&path)?;
    println!(
        "MOTN round trip max error {:.1e} (stored as f32)",
        back.frames().max_abs_diff(first.frames())
    );

    let windows = window_dataset(&seqs, 25, 50, 10)?;
    println!("{} windows of 25 + 50 frames", windows.len());
    let groups = multimodal_group(&windows, 0.5)?;
    let sizes: Vec<usize> = groups.iter().map(|g| g.members.len()).collect();
    println!("multimodal group sizes at tau 0.5: {sizes:?}");
    Ok(())
}
