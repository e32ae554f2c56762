//! Scores hand-made predictions against a ground truth with every metric
//! and reduction strategy, then prints the report in its file format.

use motion_diffusion::metrics::{MetricReport, PredictionSet};
use motion_diffusion::tensor::Tensor;

fn line(frames: usize, slope: f64) -> Tensor {
    let data = (0..frames)
        .flat_map(|t| [slope * t as f64, 0.0, 1.0])
        .collect();
    Tensor::new([frames, 3], data).expect("frames × 3")
}

fn main() -> motion_diffusion::Result<()> {
    let truth = line(10, 0.1);
    let samples = vec![line(10, 0.0), line(10, 0.08), line(10, 0.2), line(10, -0.1)];
    let other_future = line(10, 0.2);
    let set = PredictionSet::new(samples, truth.clone(), vec![truth, other_future])?;
    let report = MetricReport::of_set(&set)?;
    print!("{}", report.to_text());
    println!("best-of-{} ADE {:.4}", set.k(), report.ade.best);
    Ok(())
}
