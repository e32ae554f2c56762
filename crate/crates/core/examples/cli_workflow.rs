//! Runs every subcommand of the command-line tool in-process on a tiny
//! configuration inside a scratch directory.

use motion_diffusion::cli;

fn main() {
    let dir = std::env::temp_dir().join("motion-diffusion-cli");
    std::fs::create_dir_all(&dir).expect("scratch directory");
    std::env::set_current_dir(&dir).expect("enter scratch directory");
    std::fs::write(
        "tiny.cfg",
        "joints = 3\nobs_frames = 5\nfuture_frames = 15\nstride = 5\nsynth_sequences = 6\n\
         synth_frames = 60\nlayers = 2\nhidden = 32\ncoeff_rows = 8\nsteps = 50\nepochs = 200\ndecay_every = 50\n\
         batch = 16\nsamples_per_epoch = 0\nlr = 0.001\nddim_steps = 10\nk = 5\n",
    )
    .expect("write config");

    let steps: [&[&str]; 6] = [
        &["synth-data", "-c", "tiny.cfg"],
        &[
            "synth-data",
            "-c",
            "tiny.cfg",
            "--out-dir",
            "data/test",
            "--seed",
            "1000",
        ],
        &["train", "-c", "tiny.cfg"],
        &[
            "sample",
            "-c",
            "tiny.cfg",
            "--obs",
            "data/test/seq_0000.motn",
            "--out-prefix",
            "out/pred",
        ],
        &["eval", "-c", "tiny.cfg"],
        &[
            "plot",
            "-c",
            "tiny.cfg",
            "-o",
            "out/strip.svg",
            "data/test/seq_0000.motn",
            "out/pred_0.motn",
            "out/pred_1.motn",
        ],
    ];
    for args in steps {
        let code = cli::run(std::iter::once("motion-diffusion").chain(args.iter().copied()));
        println!("{:<10} exit {code}", args[0]);
        if code != 0 {
            std::process::exit(code);
        }
    }
    println!("artifacts in {}", dir.display());
}
