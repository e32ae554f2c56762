fn main() {
    std::process::exit(motion_diffusion::cli::run(std::env::args_os()));
}
