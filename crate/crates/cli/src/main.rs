fn main() -> std::process::ExitCode {
    latent_depth_cli::run(std::env::args_os())
}
