fn main() {
    std::process::exit(shm_denoise_cli::run(std::env::args_os()));
}
