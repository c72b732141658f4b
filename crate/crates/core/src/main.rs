fn main() {
    std::process::exit(acvae::cli::run(std::env::args_os()));
}
