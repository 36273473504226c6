fn main() {
    std::process::exit(fgpvae::cli::run(std::env::args_os()));
}
