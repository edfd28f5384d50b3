fn main() {
    std::process::exit(halluguard::cli::run(std::env::args_os()));
}
