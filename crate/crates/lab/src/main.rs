fn main() {
    std::process::exit(ecc_lab::cli::run(std::env::args_os()));
}
