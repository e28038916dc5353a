fn main() {
    std::process::exit(mmqr_cli::run(std::env::args_os()));
}
