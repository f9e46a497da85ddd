fn main() {
    std::process::exit(ithp::cli::run_cli(std::env::args_os()));
}
