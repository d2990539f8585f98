fn main() {
    std::process::exit(ivgan::cli::run_from_args(std::env::args_os()));
}
