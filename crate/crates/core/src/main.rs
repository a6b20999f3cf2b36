fn main() {
    std::process::exit(jdgen::cli::run_from_args(std::env::args_os()));
}
