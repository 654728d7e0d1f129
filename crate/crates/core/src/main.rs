fn main() {
    std::process::exit(spline_cfr::cli::main_with_args(std::env::args_os()));
}
