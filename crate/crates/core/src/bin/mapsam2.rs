fn main() {
    std::process::exit(mapsam2::cli::main_with_args(std::env::args_os()));
}
