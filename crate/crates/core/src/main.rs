fn main() {
    std::process::exit(hdsp::cli::main_with_args(std::env::args_os()));
}
