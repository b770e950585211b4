fn main() {
    std::process::exit(qtransport::cli::main_with_args(std::env::args_os()));
}
