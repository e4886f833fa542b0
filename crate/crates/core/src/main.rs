fn main() {
    std::process::exit(pseudotherm::cli::main_with_args(std::env::args_os()));
}
