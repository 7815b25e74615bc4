fn main() {
    std::process::exit(adia::cli::main_with_args(std::env::args_os()));
}
