fn main() {
    std::process::exit(noklab::cli::main_with_args(std::env::args_os()));
}
