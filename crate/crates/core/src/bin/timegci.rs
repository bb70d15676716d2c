fn main() {
    std::process::exit(timegci::cli::main_with_args(std::env::args_os()));
}
