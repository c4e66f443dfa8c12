fn main() {
    std::process::exit(gte::cli::main_with_args(std::env::args_os()));
}
