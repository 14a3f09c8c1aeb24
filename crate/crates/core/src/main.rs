fn main() {
    std::process::exit(tabdpt::cli::main_with_args(std::env::args_os()));
}
