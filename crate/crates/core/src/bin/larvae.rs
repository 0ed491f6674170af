fn main() {
    std::process::exit(larvae::cli::main_with(std::env::args_os()));
}
