fn main() {
    std::process::exit(errornet::cli::main_with(std::env::args()));
}
