fn main() {
    std::process::exit(kgabduce_cli::cli::main_with_stdio());
}
