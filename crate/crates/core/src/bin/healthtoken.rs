fn main() {
    std::process::exit(healthtoken::cli::main_with_std_io());
}
