fn main() {
    std::process::exit(condid::cli::run());
}
