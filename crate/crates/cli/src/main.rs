fn main() {
    std::process::exit(oppaths_cli::run(std::env::args()));
}
