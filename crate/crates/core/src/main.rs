fn main() {
    std::process::exit(scoresep::cli::run());
}
