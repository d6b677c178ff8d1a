fn main() {
    std::process::exit(aru_core::cli::run());
}
