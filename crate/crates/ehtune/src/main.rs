fn main() {
    std::process::exit(ehtune::cli::run());
}
