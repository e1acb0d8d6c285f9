fn main() {
    std::process::exit(facetloop::cli::run(std::env::args_os()));
}
