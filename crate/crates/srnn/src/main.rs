fn main() {
    std::process::exit(srnn::cli::run(std::env::args()));
}
