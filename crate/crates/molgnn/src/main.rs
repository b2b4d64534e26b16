fn main() {
    std::process::exit(molgnn::cli::run(std::env::args().skip(1)));
}
