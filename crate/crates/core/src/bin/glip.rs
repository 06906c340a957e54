fn main() {
    std::process::exit(glip::cli::run_from(std::env::args_os()));
}
