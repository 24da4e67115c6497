fn main() {
    std::process::exit(prunelab::cli::run(std::env::args_os()));
}
