fn main() {
    std::process::exit(gmsp::cli::run(std::env::args_os()));
}
