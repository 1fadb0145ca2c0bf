fn main() {
    std::process::exit(coda::cli::run(std::env::args_os()));
}
