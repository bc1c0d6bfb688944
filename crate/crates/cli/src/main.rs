fn main() {
    std::process::exit(mvc_cli::run(std::env::args_os()));
}
