fn main() {
    std::process::exit(xcov_cli::run(std::env::args_os()));
}
