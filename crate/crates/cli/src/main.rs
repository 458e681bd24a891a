fn main() {
    std::process::exit(celltrack_cli::run(std::env::args_os()));
}
