fn main() {
    std::process::exit(heteromorpheus::cli::run(std::env::args_os()));
}
