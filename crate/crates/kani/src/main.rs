fn main() {
    std::process::exit(kani::cli::run(std::env::args_os()));
}
