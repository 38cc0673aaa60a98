fn main() {
    std::process::exit(solo::cli::run(std::env::args_os()));
}
