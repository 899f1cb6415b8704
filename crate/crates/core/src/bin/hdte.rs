fn main() {
    std::process::exit(hdte::cli::run(std::env::args_os()));
}
