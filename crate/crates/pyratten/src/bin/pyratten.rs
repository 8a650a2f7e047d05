fn main() {
    std::process::exit(pyratten::cli::run(std::env::args_os()));
}
