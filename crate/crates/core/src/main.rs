fn main() {
    std::process::exit(taylorshift::cli::run(std::env::args_os()));
}
