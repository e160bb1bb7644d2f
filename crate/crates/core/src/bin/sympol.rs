fn main() {
    std::process::exit(sympol::cli::run(std::env::args_os()));
}
