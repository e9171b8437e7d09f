fn main() {
    std::process::exit(maeforge::cli::run(std::env::args_os()));
}
