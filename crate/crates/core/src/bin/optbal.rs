fn main() {
    std::process::exit(optbal::cli::run(std::env::args_os()));
}
