fn main() {
    std::process::exit(certreach::cli::run(std::env::args_os()));
}
