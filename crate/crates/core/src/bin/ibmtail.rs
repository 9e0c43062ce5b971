fn main() {
    std::process::exit(ibmtail::cli::run(std::env::args_os()));
}
