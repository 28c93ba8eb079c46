fn main() {
    std::process::exit(rbqp::cli::run(std::env::args_os()));
}
