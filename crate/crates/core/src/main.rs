fn main() {
    std::process::exit(fednas::cli::run_command(std::env::args().collect()));
}
