fn main() {
    std::process::exit(simflock::cli::run_cli(std::env::args_os()));
}
