use std::process::ExitCode;

fn main() -> ExitCode {
    simflock::demo::serve_stdio(simflock::demo::lander_handler)
}
