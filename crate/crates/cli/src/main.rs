use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(surgskill_cli::run(std::env::args_os()))
}
