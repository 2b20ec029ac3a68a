use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(rjnet_cli::run(std::env::args_os()))
}
