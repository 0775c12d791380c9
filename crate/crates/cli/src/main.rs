use std::process::ExitCode;

fn main() -> ExitCode {
    let code = pmace_cli::commands::run(std::env::args_os());
    ExitCode::from(code as u8)
}
