use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(wolff_core::cli::main_with(std::env::args_os()))
}
