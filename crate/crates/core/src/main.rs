use std::process::ExitCode;

fn main() -> ExitCode {
    ame_core::cli::run(std::env::args_os())
}
