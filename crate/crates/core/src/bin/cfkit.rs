use std::process::ExitCode;

fn main() -> ExitCode {
    cfkit::cli::main_with(std::env::args_os())
}
