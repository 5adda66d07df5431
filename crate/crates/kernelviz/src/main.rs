use std::process::ExitCode;

fn main() -> ExitCode {
    kernelviz::cli::run(std::env::args_os())
}
