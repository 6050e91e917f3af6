use std::process::ExitCode;

fn main() -> ExitCode {
    hiersphere::cli::run()
}
