use std::process::ExitCode;

fn main() -> ExitCode {
    panelfe::cli::run(std::env::args_os())
}
