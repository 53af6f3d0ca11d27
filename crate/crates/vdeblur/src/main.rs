use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(vdeblur::cli::parse_and_dispatch(std::env::args_os()))
}
