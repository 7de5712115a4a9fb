use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(engage::cli::stdout_main())
}
