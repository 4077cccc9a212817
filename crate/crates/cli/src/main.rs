use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FILIPPOV_LOG", "warn")).init();
    let code = filippov_cli::run_command(std::env::args_os().skip(1));
    ExitCode::from(code as u8)
}
