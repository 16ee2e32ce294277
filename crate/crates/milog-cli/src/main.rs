use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let result = milog_cli::run(&args);
    println!("{}", result.to_json());
    ExitCode::from(result.exit_code)
}
