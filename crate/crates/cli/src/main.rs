fn main() -> std::process::ExitCode {
    dss_cli::run(std::env::args_os())
}
