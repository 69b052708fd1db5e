fn main() -> std::process::ExitCode {
    radialrouter_cli::run(std::env::args_os())
}
