fn main() -> std::process::ExitCode {
    berngrad_cli::main_with_args(std::env::args_os())
}
