fn main() -> std::process::ExitCode {
    fedlin::cli::main_with_args(std::env::args_os())
}
