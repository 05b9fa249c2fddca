fn main() -> std::process::ExitCode {
    icssm::cli::main_with_args(std::env::args_os())
}
