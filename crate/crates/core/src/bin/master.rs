fn main() -> std::process::ExitCode {
    master_core::cli::main_with_args(std::env::args_os())
}
