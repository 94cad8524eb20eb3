fn main() -> std::process::ExitCode {
    bayes_fusion::cli::main_with_args(std::env::args_os())
}
