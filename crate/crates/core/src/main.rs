fn main() -> std::process::ExitCode {
    xshot::pipeline::cli::main()
}
