fn main() -> std::process::ExitCode {
    jetflow::cli::main()
}
