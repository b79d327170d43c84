fn main() -> std::process::ExitCode {
    svam::cli::main()
}
