fn main() -> std::process::ExitCode {
    episode_forge::cli::main()
}
