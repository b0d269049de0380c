fn main() -> std::process::ExitCode {
    cineflow::cli::run()
}
