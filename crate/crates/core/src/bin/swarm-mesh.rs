fn main() -> std::process::ExitCode {
    swarm_mesh::cli::main_with_args(std::env::args_os().collect())
}
