fn main() {
    std::process::exit(agentft::cli::run(std::env::args()));
}
