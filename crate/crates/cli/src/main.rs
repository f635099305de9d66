fn main() {
    std::process::exit(densigraph_cli::run(std::env::args_os()));
}
