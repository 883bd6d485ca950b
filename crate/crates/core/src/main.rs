fn main() {
    std::process::exit(burstfuse::cli::run_cli(std::env::args_os()));
}
