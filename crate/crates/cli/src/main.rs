fn main() {
    std::process::exit(masksplitter_cli::run_cli(std::env::args_os()));
}
