fn main() {
    std::process::exit(attnfid_cli::run_cli(std::env::args_os()));
}
