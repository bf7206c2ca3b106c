fn main() {
    std::process::exit(nerflens_cli::run(std::env::args_os()));
}
