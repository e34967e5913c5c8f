fn main() {
    std::process::exit(gba_cli::run(std::env::args_os()));
}
