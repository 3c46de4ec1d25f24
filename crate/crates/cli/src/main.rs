fn main() {
    std::process::exit(polyfeat_cli::run(std::env::args_os()));
}
