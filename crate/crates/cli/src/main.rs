fn main() {
    std::process::exit(sindy_cli::run(std::env::args_os()));
}
