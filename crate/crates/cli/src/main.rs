fn main() {
    std::process::exit(spinboson_cli::run(std::env::args_os()));
}
