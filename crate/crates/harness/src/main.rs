fn main() {
    std::process::exit(liewalk_cli::run(std::env::args_os()));
}
