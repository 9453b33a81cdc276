fn main() {
    std::process::exit(skelfuse_cli::run(std::env::args_os()));
}
