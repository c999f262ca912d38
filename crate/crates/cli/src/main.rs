fn main() {
    std::process::exit(sips_cli::run(std::env::args_os()));
}
