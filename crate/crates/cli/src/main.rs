fn main() {
    std::process::exit(nlhj_cli::run(std::env::args_os()));
}
