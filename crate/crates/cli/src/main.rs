fn main() {
    std::process::exit(qpie_cli::run(std::env::args_os()));
}
