fn main() {
    std::process::exit(optswitch::cli::run(std::env::args_os()));
}
