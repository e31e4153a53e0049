fn main() {
    std::process::exit(gpbec::cli::run(std::env::args_os()));
}
