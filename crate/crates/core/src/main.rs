fn main() {
    std::process::exit(cmdt::cli::run(std::env::args_os()));
}
